#include "mobility/private_agg.hpp"

#include "mobility/error.hpp"
#include "mobility/hash.hpp"
#include "mobility/rng.hpp"

namespace mobility {

CryptoRng::CryptoRng(std::uint64_t seed) : state_(gmp_randinit_mt) {
  mpz_class s;
  mpz_import(s.get_mpz_t(), 1, 1, sizeof seed, 0, 0, &seed);
  state_.seed(s);
}

mpz_class CryptoRng::bits(unsigned count) { return state_.get_z_bits(count); }

mpz_class CryptoRng::below(const mpz_class& bound) { return state_.get_z_range(bound); }

namespace {

mpz_class random_prime(unsigned bits, CryptoRng& rng) {
  mpz_class candidate = rng.bits(bits);
  mpz_setbit(candidate.get_mpz_t(), bits - 1);
  mpz_setbit(candidate.get_mpz_t(), bits - 2);  // keeps p * q at full length
  mpz_class p;
  mpz_nextprime(p.get_mpz_t(), candidate.get_mpz_t());
  return p;
}

}  // namespace

Keypair keygen(unsigned bits, CryptoRng& rng, int attempts) {
  if (bits < 64 || bits % 2) throw Error(Errc::InvalidScenario, "key length must be an even number of bits >= 64");
  for (int a = 0; a < attempts; ++a) {
    const mpz_class p = random_prime(bits / 2, rng), q = random_prime(bits / 2, rng);
    if (p == q) continue;
    const mpz_class n = p * q;
    if (mpz_sizeinbase(n.get_mpz_t(), 2) != bits) continue;
    const mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1) continue;
    Keypair k;
    k.pub.n = n;
    k.pub.n_squared = n * n;
    k.pub.g = n + 1;
    k.pub.bits = bits;
    k.pub.key_id = hex64(fnv1a(n.get_str(16)));
    mpz_lcm(k.priv.lambda.get_mpz_t(), mpz_class(p - 1).get_mpz_t(), mpz_class(q - 1).get_mpz_t());
    // With g = n + 1, L(g^lambda mod n^2) = lambda mod n.
    if (mpz_invert(k.priv.mu.get_mpz_t(), k.priv.lambda.get_mpz_t(), n.get_mpz_t()) == 0) continue;
    return k;
  }
  throw Error(Errc::PrimeGenerationFailed, "no valid prime pair after " + std::to_string(attempts) + " attempts");
}

Ciphertext encrypt(const mpz_class& m, const PublicKey& pub, CryptoRng& rng) {
  if (m < 0 || m >= pub.n) throw Error(Errc::PlaintextOutOfRange, "plaintext must lie in [0, n)");
  mpz_class r, gcd;
  do {
    r = rng.below(pub.n);
    mpz_gcd(gcd.get_mpz_t(), r.get_mpz_t(), pub.n.get_mpz_t());
  } while (r == 0 || gcd != 1);
  mpz_class rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pub.n.get_mpz_t(), pub.n_squared.get_mpz_t());
  // (n + 1)^m = 1 + m n (mod n^2).
  mpz_class c = (1 + m * pub.n) * rn;
  mpz_mod(c.get_mpz_t(), c.get_mpz_t(), pub.n_squared.get_mpz_t());
  return {c, pub.id()};
}

mpz_class decrypt(const Ciphertext& c, const Keypair& key) {
  if (c.key_id != key.pub.id()) throw Error(Errc::KeyMismatch, "ciphertext was made under another key");
  if (c.value <= 0 || c.value >= key.pub.n_squared) throw Error(Errc::PlaintextOutOfRange, "ciphertext outside Z_{n^2}");
  mpz_class u;
  mpz_powm(u.get_mpz_t(), c.value.get_mpz_t(), key.priv.lambda.get_mpz_t(), key.pub.n_squared.get_mpz_t());
  mpz_class m = (u - 1) / key.pub.n * key.priv.mu;
  mpz_mod(m.get_mpz_t(), m.get_mpz_t(), key.pub.n.get_mpz_t());
  return m;
}

Ciphertext homomorphic_add(const Ciphertext& a, const Ciphertext& b, const PublicKey& pub) {
  const std::string& id = pub.id();
  if (a.key_id != id || b.key_id != id) throw Error(Errc::KeyMismatch, "ciphertexts under different keys");
  mpz_class c = a.value * b.value;
  mpz_mod(c.get_mpz_t(), c.get_mpz_t(), pub.n_squared.get_mpz_t());
  return {c, id};
}

std::string CipherMatrix::digest() const {
  std::uint64_t h = fnv1a(std::to_string(edges) + "x" + std::to_string(steps));
  for (const auto& c : cells) h = fnv1a(c.value.get_str(16) + ";", h);
  return hex64(h);
}

RingInitiator::RingInitiator(int vehicle, Keypair key, std::uint64_t seed)
    : vehicle_(vehicle), key_(std::move(key)), rng_(seed) {}

RingMessage RingInitiator::start(int edges, int steps, int next) {
  if (phase_ != Phase::idle) throw Error(Errc::ComputeError, "ring already started");
  RingMessage m;
  m.hop = 0;
  m.from = vehicle_;
  m.to = next;
  m.pub = key_.pub;
  m.matrix.edges = edges;
  m.matrix.steps = steps;
  m.matrix.cells.reserve(static_cast<std::size_t>(edges) * steps);
  for (int k = 0; k < edges * steps; ++k) m.matrix.cells.push_back(encrypt(0, key_.pub, rng_));
  phase_ = Phase::waiting;
  return m;
}

Eigen::ArrayXXi RingInitiator::finish(const RingMessage& last) {
  if (phase_ != Phase::waiting) throw Error(Errc::ComputeError, "no ring pass in flight");
  if (last.to != vehicle_) throw Error(Errc::ComputeError, "message addressed to another vehicle");
  if (last.pub.id() != key_.pub.id()) throw Error(Errc::KeyMismatch, "returned matrix uses another key");
  const auto& x = last.matrix;
  Eigen::ArrayXXi zeta(x.steps, x.edges);
  for (int e = 0; e < x.edges; ++e)
    for (int t = 0; t < x.steps; ++t) {
      zeta(t, e) = static_cast<int>(decrypt(x.at(e, t), key_).get_si());
      ++decryptions_;
    }
  phase_ = Phase::done;
  return zeta;
}

RingRelay::RingRelay(int vehicle, std::uint64_t seed) : vehicle_(vehicle), rng_(seed) {}

RingMessage RingRelay::process(const RingMessage& in, const SchedulingGame& game, int delay, int next) {
  if (in.to != vehicle_) throw Error(Errc::ComputeError, "message addressed to another vehicle");
  if (in.matrix.edges != static_cast<int>(game.graph.edges.size()) || in.matrix.steps != game.horizon)
    throw Error(Errc::DimensionMismatch, "cipher matrix does not match the graph and horizon");
  // Own indicator, computed locally and never sent in the clear.
  Eigen::ArrayXXi own = Eigen::ArrayXXi::Zero(game.horizon, in.matrix.edges);
  const auto& v = game.vehicles[static_cast<std::size_t>(vehicle_)];
  for (std::size_t k = 0; k < v.walk.size(); ++k) {
    const int t = v.start + static_cast<int>(k) + delay;
    if (t >= 0 && t < game.horizon) own(t, v.walk[k]) = 1;
  }
  RingMessage out;
  out.hop = in.hop + 1;
  out.from = vehicle_;
  out.to = next;
  out.pub = in.pub;
  out.matrix.edges = in.matrix.edges;
  out.matrix.steps = in.matrix.steps;
  out.matrix.cells.reserve(in.matrix.cells.size());
  for (int e = 0; e < in.matrix.edges; ++e)
    for (int t = 0; t < in.matrix.steps; ++t)
      out.matrix.cells.push_back(homomorphic_add(in.matrix.at(e, t), encrypt(own(t, e), in.pub, rng_), in.pub));
  return out;
}

namespace {

std::uint64_t party_seed(std::uint64_t seed, int vehicle) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(vehicle + 1));
}

}  // namespace

AggregateResult chain_aggregate(const SchedulingGame& game, const Delays& tau, const std::vector<int>& order,
                                const Keypair& key, std::uint64_t seed, bool keep_messages) {
  game.check_delays(tau);
  if (order.size() < 2) throw Error(Errc::InvalidScenario, "the ring needs at least two vehicles");
  std::vector<bool> seen(static_cast<std::size_t>(game.size()), false);
  for (int v : order) {
    if (v < 0 || v >= game.size() || seen[static_cast<std::size_t>(v)])
      throw Error(Errc::InvalidScenario, "ring order must list distinct vehicles");
    seen[static_cast<std::size_t>(v)] = true;
  }
  AggregateResult out;
  const int E = static_cast<int>(game.graph.edges.size());
  const std::size_t hops = order.size();
  RingInitiator first(order[0], key, party_seed(seed, order[0]));
  RingMessage msg = first.start(E, game.horizon, order[1]);
  auto log = [&](const RingMessage& m) {
    out.transcript.push_back({m.hop, m.from, m.to, m.matrix.digest(), m.matrix.cells.size()});
    if (keep_messages) out.messages.push_back(m.matrix);
  };
  log(msg);
  for (std::size_t k = 1; k < hops; ++k) {
    const int v = order[k];
    RingRelay relay(v, party_seed(seed, v));
    msg = relay.process(msg, game, tau[static_cast<std::size_t>(v)], order[(k + 1) % hops]);
    log(msg);
  }
  out.zeta = first.finish(msg);
  out.decrypting_party = order[0];
  out.decryptions = first.decryptions();
  return out;
}

double private_g(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i, int tau_prime) {
  return price_from_counts(game, zeta, i, tau_prime);
}

PrivateCounts::PrivateCounts(const SchedulingGame& game, unsigned bits, std::uint64_t seed) : game_(game), seed_(seed) {
  for (int v = 0; v < game.size(); ++v) {
    CryptoRng rng(party_seed(seed, 1000000 + v));
    keys_.push_back(keygen(bits, rng));
  }
}

CountSource PrivateCounts::source() {
  return [this](const Delays& tau, int i) {
    std::vector<int> order{i};
    for (int v = 0; v < game_.size(); ++v)
      if (v != i) order.push_back(v);
    const auto result = chain_aggregate(game_, tau, order, keys_[static_cast<std::size_t>(i)],
                                        splitmix64(seed_ + static_cast<std::uint64_t>(passes_)));
    ++passes_;
    return result.zeta;
  };
}

}  // namespace mobility

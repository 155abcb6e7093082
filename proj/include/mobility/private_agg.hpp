#pragma once

#include "mobility/scheduler.hpp"

#include <Eigen/Core>
#include <gmpxx.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mobility {

/// Seeded GMP random state (Mersenne twister); deterministic test keys and
/// encryption randomness. Not a cryptographic source.
class CryptoRng {
 public:
  explicit CryptoRng(std::uint64_t seed);
  mpz_class bits(unsigned count);
  /// Uniform in [0, bound).
  mpz_class below(const mpz_class& bound);

 private:
  gmp_randclass state_;
};

struct PublicKey {
  mpz_class n, n_squared, g;
  unsigned bits = 0;
  /// Short identifier derived from n, set by keygen.
  std::string key_id;
  const std::string& id() const { return key_id; }
};

struct PrivateKey {
  mpz_class lambda, mu;
};

/// Paillier keypair with generator n + 1.
struct Keypair {
  PublicKey pub;
  PrivateKey priv;
};

struct Ciphertext {
  mpz_class value;
  std::string key_id;
};

/// Throws PrimeGenerationFailed after `attempts` unsuccessful draws.
Keypair keygen(unsigned bits, CryptoRng& rng, int attempts = 100);

/// Throws PlaintextOutOfRange unless 0 <= m < n. Fresh randomness per call.
Ciphertext encrypt(const mpz_class& m, const PublicKey& pub, CryptoRng& rng);
mpz_class decrypt(const Ciphertext& c, const Keypair& key);
/// Decrypts to (m1 + m2) mod n; throws KeyMismatch for foreign ciphertexts.
Ciphertext homomorphic_add(const Ciphertext& a, const Ciphertext& b, const PublicKey& pub);

/// |E| x |T| ciphertexts; row sigma(e) = edge index e.
struct CipherMatrix {
  int edges = 0, steps = 0;
  std::vector<Ciphertext> cells;  // index e * steps + t
  const Ciphertext& at(int e, int t) const { return cells[static_cast<std::size_t>(e) * steps + t]; }
  std::string digest() const;
};

/// One hop of the ring: only public material travels.
struct RingMessage {
  int hop = 0;
  int from = 0, to = 0;
  PublicKey pub;
  CipherMatrix matrix;
};

struct TranscriptEntry {
  int hop = 0;
  int from = 0, to = 0;
  std::string digest;
  std::size_t ciphertexts = 0;
};

/// The querying vehicle: creates the all-E(0) matrix, receives the last hop
/// and is the only party holding a private key.
class RingInitiator {
 public:
  RingInitiator(int vehicle, Keypair key, std::uint64_t seed);
  RingMessage start(int edges, int steps, int next);
  /// Decrypts the returned matrix into zeta (steps x edges).
  Eigen::ArrayXXi finish(const RingMessage& last);
  int decryptions() const { return decryptions_; }
  const PublicKey& public_key() const { return key_.pub; }

 private:
  enum class Phase { idle, waiting, done } phase_ = Phase::idle;
  int vehicle_;
  Keypair key_;
  CryptoRng rng_;
  int decryptions_ = 0;
};

/// Any other vehicle: adds encryptions of its own occupancy indicators.
class RingRelay {
 public:
  RingRelay(int vehicle, std::uint64_t seed);
  RingMessage process(const RingMessage& in, const SchedulingGame& game, int delay, int next);

 private:
  int vehicle_;
  CryptoRng rng_;
};

struct AggregateResult {
  Eigen::ArrayXXi zeta;  // steps x edges, querying vehicle excluded
  std::vector<TranscriptEntry> transcript;
  int decrypting_party = -1;
  int decryptions = 0;
  /// Ciphertext values of every message, kept only when requested.
  std::vector<CipherMatrix> messages;
};

/// Ring pass over `order` (first entry is the querying vehicle, holding
/// `key`). Needs at least two vehicles.
AggregateResult chain_aggregate(const SchedulingGame& game, const Delays& tau, const std::vector<int>& order,
                                const Keypair& key, std::uint64_t seed, bool keep_messages = false);

/// g evaluated by the querying vehicle from the decrypted zeta.
double private_g(const SchedulingGame& game, const Eigen::ArrayXXi& zeta, int i, int tau_prime);

/// Count source for log-linear learning that runs one encrypted ring pass
/// per update; every vehicle has its own keypair and randomness stream.
class PrivateCounts {
 public:
  PrivateCounts(const SchedulingGame& game, unsigned bits, std::uint64_t seed);
  CountSource source();
  int passes() const { return passes_; }

 private:
  const SchedulingGame& game_;
  std::vector<Keypair> keys_;
  std::uint64_t seed_;
  int passes_ = 0;
};

}  // namespace mobility

#include "mobility/error.hpp"
#include "mobility/private_agg.hpp"

#include <doctest.h>

#include <set>

using namespace mobility;

namespace {

const Keypair& test_key() {
  static const Keypair key = [] {
    CryptoRng rng(42);
    return keygen(256, rng);
  }();
  return key;
}

SchedulingGame small_game() {
  SchedulingGame game;
  game.graph.hubs = {"A", "B", "C"};
  game.graph.edges = {{0, 1, 1.0, 2}, {1, 2, 0.5, 1}};
  game.horizon = 9;
  game.vehicles = {VehicleAssignment::from_hubs(game.graph, {0, 1, 2}, 0, 0, 2),
                   VehicleAssignment::from_hubs(game.graph, {0, 1, 2}, 1, 0, 2),
                   VehicleAssignment::from_hubs(game.graph, {1, 2}, 2, 0, 3),
                   VehicleAssignment::from_hubs(game.graph, {0, 1}, 3, 1, 2)};
  return game;
}

}  // namespace

TEST_CASE("seeded key generation") {
  CryptoRng a(7), b(7), c(8);
  const auto ka = keygen(256, a), kb = keygen(256, b), kc = keygen(256, c);
  CHECK(ka.pub.n == kb.pub.n);
  CHECK(ka.pub.n != kc.pub.n);
  CHECK(mpz_sizeinbase(ka.pub.n.get_mpz_t(), 2) == 256);
  CHECK(ka.pub.g == ka.pub.n + 1);
  CHECK_THROWS_AS(keygen(63, a), Error);
  CHECK_THROWS_AS(keygen(256, a, 0), Error);
}

TEST_CASE("encryption round trip") {
  const auto& key = test_key();
  CryptoRng rng(1);
  CHECK(decrypt(encrypt(0, key.pub, rng), key) == 0);
  for (int i = 0; i < 1000; ++i) {
    const mpz_class m = rng.below(key.pub.n);
    CHECK(decrypt(encrypt(m, key.pub, rng), key) == m);
  }
  CHECK(decrypt(encrypt(key.pub.n - 1, key.pub, rng), key) == key.pub.n - 1);
  const auto c1 = encrypt(5, key.pub, rng), c2 = encrypt(5, key.pub, rng);
  CHECK(c1.value != c2.value);
  CHECK(decrypt(c1, key) == 5);
  CHECK(decrypt(c2, key) == 5);
  CHECK_THROWS_AS(encrypt(key.pub.n, key.pub, rng), Error);
  CHECK_THROWS_AS(encrypt(-1, key.pub, rng), Error);
}

TEST_CASE("homomorphic addition") {
  const auto& key = test_key();
  CryptoRng rng(2);
  CHECK(decrypt(homomorphic_add(encrypt(0, key.pub, rng), encrypt(0, key.pub, rng), key.pub), key) == 0);
  CHECK(decrypt(homomorphic_add(encrypt(3, key.pub, rng), encrypt(4, key.pub, rng), key.pub), key) == 7);
  Ciphertext sum = encrypt(0, key.pub, rng);
  for (int i = 0; i < 40; ++i) sum = homomorphic_add(sum, encrypt(1, key.pub, rng), key.pub);
  CHECK(decrypt(sum, key) == 40);
  CHECK(decrypt(homomorphic_add(encrypt(key.pub.n - 1, key.pub, rng), encrypt(2, key.pub, rng), key.pub), key) == 1);
  for (int i = 0; i < 500; ++i) {
    const mpz_class a = rng.below(key.pub.n), b = rng.below(key.pub.n);
    mpz_class expected = a + b;
    mpz_mod(expected.get_mpz_t(), expected.get_mpz_t(), key.pub.n.get_mpz_t());
    CHECK(decrypt(homomorphic_add(encrypt(a, key.pub, rng), encrypt(b, key.pub, rng), key.pub), key) == expected);
  }
  CryptoRng other_rng(3);
  const auto other = keygen(256, other_rng);
  CHECK_THROWS_AS(homomorphic_add(encrypt(1, key.pub, rng), encrypt(1, other.pub, rng), key.pub), Error);
  CHECK_THROWS_AS(decrypt(encrypt(1, other.pub, rng), key), Error);
}

TEST_CASE("ring with a single contributor") {
  SchedulingGame game;
  game.graph.hubs = {"A", "B"};
  game.graph.edges = {{0, 1, 1.0, 1}};
  game.horizon = 4;
  game.vehicles = {VehicleAssignment::from_hubs(game.graph, {0, 1}, 0, 0, 0),
                   VehicleAssignment::from_hubs(game.graph, {0, 1}, 2, 0, 5)};
  const auto r = chain_aggregate(game, {0, 0}, {0, 1}, test_key(), 9);
  Eigen::ArrayXXi expected = Eigen::ArrayXXi::Zero(4, 1);
  expected(2, 0) = 1;
  CHECK((r.zeta == expected).all());
  // Pushed past the horizon: nothing to count.
  const auto empty = chain_aggregate(game, {0, 5}, {0, 1}, test_key(), 9);
  CHECK((empty.zeta == 0).all());
  CHECK_THROWS_AS(chain_aggregate(game, {0, 0}, {0}, test_key(), 9), Error);
  CHECK_THROWS_AS(chain_aggregate(game, {0, 0}, {0, 0}, test_key(), 9), Error);
}

TEST_CASE("ring aggregate matches plaintext counts on the Kiruna fleet") {
  const auto game = build_sweden_scenario({3, 40, 0});
  Rng rng(5);
  Delays tau;
  for (int i = 0; i < game.size(); ++i) tau.push_back(static_cast<int>(rng.index(4)));
  std::vector<int> order;
  for (int v = 0; v < game.size(); ++v) order.push_back((v + 7) % game.size());
  const auto r = chain_aggregate(game, tau, order, test_key(), 11);
  CHECK((r.zeta == occupancy(game, tau, 7)).all());
  CHECK(r.decrypting_party == 7);
  CHECK(r.decryptions == game.horizon * static_cast<int>(game.graph.edges.size()));
  CHECK(r.transcript.size() == 40);
  CHECK(r.transcript.back().to == 7);
}

TEST_CASE("transcript carries only fresh ciphertexts") {
  const auto game = small_game();
  const Delays tau{1, 0, 2, 1};
  const auto r = chain_aggregate(game, tau, {2, 0, 1, 3}, test_key(), 4, true);
  REQUIRE(r.messages.size() == 4);
  std::set<std::string> digests;
  std::set<mpz_class> values;
  for (std::size_t h = 0; h < r.messages.size(); ++h) {
    CHECK(r.transcript[h].hop == static_cast<int>(h));
    CHECK(r.transcript[h].digest == r.messages[h].digest());
    digests.insert(r.transcript[h].digest);
    for (const auto& c : r.messages[h].cells) {
      // A plaintext 0/1 indicator would show up as a tiny value.
      CHECK(c.value > test_key().pub.n);
      values.insert(c.value);
    }
  }
  CHECK(digests.size() == 4);
  CHECK(values.size() == 4 * r.messages[0].cells.size());
  CHECK((r.zeta == occupancy(game, tau, 2)).all());
}

TEST_CASE("ring parties enforce addressing and shapes") {
  const auto game = small_game();
  RingInitiator first(0, test_key(), 1);
  auto msg = first.start(2, game.horizon, 1);
  CHECK_THROWS_AS(first.start(2, game.horizon, 1), Error);
  RingRelay wrong(2, 1);
  CHECK_THROWS_AS(wrong.process(msg, game, 0, 0), Error);
  RingRelay relay(1, 1);
  auto bad = msg;
  bad.matrix.steps = 3;
  CHECK_THROWS_AS(relay.process(bad, game, 0, 0), Error);
  const auto back = relay.process(msg, game, 0, 0);
  CHECK(first.decryptions() == 0);
  const auto zeta = first.finish(back);
  CHECK(first.decryptions() == 2 * game.horizon);
  SchedulingGame only = game;
  only.vehicles = {game.vehicles[1]};
  CHECK((zeta == occupancy(only, {0})).all());
  CHECK_THROWS_AS(first.finish(back), Error);
}

TEST_CASE("private g matches the plaintext price") {
  SchedulingGame one;
  one.graph.hubs = {"A", "B"};
  one.graph.edges = {{0, 1, 1.0, 1}};
  one.horizon = 3;
  one.vehicles = {VehicleAssignment::from_hubs(one.graph, {0, 1}, 0, 0, 0)};
  CHECK(private_g(one, Eigen::ArrayXXi::Zero(3, 1), 0, 0) == -1.0);
  one.gamma = 0.0;
  CHECK(private_g(one, Eigen::ArrayXXi::Zero(3, 1), 0, 0) == 0.0);

  const auto game = small_game();
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    Delays tau;
    for (const auto& v : game.vehicles) tau.push_back(v.tau_low + static_cast<int>(rng.index(static_cast<std::size_t>(v.window()))));
    const int i = static_cast<int>(rng.index(4));
    std::vector<int> order{i};
    for (int v = 0; v < 4; ++v)
      if (v != i) order.push_back(v);
    const auto zeta = chain_aggregate(game, tau, order, test_key(), static_cast<std::uint64_t>(trial)).zeta;
    const auto plain = price_function(game, occupancy(game, tau, i), i);
    const auto& v = game.vehicles[static_cast<std::size_t>(i)];
    for (int t = v.tau_low; t <= v.tau_high; ++t) CHECK(private_g(game, zeta, i, t) == plain[static_cast<std::size_t>(t - v.tau_low)]);
  }
}

TEST_CASE("encrypted learning reproduces the plaintext trajectory") {
  const auto game = small_game();
  PrivateCounts counts(game, 256, 99);
  const CountSource source = counts.source();
  const auto plain = run_learning(game, game.earliest(), 0.7, 60, 1234);
  const auto secret = run_learning(game, game.earliest(), 0.7, 60, 1234, {}, &source);
  CHECK(counts.passes() == 60);
  CHECK(plain.trajectory == secret.trajectory);
  CHECK(plain.costs == secret.costs);
}

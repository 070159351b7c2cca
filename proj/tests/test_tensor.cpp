#include <sstream>

#include "test_util.hpp"

using namespace idtest;

TEST_CASE("concat/split channel round trip") {
  Rng rng(1);
  Tensor a = random_tensor({2, 3, 4, 4}, rng);
  Tensor b = random_tensor({2, 5, 4, 4}, rng);
  Tensor z = concat_channels(a, b);
  CHECK(z.shape() == Shape{2, 8, 4, 4});
  Tensor ga, gb;
  split_channels(z, 3, ga, gb);
  CHECK(ga.same_values(a));
  CHECK(gb.same_values(b));
}

TEST_CASE("clamp and sign semantics") {
  Tensor t(1, 1, 1, 4);
  t[0] = 1.3;
  t[1] = -0.5;
  t[2] = -2.0;
  t[3] = 0.0;
  Tensor c = clamp(t, -1.0, 1.0);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == -0.5);
  CHECK(c[2] == -1.0);
  Tensor s = sign(t);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == -1.0);
  CHECK(s[3] == 0.0);  // sign(0) = 0
}

TEST_CASE("broadcast_batch / sum_batch are adjoint") {
  Rng rng(2);
  Tensor one = random_tensor({1, 3, 5, 5}, rng);
  Tensor y = random_tensor({4, 3, 5, 5}, rng);
  const double lhs = broadcast_batch(one, 4).dot(y);
  const double rhs = one.dot(sum_batch(y));
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("tensor binary io round trip is bit exact") {
  Rng rng(3);
  Tensor t = random_tensor({2, 3, 7, 5}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  Tensor u = read_tensor(ss);
  CHECK(u.same_values(t));
}

TEST_CASE("gather_samples picks rows") {
  Rng rng(4);
  Tensor t = random_tensor({5, 2, 3, 3}, rng);
  Tensor g = gather_samples(t, {4, 0});
  CHECK(g.shape().b == 2);
  CHECK(g.at(0, 1, 2, 2) == t.at(4, 1, 2, 2));
  CHECK(g.at(1, 0, 0, 0) == t.at(0, 0, 0, 0));
  CHECK_THROWS(gather_samples(t, {5}));
}

TEST_CASE("rng determinism and serialization") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  const std::string state = a.serialize();
  const double expect_next = [&] {
    Rng c(0);
    c.deserialize(state);
    return c.uniform();
  }();
  CHECK(a.uniform() == expect_next);
  // permutation covers 0..n-1
  Rng r(7);
  auto p = r.permutation(20);
  std::vector<bool> seen(20, false);
  for (int v : p) seen[static_cast<size_t>(v)] = true;
  for (bool s : seen) CHECK(s);
}

#include <doctest.h>

#include <set>

#include "bootrl/rng.hpp"

using namespace bootrl;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("derive_seed separates tags and indices") {
  std::set<uint64_t> seen;
  for (uint64_t i = 0; i < 1000; ++i) {
    seen.insert(derive_seed(7, "sample", i));
  }
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(7, "a") != derive_seed(7, "b"));
  CHECK(derive_seed(7, "a") != derive_seed(8, "a"));
}

TEST_CASE("uniform_int covers its range and stays inside it") {
  Rng rng(1);
  std::set<int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const int64_t v = rng.uniform_int(3, 9);
    CHECK(v >= 3);
    CHECK(v <= 9);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("uniform_real lies in [0, 1)") {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform_real();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal has roughly standard moments") {
  Rng rng(3);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}

TEST_SUITE_END();

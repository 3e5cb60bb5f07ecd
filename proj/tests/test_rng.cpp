#include <octiv/parallel.hpp>
#include <octiv/rng.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

using namespace octiv;

TEST_CASE("same stream key replays the same sequence") {
  Rng a(derive_stream(42, 7)), b(derive_stream(42, 7));
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct tags give distinct streams") {
  std::set<uint64_t> keys;
  for (uint64_t seed : {0ull, 1ull, 42ull})
    for (uint64_t t1 : {0ull, 1ull, 2ull})
      for (uint64_t t2 : {0ull, 1ull, 977ull}) keys.insert(derive_stream(seed, t1, t2));
  CHECK(keys.size() == 27);
  // Tag order matters: (a, b) and (b, a) are different streams.
  CHECK(derive_stream(5, 1, 2) != derive_stream(5, 2, 1));
}

TEST_CASE("uniform stays in [0,1) and uniform_pos in (0,1]") {
  Rng r(derive_stream(1));
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double p = r.uniform_pos();
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("uniform(lo,hi) respects its interval and rough mean") {
  Rng r(derive_stream(2));
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(-2.0, 3.0);
    REQUIRE(u >= -2.0);
    REQUIRE(u <= 3.0);
    acc += u;
  }
  CHECK_THAT(acc / n, Catch::Matchers::WithinAbs(0.5, 0.02));
}

TEST_CASE("normal has mean 0 and variance 1 within sampling error") {
  Rng r(derive_stream(3));
  const int n = 400000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  CHECK_THAT(s1 / n, Catch::Matchers::WithinAbs(0.0, 0.01));
  CHECK_THAT(s2 / n, Catch::Matchers::WithinAbs(1.0, 0.02));
}

TEST_CASE("exponential has mean 1") {
  Rng r(derive_stream(4));
  const int n = 400000;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += r.exponential();
  CHECK_THAT(acc / n, Catch::Matchers::WithinAbs(1.0, 0.01));
}

TEST_CASE("gamma(L, 1/L) has mean 1 and variance 1/L") {
  Rng r(derive_stream(5));
  const double L = 8.0;
  const int n = 400000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.gamma(L, 1.0 / L);
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n, var = s2 / n - mean * mean;
  CHECK_THAT(mean, Catch::Matchers::WithinAbs(1.0, 0.01));
  CHECK_THAT(var, Catch::Matchers::WithinAbs(1.0 / L, 0.01));
}

TEST_CASE("parallel_for visits every index exactly once") {
  for (int threads : {1, 2, 8}) {
    const size_t n = 10007;
    std::vector<std::atomic<int>> hits(n);
    parallel_for(n, threads, [&](size_t i) { hits[i].fetch_add(1); });
    for (size_t i = 0; i < n; ++i) REQUIRE(hits[i].load() == 1);
  }
}

TEST_CASE("resolve_threads maps 0 to a positive count") {
  CHECK(resolve_threads(0) >= 1);
  CHECK(resolve_threads(3) == 3);
}

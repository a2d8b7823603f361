#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <set>
#include <vector>

#include "protobag/rng.hpp"
#include "protobag/util.hpp"

using namespace protobag;

TEST_CASE("same seed gives the same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
}

TEST_CASE("streams are independent of draw order") {
  Rng s3 = Rng::stream(7, 3);
  Rng s5 = Rng::stream(7, 5);
  const auto x3 = s3.next();
  const auto x5 = s5.next();
  Rng t5 = Rng::stream(7, 5);
  Rng t3 = Rng::stream(7, 3);
  CHECK(t3.next() == x3);
  CHECK(t5.next() == x5);
}

TEST_CASE("uniform stays in [0,1) and covers the range") {
  Rng r(1);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("bounded draws respect their bounds") {
  Rng r(2);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 3000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  for (int i = 0; i < 1000; ++i) {
    const int v = r.range(-3, 3);
    CHECK(v >= -3);
    CHECK(v <= 3);
  }
}

TEST_CASE("normal has roughly standard moments") {
  Rng r(3);
  const int n = 50000;
  double s = 0.0, q = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    q += x * x;
  }
  const double mean = s / n;
  const double var = q / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("parallel_for touches every index exactly once") {
  for (int threads : {1, 2, 4}) {
    std::vector<int> hits(997, 0);
    parallel_for(997, threads, [&](int i) { hits[std::size_t(i)] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
}

TEST_CASE("resolve_threads clamps sensibly") {
  CHECK(resolve_threads(3) == 3);
  CHECK(resolve_threads(0) >= 1);
  CHECK(resolve_threads(0) <= 16);
}

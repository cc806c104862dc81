#include "doctest.h"

#include "ptcure/parallel.hpp"
#include "ptcure/random.hpp"

#include <boost/random/uniform_01.hpp>

#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

using ptcure::Philox4x64;

// Known answers: Random123 kat_vectors (philox4x64_10, zero counter and key) and
// numpy.random.Philox(counter=1, key=0) raw output.
TEST_CASE("Philox4x64-10 known answers") {
  const auto zero = Philox4x64::block({0, 0, 0, 0}, {0, 0});
  CHECK(zero[0] == 0x16554d9eca36314cULL);
  CHECK(zero[1] == 0xdb20fe9d672d0fdcULL);
  CHECK(zero[2] == 0xd7e772cee186176bULL);
  CHECK(zero[3] == 0x7e68b68aec7ba23bULL);

  const auto one = Philox4x64::block({1, 0, 0, 0}, {0, 0});
  CHECK(one[0] == 0x02f4ba6408e4d89bULL);
  CHECK(one[1] == 0x3dd62b0b9ca8c5b2ULL);
  CHECK(one[2] == 0x1c8667a55d902e79ULL);
  CHECK(one[3] == 0x907d7a052fd5b4dcULL);
}

TEST_CASE("generator walks consecutive counters") {
  Philox4x64 g(0, 0);
  const auto first = Philox4x64::block({0, 0, 0, 0}, {0, 0});
  const auto second = Philox4x64::block({1, 0, 0, 0}, {0, 0});
  for (int k = 0; k < 4; ++k) CHECK(g() == first[k]);
  for (int k = 0; k < 4; ++k) CHECK(g() == second[k]);
}

TEST_CASE("seed and stream select distinct sequences") {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    for (std::uint64_t stream = 0; stream < 8; ++stream) firsts.insert(Philox4x64(seed, stream)());
  }
  CHECK(firsts.size() == 64);
  Philox4x64 a(3, 4), b(3, 4);
  for (int k = 0; k < 100; ++k) CHECK(a() == b());
  Philox4x64 c(3, 4);
  c.discard(10);
  Philox4x64 d(3, 4);
  for (int k = 0; k < 10; ++k) d();
  CHECK(c() == d());
}

TEST_CASE("derive_seed is deterministic and label sensitive") {
  CHECK(ptcure::derive_seed(11, 0) == ptcure::derive_seed(11, 0));
  CHECK(ptcure::derive_seed(11, 0) != ptcure::derive_seed(11, 1));
  CHECK(ptcure::derive_seed(11, 0) != ptcure::derive_seed(12, 0));
}

TEST_CASE("uniform output has the right first two moments") {
  Philox4x64 g(42, 0);
  boost::random::uniform_01<double> u;
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int k = 0; k < n; ++k) {
    const double x = u(g);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(var == doctest::Approx(1.0 / 12).epsilon(0.01));
}

TEST_CASE("parallel_for fills every slot and rethrows") {
  for (unsigned threads : {1u, 3u}) {
    std::vector<int> out(100, 0);
    ptcure::parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == static_cast<int>(i * i));
    CHECK_THROWS_AS(ptcure::parallel_for(10, threads,
                                         [](std::size_t i) {
                                           if (i == 7) throw std::runtime_error("boom");
                                         }),
                    std::runtime_error);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mpt/kernels.hpp"
#include "mpt/numerics.hpp"
#include "oracles.hpp"

using namespace mpt;

TEST_CASE("biweight kernel analytic values") {
  CHECK(kern::biweight(0.0) == doctest::Approx(15.0 / 16.0).epsilon(1e-15));
  CHECK(kern::biweight(1.2) == 0.0);
  CHECK(kern::biweight(-1.0) == 0.0);
  CHECK(kern::biweight(0.3) == doctest::Approx(kern::biweight(-0.3)).epsilon(1e-15));
  for (double v = -1.5; v <= 1.5; v += 0.01) CHECK(kern::biweight(v) >= 0.0);
}

TEST_CASE("integrated kernel endpoints, symmetry, quintic value") {
  CHECK(kern::biweight_integral(-1.0) == 0.0);
  CHECK(kern::biweight_integral(1.0) == 1.0);
  CHECK(kern::biweight_integral(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  // Closed-form antiderivative at 0.5.
  double v = 0.5;
  double expect = 0.5 + (15.0 / 16.0) * (v - 2.0 * v * v * v / 3.0 +
                                         v * v * v * v * v / 5.0);
  CHECK(kern::biweight_integral(0.5) == doctest::Approx(expect).epsilon(1e-15));
  double prev = -1.0;
  for (double t = -1.2; t <= 1.2; t += 0.01) {
    double l = kern::biweight_integral(t);
    CHECK(l >= prev);
    prev = l;
  }
  // L' = K against quadrature.
  double quad = oracles::simpson([](double t) { return kern::biweight(t); },
                                 -1.0, 0.25, 2000);
  CHECK(kern::biweight_integral(0.25) == doctest::Approx(quad).epsilon(1e-10));
}

TEST_CASE("kappa constant equals 5/7 and the quadrature oracle") {
  CHECK(kern::kKappa == doctest::Approx(5.0 / 7.0).epsilon(1e-15));
  double quad = oracles::simpson(
      [](double t) {
        double k = kern::biweight(t);
        return k * k;
      },
      -1.0, 1.0, 4000);
  CHECK(std::abs(kern::kKappa - quad) < 1e-10);
  CHECK(kern::kKappa > 0.0);
}

namespace {

struct RandomWindow {
  std::vector<double> x, y, cell;
};

RandomWindow make_window(std::size_t n, int n_cells, num::RngStream& rng) {
  RandomWindow w;
  w.x.resize(n);
  w.y.resize(n);
  w.cell.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.x[i] = rng.uniform(-3.0, 3.0);
    w.y[i] = rng.normal() * 2.0 + 1.0;
    w.cell[i] = static_cast<double>(rng.next_u64() % n_cells);
  }
  return w;
}

}  // namespace

#if defined(__x86_64__) || defined(_M_X64)

TEST_CASE("scalar and AVX2 accumulations agree") {
  if (!kern::avx2_available()) {
    MESSAGE("AVX2 not available on this host; equivalence not exercised");
    return;
  }
  num::RngStream rng(2024);
  for (std::size_t n : {0ul, 1ul, 3ul, 4ul, 7ul, 64ul, 1001ul, 5000ul}) {
    for (int n_cells : {2, 6, 8}) {
      RandomWindow w = make_window(std::max<std::size_t>(n, 1), n_cells, rng);
      w.x.resize(n);
      w.y.resize(n);
      w.cell.resize(n);
      double x0 = 0.3, inv_h = 1.0 / 0.8;
      kern::CellSums a, b;
      kern::detail::accumulate_cells_scalar(w.x.data(), w.y.data(),
                                            w.cell.data(), n, x0, inv_h,
                                            n_cells, a);
      kern::detail::accumulate_cells_avx2(w.x.data(), w.y.data(),
                                          w.cell.data(), n, x0, inv_h,
                                          n_cells, b);
      for (int c = 0; c < n_cells; ++c) {
        CHECK(a.s0[c] == doctest::Approx(b.s0[c]).epsilon(1e-11));
        CHECK(a.s1[c] == doctest::Approx(b.s1[c]).epsilon(1e-11));
        CHECK(a.s2[c] == doctest::Approx(b.s2[c]).epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("scalar and AVX2 weight vectors agree") {
  if (!kern::avx2_available()) return;
  num::RngStream rng(7);
  RandomWindow w = make_window(1003, 2, rng);
  std::vector<double> ws(w.x.size()), wv(w.x.size());
  kern::detail::biweight_weights_scalar(w.x.data(), w.x.size(), -0.4, 1.25,
                                        ws.data());
  kern::detail::biweight_weights_avx2(w.x.data(), w.x.size(), -0.4, 1.25,
                                      wv.data());
  for (std::size_t i = 0; i < ws.size(); ++i) {
    CHECK(ws[i] == doctest::Approx(wv[i]).epsilon(1e-14));
  }
}

#endif  // x86_64

TEST_CASE("dispatch override") {
  kern::Backend saved = kern::active_backend();
  kern::set_backend(kern::Backend::scalar);
  CHECK(kern::active_backend() == kern::Backend::scalar);
  if (kern::avx2_available()) {
    kern::set_backend(kern::Backend::avx2);
    CHECK(kern::active_backend() == kern::Backend::avx2);
  }
  kern::set_backend(saved);
}

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "emi/kernels.hpp"
#include "emi/rng.hpp"

// Times the serial reference kernels against the dispatching (OpenMP when
// available) versions and checks they agree to the last bit.

namespace {

using clk = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm
  const auto t0 = clk::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = clk::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

void fill(emi::Rng& rng, std::vector<float>& v) {
  for (auto& x : v) x = float(rng.normal());
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; dispatch always runs serial\n");
#endif
  std::printf("%-34s %12s %12s %10s\n", "kernel", "serial ms", "dispatch ms",
              "max|diff|");

  emi::Rng rng(123);
  for (int n : {64, 128, 256, 512}) {
    std::vector<float> a(size_t(n) * n), b(size_t(n) * n);
    std::vector<float> c1(size_t(n) * n), c2(size_t(n) * n);
    fill(rng, a);
    fill(rng, b);
    const double ts = time_ms(
        [&] { emi::kern::serial::matmul(a.data(), b.data(), c1.data(), n, n, n); },
        3);
    const double td = time_ms(
        [&] { emi::kern::matmul(a.data(), b.data(), c2.data(), n, n, n); }, 3);
    char name[64];
    std::snprintf(name, sizeof name, "matmul %dx%dx%d", n, n, n);
    std::printf("%-34s %12.3f %12.3f %10.3g\n", name, ts, td,
                max_abs_diff(c1, c2));
  }

  for (int T : {300, 1200}) {
    const int din = 546, dout = 128, k = 3, dil = 4;
    std::vector<float> x(size_t(T) * din), w(size_t(dout) * din * k);
    std::vector<float> bias(size_t(dout), 0.0f);
    std::vector<float> y1(size_t(T) * dout), y2(size_t(T) * dout);
    fill(rng, x);
    fill(rng, w);
    fill(rng, bias);
    const double ts = time_ms(
        [&] {
          emi::kern::serial::conv1d_causal(x.data(), w.data(), bias.data(),
                                           y1.data(), T, din, dout, k, dil);
        },
        3);
    const double td = time_ms(
        [&] {
          emi::kern::conv1d_causal(x.data(), w.data(), bias.data(), y2.data(),
                                   T, din, dout, k, dil);
        },
        3);
    char name[64];
    std::snprintf(name, sizeof name, "conv1d T=%d %dx%d k=%d d=%d", T, din,
                  dout, k, dil);
    std::printf("%-34s %12.3f %12.3f %10.3g\n", name, ts, td,
                max_abs_diff(y1, y2));
  }
  return 0;
}

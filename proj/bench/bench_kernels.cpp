#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "qareid/kernels.hpp"
#include "qareid/ref_kernels.hpp"
#include "qareid/rng.hpp"
#include "qareid/tensor.hpp"

using namespace qareid;

namespace {

double time_best(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const double t0 = omp_get_wtime();
    fn();
    best = std::min(best, omp_get_wtime() - t0);
  }
  return best;
}

void report(const char* name, double ref_s, double par_s, double max_diff) {
  std::printf("%-22s %10.3f ms %10.3f ms %8.2fx   max |diff| %.3e\n", name, ref_s * 1e3,
              par_s * 1e3, ref_s / par_s, max_diff);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

int main() {
  Rng rng(42);
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-22s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  {
    const Tensor x = Tensor::randn({8, 16, 32, 16}, rng);
    const Tensor w = Tensor::randn({32, 16, 3, 3}, rng, 0.1);
    const Tensor b = Tensor::randn({32}, rng, 0.1);
    Tensor ref_y, par_y;
    const double tr = time_best([&] { ref_y = ref::conv2d(x, w, b, 1, 1); }, 3);
    const double tp = time_best([&] { par_y = kernels::conv2d_forward(x, w, b, 1, 1); }, 3);
    report("conv2d 3x3", tr, tp, max_abs_diff(ref_y, par_y));
  }

  {
    const int hw = 128, c = 64;
    const Tensor f1 = Tensor::randn({c, hw}, rng);
    const Tensor f2 = Tensor::randn({c, hw}, rng);
    std::vector<double> q1(hw, 1.0 / hw), q2(hw, 1.0 / hw);

    Tensor n1({hw, c}), n2({hw, c}), norms({hw});
    kernels::normalize_pixels(f1.data(), c, hw, n1.data(), norms.data());
    kernels::normalize_pixels(f2.data(), c, hw, n2.data(), norms.data());

    Tensor f1m({c, 8, 16}), f2m({c, 8, 16});
    for (int64_t i = 0; i < f1.numel(); ++i) {
      f1m[i] = f1[i];
      f2m[i] = f2[i];
    }

    Tensor ref_s1, par_s1({hw, hw});
    const double tr = time_best([&] { ref_s1 = ref::pixel_similarity(f1m, q1, f2m, q2); }, 3);
    const double tp = time_best(
        [&] { kernels::sim1_pair(n1.data(), q1.data(), n2.data(), q2.data(), hw, c, par_s1.data()); },
        3);
    report("pixel similarity", tr, tp, max_abs_diff(ref_s1, par_s1));

    Tensor ref_s2, par_s2({hw, hw});
    const double tr2 = time_best([&] { ref_s2 = ref::bidirectional_similarity(ref_s1); }, 3);
    const double tp2 = time_best(
        [&] { kernels::bidirectional_pair(par_s1.data(), hw, nullptr, nullptr, par_s2.data()); }, 3);
    report("bidirectional map", tr2, tp2, max_abs_diff(ref_s2, par_s2));

    std::vector<double> ref_v, par_v(2 * hw);
    const double tr3 = time_best([&] { ref_v = ref::bi_gmp(ref_s2); }, 5);
    const double tp3 =
        time_best([&] { kernels::bigmp_pair(par_s2.data(), hw, par_v.data(), nullptr, nullptr); }, 5);
    double dv = 0.0;
    for (int i = 0; i < 2 * hw; ++i) dv = std::max(dv, std::abs(ref_v[i] - par_v[i]));
    report("bi-gmp", tr3, tp3, dv);
  }

  {
    const int mh = 256, mw = 128, oh = 16, ow = 8;
    std::vector<uint8_t> mask(static_cast<size_t>(mh) * mw);
    for (auto& v : mask) v = rng.bernoulli(0.35) ? 1 : 0;
    std::vector<double> ref_q, par_q(static_cast<size_t>(oh) * ow);
    const double tr = time_best([&] { ref_q = ref::quality_weights(mask, mh, mw, oh, ow); }, 20);
    const double tp = time_best(
        [&] { kernels::quality_weights(mask.data(), mh, mw, oh, ow, par_q.data()); }, 20);
    double dq = 0.0;
    for (size_t i = 0; i < par_q.size(); ++i) dq = std::max(dq, std::abs(ref_q[i] - par_q[i]));
    report("quality weights", tr, tp, dq);
  }

  {
    const Tensor x = Tensor::randn({32, 64, 8, 4}, rng);
    Tensor ref_y, par_y;
    const double tr = time_best([&] { ref_y = ref::global_avg_pool(x); }, 20);
    const double tp = time_best([&] { par_y = kernels::global_avg_pool(x); }, 20);
    report("global avg pool", tr, tp, max_abs_diff(ref_y, par_y));
  }

  return 0;
}

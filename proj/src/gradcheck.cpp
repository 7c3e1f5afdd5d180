#include "hcd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hcd/rng.hpp"

namespace hcd {

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> inputs,
                           const GradCheckOptions& opt) {
  for (auto& t : inputs) t.set_requires_grad(true);

  // One reverse-mode pass; gradients are copied out before any perturbation.
  std::vector<std::vector<double>> autodiff(inputs.size());
  {
    Graph g;
    Recording rec(g);
    Tensor loss = f();
    g.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      autodiff[i] = inputs[i].has_grad()
                        ? inputs[i].grad()
                        : std::vector<double>(size_t(inputs[i].size()), 0.0);
      inputs[i].zero_grad();
    }
  }

  auto eval = [&](uint64_t* kink_hash) {
    KinkTrace trace;
    set_kink_trace(&trace);
    double v = f().item();
    set_kink_trace(nullptr);
    *kink_hash = trace.hash;
    return v;
  };

  GradCheckReport report;
  Rng rng(opt.sample_seed);
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = inputs[i];
    std::vector<int64_t> coords(size_t(x.size()));
    for (size_t c = 0; c < coords.size(); ++c) coords[c] = int64_t(c);
    if (opt.max_coords_per_input >= 0 &&
        int64_t(coords.size()) > opt.max_coords_per_input) {
      rng.shuffle(coords);
      coords.resize(size_t(opt.max_coords_per_input));
      std::sort(coords.begin(), coords.end());
    }
    for (int64_t c : coords) {
      const double orig = x.data()[c];
      uint64_t hp = 0, hm = 0;
      x.data()[c] = orig + opt.h;
      const double fp = eval(&hp);
      x.data()[c] = orig - opt.h;
      const double fm = eval(&hm);
      x.data()[c] = orig;
      if (hp != hm) {
        // The perturbation flipped some activation; the function is not
        // differentiable across this interval.
        ++report.skipped_kinks;
        continue;
      }
      const double fd = (fp - fm) / (2.0 * opt.h);
      const double ad = autodiff[i][size_t(c)];
      const double denom = std::max({std::abs(ad), std::abs(fd), opt.denom_guard});
      const double rel = std::abs(ad - fd) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = CoordReport{i, c, ad, fd, rel};
      }
    }
  }
  return report;
}

}  // namespace hcd

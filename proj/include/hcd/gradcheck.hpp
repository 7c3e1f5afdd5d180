#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hcd/tensor.hpp"

namespace hcd {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // rel = |ad - fd| / max(|ad|, |fd|, denom_guard); the guard keeps the
  // central-difference noise floor from dominating near-zero gradients.
  double denom_guard = 1e-5;
  // Per input tensor; -1 checks every coordinate.
  int64_t max_coords_per_input = -1;
  uint64_t sample_seed = 0;
};

struct CoordReport {
  size_t input = 0;
  int64_t coord = -1;
  double autodiff = 0.0;
  double finite_diff = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped_kinks = 0;
  CoordReport worst;
  bool passed(double tol) const { return checked > 0 && max_rel_err <= tol; }
};

// Compares reverse-mode gradients of f against central differences for the
// listed inputs. f must be a pure function of the inputs' current values
// and is re-evaluated with perturbed entries; coordinates whose +/-h
// evaluations land on different sides of a relu kink are skipped and
// counted, not failed.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> inputs,
                           const GradCheckOptions& opt = {});

}  // namespace hcd

#pragma once

#include <string>
#include <vector>

#include "treelm/train.hpp"

namespace treelm {

// Central finite-difference verification of every parameter gradient on a
// self-contained synthetic batch, at 64-bit, with a fourth-order stencil
// at step eps. Relative error uses |a - n| / max(|a|, |n|, 1e-4); the
// floor keeps near-zero gradients from amplifying finite-difference noise
// while leaving real defects visible.
struct GradCheckOptions {
  TrainConfig cfg;         // variant, model dimensions, tau, masking knobs
  double eps = 1e-5;       // central-difference step
  double threshold = 1e-5; // max relative error allowed
  int batch_sentences = 3;
  bool inject_error = false;  // test hook: corrupt one analytic gradient
};

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int64_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double worst_rel_err = 0.0;
  std::string worst_param;
  double threshold = 0.0;
  bool passed = false;
  int phrase_samples = 0;
  int tree_samples = 0;
};

GradCheckReport run_gradcheck(const GradCheckOptions& options);

}  // namespace treelm

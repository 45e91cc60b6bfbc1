#pragma once

// Acceptance checks. Each returns a verdict plus a one-line measurement
// summary; the driver adds timing and runtime budgets.

#include <string>

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

// 64-bit core.
namespace dbl {
Outcome dropout_oracle();
Outcome matching_oracle();
Outcome gradient_suite();
Outcome scan_equivalence();
Outcome window_mechanics();
Outcome retrieval_protocol();
Outcome frame_windows();
Outcome nifti_parser();
}  // namespace dbl

// 32-bit core, the training configuration.
namespace flt {
Outcome mae_training();
Outcome prompt_tuning();
}  // namespace flt

// Drives the command-line binary; independent of either core build.
Outcome pipeline_determinism(const std::string& cli, const std::string& work_dir);

}  // namespace acceptance

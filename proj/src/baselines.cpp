// SPDX-License-Identifier: Apache-2.0
#include "distana/baselines.hpp"

namespace distana {

const char* to_string(BaselineKind k) { return k == BaselineKind::LastFrame ? "Baseline t-1" : "Baseline zero"; }

Tensor baseline_predict(BaselineKind kind, const Tensor& frame_in) {
  if (kind == BaselineKind::LastFrame) return frame_in;
  return Tensor::zeros(frame_in.shape());
}

}  // namespace distana

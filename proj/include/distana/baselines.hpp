// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "distana/tensor.hpp"

namespace distana {

enum class BaselineKind { LastFrame, Zero };

const char* to_string(BaselineKind k);

/// LastFrame returns the input unchanged; Zero returns zeros of the same shape.
Tensor baseline_predict(BaselineKind kind, const Tensor& frame_in);

}  // namespace distana

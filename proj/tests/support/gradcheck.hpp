#pragma once

#include <cstdint>
#include <string>

#include "ttnlab/model.hpp"

namespace ttnlab::testkit {

/// Outcome of checking one random instance of a layer kind.
///
/// rel_error_32: library backward vs central differences of the library's
///   own float forward.
/// rel_error_64: library backward vs central differences of an independent
///   double-precision reference forward (the reference is also compared
///   with the library forward, see forward_mismatch).
///
/// Relative errors are norm-wise, ||a - n|| / max(||a||, ||n||), taken as the
/// worst over the layer's inputs and parameters.
struct GradCheck {
  LayerKind kind = LayerKind::relu;
  std::string instance;
  double rel_error_32 = 0.0;
  double rel_error_64 = 0.0;
  double forward_mismatch = 0.0;
};

GradCheck check_layer_gradient(LayerKind kind, std::uint64_t seed);

}  // namespace ttnlab::testkit

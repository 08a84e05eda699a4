#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "relpose/error.hpp"
#include "relpose/posegraph.hpp"

namespace relpose {

/// Per-frame appearance descriptor. Features are unit-norm, so cosine
/// similarity is a dot product.
class FrameToken {
 public:
  FrameToken() = default;

  /// Normalizes `features`. Throws DegenerateInput for a zero vector.
  FrameToken(FrameId id, std::vector<double> features) : id_(id), features_(std::move(features)) {
    double n = 0.0;
    for (double v : features_) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorKind::DegenerateInput, "token features have zero norm");
    }
    for (double& v : features_) v /= n;
  }

  FrameId id() const { return id_; }
  std::span<const double> features() const { return features_; }
  std::size_t dim() const { return features_.size(); }

  /// Same features under a different frame id.
  FrameToken relabeled(FrameId id) const {
    FrameToken t = *this;
    t.id_ = id;
    return t;
  }

 private:
  FrameId id_ = 0;
  std::vector<double> features_;
};

inline double cosine(const FrameToken& a, const FrameToken& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorKind::DegenerateInput, "token dimensions differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a.features()[i] * b.features()[i];
  return s;
}

}  // namespace relpose

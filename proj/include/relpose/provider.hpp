#pragma once

#include <optional>

#include "relpose/posegraph.hpp"
#include "relpose/token.hpp"

namespace relpose {

/// Per-frame depth summaries used to anchor a segment's scale.
struct DepthMedians {
  double predicted = 1.0;
  double metric = 1.0;
};

/// The pairwise pose head contract: for any ordered pair of frames it returns
/// a relative rotation, a translation in src's frame and two positive
/// confidences; for any frame it returns an appearance token.
class EdgeProvider {
 public:
  virtual ~EdgeProvider() = default;

  virtual PoseEdge edge(FrameId src, FrameId dst) const = 0;
  virtual FrameToken token(FrameId id) const = 0;
  virtual std::optional<DepthMedians> depth_medians(FrameId) const { return std::nullopt; }
};

}  // namespace relpose

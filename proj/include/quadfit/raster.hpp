#pragma once

#include "quadfit/camera.hpp"
#include "quadfit/image.hpp"
#include "quadfit/model.hpp"

namespace quadfit {

struct ConditionImages {
  Mask mask;       // 1 where any face covers the pixel centre
  DepthMap depth;  // nearest camera-space z, +inf where uncovered
};

/// Distance from the camera plane below which geometry is clipped away.
inline constexpr double kNearPlane = 1e-3;

/// Z-buffered triangle rasterization sampled at pixel centres (x + 0.5,
/// y + 0.5) with a top-left fill rule and perspective-correct depth. Both
/// windings are drawn. Triangles are clipped against z = kNearPlane in camera
/// space. Throws std::invalid_argument on an empty mesh or out-of-range faces.
ConditionImages rasterize(const MatrixX3dR& vertices, const MatrixX3iR& faces, const Camera& camera);

}  // namespace quadfit

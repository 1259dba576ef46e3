#pragma once

#include <Eigen/Core>
#include <optional>
#include <vector>

#include "quadfit/model.hpp"

namespace quadfit {

/// Fixed-focal pinhole camera. There is no camera rotation: all orientation
/// lives in the model's root joint. Pixel (0,0) is the top-left corner of the
/// top-left pixel and +y points down.
struct Camera {
  double focal = 1000.0;
  int width = 512;
  int height = 512;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  std::optional<Eigen::Vector2d> principal_point;  // defaults to the image centre

  Eigen::Vector2d principal() const;
  bool operator==(const Camera&) const = default;
};

/// Throws std::invalid_argument unless focal > 0 and the image is non-empty.
void check_camera(const Camera& camera);

Eigen::Matrix3d intrinsics(const Camera& camera);

inline constexpr double kMinDepth = 1e-6;

struct Projection {
  Eigen::MatrixX2d pixels;
  Eigen::VectorXd depth;     // z + T_z
  std::vector<bool> valid;   // false when the point is at or behind the camera plane
};

/// x = Pi(K (X + T)). Points with depth <= kMinDepth are flagged invalid and
/// their pixel coordinates set to NaN.
Projection project(const MatrixX3dR& points, const Camera& camera);

}  // namespace quadfit

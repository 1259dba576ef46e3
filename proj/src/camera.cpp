#include "quadfit/camera.hpp"

#include <limits>
#include <stdexcept>

namespace quadfit {

Eigen::Vector2d Camera::principal() const {
  if (principal_point) return *principal_point;
  return {0.5 * width, 0.5 * height};
}

void check_camera(const Camera& c) {
  if (!(c.focal > 0.0)) throw std::invalid_argument("camera focal must be positive");
  if (c.width <= 0 || c.height <= 0) throw std::invalid_argument("camera image size must be positive");
  if (!c.translation.allFinite()) throw std::invalid_argument("camera translation must be finite");
}

Eigen::Matrix3d intrinsics(const Camera& c) {
  check_camera(c);
  const Eigen::Vector2d pp = c.principal();
  Eigen::Matrix3d k;
  k << c.focal, 0, pp.x(), 0, c.focal, pp.y(), 0, 0, 1;
  return k;
}

Projection project(const MatrixX3dR& points, const Camera& c) {
  const Eigen::Matrix3d k = intrinsics(c);
  const Eigen::Index n = points.rows();
  Projection out;
  out.pixels.resize(n, 2);
  out.depth.resize(n);
  out.valid.assign(n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d h = k * (points.row(i).transpose() + c.translation);
    out.depth[i] = h.z();
    if (h.z() > kMinDepth) {
      out.pixels.row(i) << h.x() / h.z(), h.y() / h.z();
      out.valid[i] = true;
    } else {
      out.pixels.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

}  // namespace quadfit

#include "quadfit/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace quadfit {

namespace {

struct ScreenVertex {
  double x, y;   // pixels
  double inv_z;  // 1 / camera-space depth
};

// Edge function: positive when p lies to the right of a->b in a y-down frame,
// i.e. inside a clockwise-on-screen triangle.
double edge(const ScreenVertex& a, const ScreenVertex& b, double px, double py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// Top or left edge of a triangle with positive area under `edge`.
bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

void draw_triangle(ScreenVertex a, ScreenVertex b, ScreenVertex c, ConditionImages& out) {
  double area = edge(a, b, c.x, c.y);
  if (area == 0.0 || !std::isfinite(area)) return;
  if (area < 0.0) {
    std::swap(b, c);
    area = -area;
  }
  const int w = out.mask.width, h = out.mask.height;
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
  const bool tl_bc = top_left(b, c), tl_ca = top_left(c, a), tl_ab = top_left(a, b);
  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double w0 = edge(b, c, px, py);
      const double w1 = edge(c, a, px, py);
      const double w2 = edge(a, b, px, py);
      if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
      if ((w0 == 0.0 && !tl_bc) || (w1 == 0.0 && !tl_ca) || (w2 == 0.0 && !tl_ab)) continue;
      // 1/z is affine in screen space.
      const double inv_z = (w0 * a.inv_z + w1 * b.inv_z + w2 * c.inv_z) / area;
      const float z = static_cast<float>(1.0 / inv_z);
      out.mask.at(x, y) = 1;
      float& d = out.depth.at(x, y);
      if (z < d) d = z;
    }
  }
}

}  // namespace

ConditionImages rasterize(const MatrixX3dR& vertices, const MatrixX3iR& faces, const Camera& camera) {
  check_camera(camera);
  if (vertices.rows() == 0 || faces.rows() == 0) throw std::invalid_argument("rasterize: empty mesh");
  if (faces.minCoeff() < 0 || faces.maxCoeff() >= vertices.rows())
    throw std::invalid_argument("rasterize: face index out of range");

  ConditionImages out{Mask(camera.width, camera.height),
                      DepthMap(camera.width, camera.height, 1, std::numeric_limits<float>::infinity())};
  const Eigen::Vector2d pp = camera.principal();
  auto to_screen = [&](const Eigen::Vector3d& p) {
    return ScreenVertex{camera.focal * p.x() / p.z() + pp.x(), camera.focal * p.y() / p.z() + pp.y(), 1.0 / p.z()};
  };

  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    std::array<Eigen::Vector3d, 3> tri;
    for (int i = 0; i < 3; ++i) tri[i] = vertices.row(faces(f, i)).transpose() + camera.translation;

    // Sutherland-Hodgman against the near plane: at most 4 vertices remain.
    std::array<Eigen::Vector3d, 4> poly;
    int n = 0;
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector3d& p = tri[i];
      const Eigen::Vector3d& q = tri[(i + 1) % 3];
      const bool p_in = p.z() >= kNearPlane, q_in = q.z() >= kNearPlane;
      if (p_in) poly[n++] = p;
      if (p_in != q_in) poly[n++] = p + (q - p) * ((kNearPlane - p.z()) / (q.z() - p.z()));
    }
    if (n < 3) continue;
    const ScreenVertex s0 = to_screen(poly[0]);
    for (int i = 1; i + 1 < n; ++i) draw_triangle(s0, to_screen(poly[i]), to_screen(poly[i + 1]), out);
  }
  return out;
}

}  // namespace quadfit

#include "quadfit/toy_template.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace quadfit {

namespace {

struct TubeSpec {
  Eigen::Vector3d joint;
  int parent;
  Eigen::Vector3d start;
  Eigen::Vector3d end;
  double ra0, rb0, ra1, rb1;
};

constexpr int kBodyJoints = 24;
constexpr int kMinTailJoints = 11;

TubeSpec limb(Eigen::Vector3d joint, int parent, Eigen::Vector3d end, double r0, double r1) {
  return {joint, parent, joint, end, r0, r0, r1, r1};
}

Eigen::Vector3d mirror(Eigen::Vector3d v) {
  v.z() = -v.z();
  return v;
}

std::vector<TubeSpec> layout(int n_tail) {
  using V = Eigen::Vector3d;
  std::vector<TubeSpec> tubes;
  // Root tube spans the trunk; its joint sits at the midpoint.
  tubes.push_back({V(0, 0, 0), -1, V(-0.42, 0, 0), V(0.42, 0, 0), 0.15, 0.13, 0.15, 0.13});
  tubes.push_back({V(-0.3, 0, 0), 0, V(-0.3, 0, 0), V(-0.46, 0.02, 0), 0.14, 0.13, 0.12, 0.11});
  tubes.push_back({V(0.3, 0.02, 0), 0, V(0.3, 0.02, 0), V(0.47, 0.12, 0), 0.17, 0.13, 0.13, 0.11});
  tubes.push_back({V(0.45, 0.14, 0), 2, V(0.45, 0.14, 0), V(0.64, 0.36, 0), 0.08, 0.07, 0.07, 0.06});
  tubes.push_back({V(0.64, 0.36, 0), 3, V(0.64, 0.36, 0), V(0.88, 0.30, 0), 0.075, 0.07, 0.045, 0.04});
  tubes.push_back(limb(V(0.68, 0.30, 0), 4, V(0.85, 0.25, 0), 0.035, 0.02));
  tubes.push_back(limb(V(0.64, 0.42, 0.05), 4, V(0.62, 0.53, 0.08), 0.025, 0.01));
  tubes.push_back(limb(mirror(V(0.64, 0.42, 0.05)), 4, mirror(V(0.62, 0.53, 0.08)), 0.025, 0.01));

  auto front_leg = [&](bool left) {
    auto m = [left](V v) { return left ? v : mirror(v); };
    const int base = static_cast<int>(tubes.size());
    tubes.push_back(limb(m(V(0.33, -0.04, 0.12)), 2, m(V(0.34, -0.30, 0.12)), 0.06, 0.045));
    tubes.push_back(limb(m(V(0.34, -0.30, 0.12)), base, m(V(0.34, -0.52, 0.12)), 0.05, 0.035));
    tubes.push_back(limb(m(V(0.34, -0.52, 0.12)), base + 1, m(V(0.36, -0.63, 0.12)), 0.04, 0.03));
    tubes.push_back(limb(m(V(0.36, -0.63, 0.12)), base + 2, m(V(0.44, -0.65, 0.12)), 0.035, 0.025));
  };
  auto hind_leg = [&](bool left) {
    auto m = [left](V v) { return left ? v : mirror(v); };
    const int base = static_cast<int>(tubes.size());
    tubes.push_back(limb(m(V(-0.32, -0.02, 0.11)), 1, m(V(-0.26, -0.30, 0.11)), 0.065, 0.05));
    tubes.push_back(limb(m(V(-0.26, -0.30, 0.11)), base, m(V(-0.37, -0.50, 0.11)), 0.055, 0.04));
    tubes.push_back(limb(m(V(-0.37, -0.50, 0.11)), base + 1, m(V(-0.35, -0.63, 0.11)), 0.045, 0.03));
    tubes.push_back(limb(m(V(-0.35, -0.63, 0.11)), base + 2, m(V(-0.27, -0.65, 0.11)), 0.035, 0.025));
  };
  front_leg(true);
  front_leg(false);
  hind_leg(true);
  hind_leg(false);

  const double seg = 0.55 / n_tail;
  for (int i = 0; i < n_tail; ++i) {
    const V joint(-0.47 - seg * i, 0.06 - 0.3 * seg * i, 0);
    const V end(-0.47 - seg * (i + 1), 0.06 - 0.3 * seg * (i + 1), 0);
    const double r0 = 0.03 - 0.015 * i / n_tail;
    const double r1 = 0.03 - 0.015 * (i + 1) / n_tail;
    tubes.push_back(limb(joint, i == 0 ? 1 : kBodyJoints + i - 1, end, r0, r1));
  }
  return tubes;
}

struct Frame {
  Eigen::Vector3d axis, e1, e2;
};

Frame tube_frame(const TubeSpec& t) {
  Frame f;
  f.axis = (t.end - t.start).normalized();
  const Eigen::Vector3d ref = std::abs(f.axis.y()) > 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  f.e1 = (ref - ref.dot(f.axis) * f.axis).normalized();
  f.e2 = f.axis.cross(f.e1);
  return f;
}

enum class Site { EndCap, RingVertex };

struct KeypointSite {
  int tube;  // negative: counted from the first tail tube
  Site site;
  int ring = 0;
  Eigen::Vector3d direction = Eigen::Vector3d::Zero();
};

}  // namespace

ModelTemplate make_toy_template(const ToyConfig& cfg) {
  if (cfg.n_joints < 2) throw std::invalid_argument("make_toy_template: n_joints must be >= 2");
  if (cfg.n_beta < 0) throw std::invalid_argument("make_toy_template: n_beta must be >= 0");
  if (cfg.ring_segments < 3) throw std::invalid_argument("make_toy_template: ring_segments must be >= 3");
  if (cfg.rings_per_tube < 2) throw std::invalid_argument("make_toy_template: rings_per_tube must be >= 2");

  const int n_tail = std::max(kMinTailJoints, cfg.n_joints - kBodyJoints);
  const std::vector<TubeSpec> tubes = layout(n_tail);
  const int n_geom = static_cast<int>(tubes.size());
  const int nj = cfg.n_joints;
  const int segs = cfg.ring_segments;
  const int rings = cfg.rings_per_tube;
  const int per_tube = rings * segs + 2;
  const int nv = n_geom * per_tube;

  // Geometry joints past nj fold onto their nearest kept ancestor.
  std::vector<int> kept(n_geom);
  for (int g = 0; g < n_geom; ++g) {
    int a = g;
    while (a >= nj) a = tubes[a].parent;
    kept[g] = a;
  }

  ModelTemplate t;
  t.rest_vertices.resize(nv, 3);
  t.skin_weights = Eigen::MatrixXd::Zero(nv, nj);
  t.joint_regressor = Eigen::MatrixXd::Zero(nj, nv);
  t.parent.resize(nj);
  for (int j = 0; j < nj; ++j) t.parent[j] = tubes[j].parent;

  std::vector<Eigen::Vector3i> faces;
  for (int g = 0; g < n_geom; ++g) {
    const TubeSpec& tube = tubes[g];
    const Frame fr = tube_frame(tube);
    const int base = g * per_tube;
    const int self = kept[g];
    const int par = tube.parent < 0 ? -1 : kept[tube.parent];
    for (int r = 0; r < rings; ++r) {
      const double s = static_cast<double>(r) / (rings - 1);
      const Eigen::Vector3d c = tube.start + s * (tube.end - tube.start);
      const double ra = tube.ra0 + s * (tube.ra1 - tube.ra0);
      const double rb = tube.rb0 + s * (tube.rb1 - tube.rb0);
      for (int k = 0; k < segs; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / segs;
        const int v = base + r * segs + k;
        t.rest_vertices.row(v) = (c + ra * std::cos(phi) * fr.e1 + rb * std::sin(phi) * fr.e2).transpose();
        if (r == 0 && par >= 0 && par != self) {
          t.skin_weights(v, self) = 0.5;
          t.skin_weights(v, par) = 0.5;
        } else {
          t.skin_weights(v, self) = 1.0;
        }
      }
    }
    const int cap0 = base + rings * segs;
    const int cap1 = cap0 + 1;
    t.rest_vertices.row(cap0) = tube.start.transpose();
    t.rest_vertices.row(cap1) = tube.end.transpose();
    t.skin_weights.row(cap0) = t.skin_weights.row(base);
    t.skin_weights(cap1, self) = 1.0;

    for (int r = 0; r + 1 < rings; ++r)
      for (int k = 0; k < segs; ++k) {
        const int a = base + r * segs + k;
        const int b = base + r * segs + (k + 1) % segs;
        const int c = a + segs;
        const int d = b + segs;
        faces.emplace_back(a, b, d);
        faces.emplace_back(a, d, c);
      }
    for (int k = 0; k < segs; ++k) {
      faces.emplace_back(cap0, base + (k + 1) % segs, base + k);
      const int last = base + (rings - 1) * segs;
      faces.emplace_back(cap1, last + k, last + (k + 1) % segs);
    }

    if (g < nj) {
      if (g == 0) {
        t.joint_regressor(g, cap0) = 0.5;
        t.joint_regressor(g, cap1) = 0.5;
      } else {
        for (int k = 0; k < segs; ++k) t.joint_regressor(g, base + k) = 1.0 / segs;
      }
    }
  }
  t.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f) t.faces.row(static_cast<Eigen::Index>(f)) = faces[f].transpose();

  // Keypoints sit on surface vertices so depth-test visibility is meaningful.
  const int tail0 = kBodyJoints;
  using V = Eigen::Vector3d;
  const std::array<KeypointSite, kNumKeypoints> sites = {{
      {4, Site::EndCap},
      {5, Site::EndCap},
      {4, Site::RingVertex, 1, V(0, 0.6, 0.8)},
      {4, Site::RingVertex, 1, V(0, 0.6, -0.8)},
      {6, Site::EndCap},
      {7, Site::EndCap},
      {2, Site::RingVertex, 0, V(0, 1, 0)},
      {tail0, Site::RingVertex, 0, V(0, 1, 0)},
      {tail0 + n_tail / 2, Site::RingVertex, 0, V(0, 1, 0)},
      {tail0 + n_tail - 1, Site::EndCap},
      {11, Site::EndCap},
      {15, Site::EndCap},
      {19, Site::EndCap},
      {23, Site::EndCap},
      {10, Site::RingVertex, 0, V(0, 0, 1)},
      {14, Site::RingVertex, 0, V(0, 0, -1)},
      {18, Site::RingVertex, 0, V(0, 0, 1)},
      {22, Site::RingVertex, 0, V(0, 0, -1)},
      {9, Site::RingVertex, 0, V(-1, 0, 0)},
      {13, Site::RingVertex, 0, V(-1, 0, 0)},
      {17, Site::RingVertex, 0, V(1, 0, 0)},
      {21, Site::RingVertex, 0, V(1, 0, 0)},
      {8, Site::RingVertex, 0, V(0, 0, 1)},
      {12, Site::RingVertex, 0, V(0, 0, -1)},
      {16, Site::RingVertex, 0, V(0, 0, 1)},
      {20, Site::RingVertex, 0, V(0, 0, -1)},
  }};
  t.keypoint_regressor = Eigen::MatrixXd::Zero(kNumKeypoints, nv);
  for (int k = 0; k < kNumKeypoints; ++k) {
    const KeypointSite& site = sites[k];
    const int base = site.tube * per_tube;
    if (site.site == Site::EndCap) {
      t.keypoint_regressor(k, base + rings * segs + 1) = 1.0;
      continue;
    }
    const int ring = std::min(site.ring, rings - 1);
    const Eigen::Vector3d centre =
        t.rest_vertices.middleRows(base + ring * segs, segs).colwise().mean().transpose();
    int best = base + ring * segs;
    double best_dot = -1e300;
    for (int kk = 0; kk < segs; ++kk) {
      const int v = base + ring * segs + kk;
      const double d = (t.rest_vertices.row(v).transpose() - centre).dot(site.direction);
      if (d > best_dot + 1e-12) {
        best_dot = d;
        best = v;
      }
    }
    t.keypoint_regressor(k, best) = 1.0;
  }

  // Smooth random displacement fields: an affine part (proportions) plus one
  // low-frequency sinusoid (local bulges).
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  t.shape_basis.resize(3 * nv, cfg.n_beta);
  for (int d = 0; d < cfg.n_beta; ++d) {
    Eigen::Matrix3d affine;
    for (int i = 0; i < 9; ++i) affine(i / 3, i % 3) = normal(rng);
    Eigen::Vector3d freq, amp;
    for (int i = 0; i < 3; ++i) freq[i] = 3.0 * normal(rng);
    for (int i = 0; i < 3; ++i) amp[i] = normal(rng);
    const double ph = phase(rng);
    affine *= cfg.shape_scale;
    amp *= cfg.shape_scale;
    for (int v = 0; v < nv; ++v) {
      const Eigen::Vector3d x = t.rest_vertices.row(v).transpose();
      const Eigen::Vector3d disp = affine * x + std::sin(freq.dot(x) + ph) * amp;
      t.shape_basis.block<3, 1>(3 * v, d) = disp;
    }
  }

  t.rest_joints = t.joint_regressor * t.rest_vertices;
  std::set<std::string> families(kSpeciesFamily.begin(), kSpeciesFamily.end());
  t.family_names.assign(families.begin(), families.end());
  return t;
}

}  // namespace quadfit

#include "quadfit/model.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <stdexcept>

#include <fmt/format.h>

#include "quadfit/error.hpp"

namespace quadfit {

namespace {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

constexpr double kSmallAngle = 1e-8;
constexpr double kSumTolerance = 1e-6;

}  // namespace

std::vector<int> topological_order(const std::vector<int>& parent) {
  const int n = static_cast<int>(parent.size());
  if (n == 0) throw ValidationError("parent: empty kinematic tree");
  if (parent[0] != -1) throw ValidationError("parent: joint 0 must be the root (parent -1)");
  std::vector<std::vector<int>> children(n);
  for (int j = 1; j < n; ++j) {
    if (parent[j] < 0 || parent[j] >= n || parent[j] == j)
      throw ValidationError(fmt::format("parent: joint {} has invalid parent {}", j, parent[j]));
    children[parent[j]].push_back(j);
  }
  std::vector<int> order;
  order.reserve(n);
  std::queue<int> pending;
  pending.push(0);
  while (!pending.empty()) {
    const int j = pending.front();
    pending.pop();
    order.push_back(j);
    for (int c : children[j]) pending.push(c);
  }
  if (static_cast<int>(order.size()) != n)
    throw ValidationError("parent: cycle or disconnected joint in kinematic tree");
  return order;
}

void validate(const ModelTemplate& t) {
  const int v = t.n_vertices();
  const int j = t.n_joints();
  if (v == 0) throw ValidationError("rest_vertices: empty");
  if (!t.rest_vertices.allFinite()) throw ValidationError("rest_vertices: non-finite entry");
  if (t.shape_basis.rows() != 3 * v)
    throw ValidationError(fmt::format("shape_basis: expected {} rows, got {}", 3 * v, t.shape_basis.rows()));
  if (!t.shape_basis.allFinite()) throw ValidationError("shape_basis: non-finite entry");
  if (t.skin_weights.rows() != v || t.skin_weights.cols() != j)
    throw ValidationError(fmt::format("skin_weights: expected {}x{}", v, j));
  for (int i = 0; i < v; ++i) {
    if ((t.skin_weights.row(i).array() < 0.0).any())
      throw ValidationError(fmt::format("skin_weights: negative weight in row {}", i));
    const double s = t.skin_weights.row(i).sum();
    if (std::abs(s - 1.0) > kSumTolerance)
      throw ValidationError(fmt::format("skin_weights: row {} sums to {}", i, s));
  }
  if (t.joint_regressor.rows() != j || t.joint_regressor.cols() != v)
    throw ValidationError(fmt::format("joint_regressor: expected {}x{}", j, v));
  for (int i = 0; i < j; ++i) {
    const double s = t.joint_regressor.row(i).sum();
    if (std::abs(s - 1.0) > kSumTolerance)
      throw ValidationError(fmt::format("joint_regressor: row {} sums to {}", i, s));
  }
  if (t.keypoint_regressor.cols() != v)
    throw ValidationError(fmt::format("keypoint_regressor: expected {} columns", v));
  if (!t.keypoint_regressor.allFinite()) throw ValidationError("keypoint_regressor: non-finite entry");
  topological_order(t.parent);
  for (int f = 0; f < t.n_faces(); ++f)
    for (int c = 0; c < 3; ++c)
      if (t.faces(f, c) < 0 || t.faces(f, c) >= v)
        throw ValidationError(fmt::format("faces: face {} references vertex {}", f, t.faces(f, c)));
  if (t.rest_joints.rows() != j)
    throw ValidationError(fmt::format("rest_joints: expected {} rows", j));
  const MatrixX3dR regressed = t.joint_regressor * t.rest_vertices;
  if (!(regressed - t.rest_joints).isZero(1e-6))
    throw ValidationError("rest_joints: disagrees with joint_regressor * rest_vertices");
}

Params Params::zeros(int n_beta, int n_joints) {
  Params p;
  p.beta = Eigen::VectorXd::Zero(n_beta);
  p.theta = MatrixX3dR::Zero(n_joints, 3);
  return p;
}

ParamGradient ParamGradient::zeros(int n_beta, int n_joints) {
  ParamGradient g;
  g.beta = Eigen::VectorXd::Zero(n_beta);
  g.theta = MatrixX3dR::Zero(n_joints, 3);
  return g;
}

void check_params(const ModelTemplate& tmpl, const Params& p) {
  if (p.beta.size() != tmpl.n_beta())
    throw std::invalid_argument(fmt::format("beta has {} entries, template expects {}", p.beta.size(), tmpl.n_beta()));
  if (p.theta.rows() != tmpl.n_joints())
    throw std::invalid_argument(fmt::format("theta has {} rows, template expects {}", p.theta.rows(), tmpl.n_joints()));
  if (!p.beta.allFinite() || !p.theta.allFinite() || !p.gamma.allFinite())
    throw std::invalid_argument("params contain non-finite entries");
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& r) {
  if (!r.allFinite()) throw std::invalid_argument("rodrigues: non-finite axis-angle");
  const double angle = r.norm();
  const Eigen::Matrix3d k = skew(r);
  if (angle < kSmallAngle) return Eigen::Matrix3d::Identity() + k + 0.5 * k * k;
  const Eigen::Matrix3d kn = k / angle;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * kn + (1.0 - std::cos(angle)) * kn * kn;
}

std::array<Eigen::Matrix3d, 3> rodrigues_jacobian(const Eigen::Vector3d& r) {
  std::array<Eigen::Matrix3d, 3> d;
  const double angle2 = r.squaredNorm();
  if (std::sqrt(angle2) < kSmallAngle) {
    // derivative of I + K + K^2/2
    const Eigen::Matrix3d k = skew(r);
    for (int i = 0; i < 3; ++i) {
      const Eigen::Matrix3d ei = skew(Eigen::Vector3d::Unit(i));
      d[i] = ei + 0.5 * (ei * k + k * ei);
    }
    return d;
  }
  // dR/dr_i = (r_i [r]x + [r x (I - R) e_i]x) R / |r|^2
  const Eigen::Matrix3d rot = rodrigues(r);
  const Eigen::Matrix3d k = skew(r);
  const Eigen::Matrix3d i_minus_r = Eigen::Matrix3d::Identity() - rot;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d c = r.cross(i_minus_r.col(i));
    d[i] = (r[i] * k + skew(c)) * rot / angle2;
  }
  return d;
}

PosedMesh pose_mesh(const ModelTemplate& t, const Params& p) {
  check_params(t, p);
  const int nv = t.n_vertices();
  const int nj = t.n_joints();

  const Eigen::VectorXd shaped_flat =
      Eigen::Map<const Eigen::VectorXd>(t.rest_vertices.data(), 3 * nv) + t.shape_basis * p.beta;
  const MatrixX3dR shaped = Eigen::Map<const MatrixX3dR>(shaped_flat.data(), nv, 3);
  const MatrixX3dR rest_joints = t.joint_regressor * shaped;

  // Each joint's skinning transform as x -> rg x + offset, composed directly so
  // the identity pose reproduces the rest mesh bit for bit.
  std::vector<Eigen::Matrix3d> rg(nj);
  std::vector<Eigen::Vector3d> offset(nj);
  for (int j : topological_order(t.parent)) {
    const Eigen::Matrix3d r = rodrigues(p.theta.row(j).transpose());
    const Eigen::Vector3d jr = rest_joints.row(j).transpose();
    const Eigen::Vector3d local = jr - r * jr;
    const int par = t.parent[j];
    if (par < 0) {
      rg[j] = r;
      offset[j] = local;
    } else {
      rg[j] = rg[par] * r;
      offset[j] = rg[par] * local + offset[par];
    }
  }

  PosedMesh out;
  out.vertices.resize(nv, 3);
  for (int v = 0; v < nv; ++v) {
    const Eigen::Vector3d x = shaped.row(v).transpose();
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    for (int j = 0; j < nj; ++j) {
      const double w = t.skin_weights(v, j);
      if (w == 0.0) continue;
      acc += w * (rg[j] * x + offset[j]);
    }
    out.vertices.row(v) = (acc + p.gamma).transpose();
  }
  out.joints = t.joint_regressor * out.vertices;
  out.keypoints3d = t.keypoint_regressor * out.vertices;
  return out;
}

void write_obj(const std::string& path, const PosedMesh& mesh, const MatrixX3iR& faces) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v)
    os << fmt::format("v {:.9g} {:.9g} {:.9g}\n", mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2));
  for (Eigen::Index f = 0; f < faces.rows(); ++f)
    os << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  if (!os) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------

SkinnedModel::SkinnedModel(const ModelTemplate& t)
    : n_beta_(t.n_beta()), parent_(t.parent), order_(topological_order(t.parent)) {
  const int nv = t.n_vertices();
  const int nj = t.n_joints();
  joint_rest_ = t.joint_regressor * t.rest_vertices;
  joint_shape_.resize(3 * nj, n_beta_);
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd basis_c(nv, n_beta_);
    for (int v = 0; v < nv; ++v) basis_c.row(v) = t.shape_basis.row(3 * v + c);
    const Eigen::MatrixXd jc = t.joint_regressor * basis_c;
    for (int j = 0; j < nj; ++j) joint_shape_.row(3 * j + c) = jc.row(j);
  }
  keypoint_rows_ = reduce(t, t.keypoint_regressor);
  joint_rows_ = reduce(t, t.joint_regressor);
}

std::vector<SkinnedModel::Row> SkinnedModel::reduce(const ModelTemplate& t, const Eigen::MatrixXd& reg) {
  const int nv = t.n_vertices();
  const int nj = t.n_joints();
  const int nb = t.n_beta();
  std::vector<Row> rows(reg.rows());
  for (Eigen::Index k = 0; k < reg.rows(); ++k) {
    Row& row = rows[k];
    row.total_weight = reg.row(k).sum();
    std::vector<Term> terms(nj);
    std::vector<bool> used(nj, false);
    for (int j = 0; j < nj; ++j) {
      terms[j].joint = j;
      terms[j].weight = 0.0;
      terms[j].offset.setZero();
      terms[j].shape = Eigen::Matrix3Xd::Zero(3, nb);
    }
    for (int v = 0; v < nv; ++v) {
      const double r = reg(k, v);
      if (r == 0.0) continue;
      for (int j = 0; j < nj; ++j) {
        const double w = t.skin_weights(v, j);
        if (w == 0.0) continue;
        const double rw = r * w;
        used[j] = true;
        terms[j].weight += rw;
        terms[j].offset += rw * t.rest_vertices.row(v).transpose();
        for (int c = 0; c < 3; ++c) terms[j].shape.row(c) += rw * t.shape_basis.row(3 * v + c);
      }
    }
    for (int j = 0; j < nj; ++j)
      if (used[j]) row.terms.push_back(std::move(terms[j]));
  }
  return rows;
}

KinematicState SkinnedModel::forward(const Params& p) const {
  const int nj = n_joints();
  if (p.beta.size() != n_beta_ || p.theta.rows() != nj)
    throw std::invalid_argument("SkinnedModel: params dimension mismatch");
  KinematicState s;
  s.local_rotation.resize(nj);
  s.global_rotation.resize(nj);
  s.global_translation.resize(nj);
  s.rest_joint.resize(nj);
  const Eigen::VectorXd jflat = joint_shape_ * p.beta;
  for (int j = 0; j < nj; ++j)
    s.rest_joint[j] = joint_rest_.row(j).transpose() + jflat.segment<3>(3 * j);
  for (int j : order_) {
    s.local_rotation[j] = rodrigues(p.theta.row(j).transpose());
    const int par = parent_[j];
    if (par < 0) {
      s.global_rotation[j] = s.local_rotation[j];
      s.global_translation[j] = s.rest_joint[j];
    } else {
      s.global_rotation[j] = s.global_rotation[par] * s.local_rotation[j];
      s.global_translation[j] =
          s.global_rotation[par] * (s.rest_joint[j] - s.rest_joint[par]) + s.global_translation[par];
    }
  }
  return s;
}

MatrixX3dR SkinnedModel::evaluate(const std::vector<Row>& rows, const Params& p,
                                  const KinematicState& s) const {
  MatrixX3dR out(rows.size(), 3);
  for (size_t k = 0; k < rows.size(); ++k) {
    Eigen::Vector3d acc = rows[k].total_weight * p.gamma;
    for (const Term& term : rows[k].terms) {
      const int j = term.joint;
      const Eigen::Vector3d a = term.offset + term.shape * p.beta;
      acc += s.global_rotation[j] * (a - term.weight * s.rest_joint[j]) + term.weight * s.global_translation[j];
    }
    out.row(k) = acc.transpose();
  }
  return out;
}

MatrixX3dR SkinnedModel::keypoints(const Params& p, const KinematicState& s) const {
  return evaluate(keypoint_rows_, p, s);
}

MatrixX3dR SkinnedModel::joints(const Params& p, const KinematicState& s) const {
  return evaluate(joint_rows_, p, s);
}

void SkinnedModel::backprop_keypoints(const Params& p, const KinematicState& s,
                                      const MatrixX3dR& grad_kp, ParamGradient& grad) const {
  const int nj = n_joints();
  std::vector<Eigen::Matrix3d> g_rot(nj, Eigen::Matrix3d::Zero());
  std::vector<Eigen::Vector3d> g_trans(nj, Eigen::Vector3d::Zero());
  std::vector<Eigen::Vector3d> g_rest(nj, Eigen::Vector3d::Zero());

  for (size_t k = 0; k < keypoint_rows_.size(); ++k) {
    const Eigen::Vector3d g = grad_kp.row(k).transpose();
    if (g.isZero(0.0)) continue;
    const Row& row = keypoint_rows_[k];
    grad.gamma += row.total_weight * g;
    for (const Term& term : row.terms) {
      const int j = term.joint;
      const Eigen::Vector3d a = term.offset + term.shape * p.beta;
      const Eigen::Vector3d d = a - term.weight * s.rest_joint[j];
      g_rot[j] += g * d.transpose();
      g_trans[j] += term.weight * g;
      const Eigen::Vector3d gd = s.global_rotation[j].transpose() * g;
      grad.beta += term.shape.transpose() * gd;
      g_rest[j] -= term.weight * gd;
    }
  }

  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const int j = *it;
    const int par = parent_[j];
    Eigen::Matrix3d g_local;
    if (par < 0) {
      g_local = g_rot[j];
      g_rest[j] += g_trans[j];
    } else {
      const Eigen::Matrix3d& rp = s.global_rotation[par];
      const Eigen::Vector3d bone = s.rest_joint[j] - s.rest_joint[par];
      g_rot[par] += g_trans[j] * bone.transpose() + g_rot[j] * s.local_rotation[j].transpose();
      const Eigen::Vector3d gb = rp.transpose() * g_trans[j];
      g_rest[j] += gb;
      g_rest[par] -= gb;
      g_trans[par] += g_trans[j];
      g_local = rp.transpose() * g_rot[j];
    }
    const auto jac = rodrigues_jacobian(p.theta.row(j).transpose());
    for (int i = 0; i < 3; ++i) grad.theta(j, i) += (g_local.array() * jac[i].array()).sum();
  }

  for (int j = 0; j < nj; ++j) grad.beta += joint_shape_.middleRows<3>(3 * j).transpose() * g_rest[j];
}

}  // namespace quadfit

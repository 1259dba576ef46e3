#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <optional>
#include <string>
#include <vector>

namespace quadfit {

using MatrixX3dR = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using MatrixX3iR = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Rest-pose articulated quadruped: geometry, linear shape space, skinning
/// weights and the linear regressors for joints and keypoints.
///
/// Layout of `shape_basis`: row 3*v + c holds the displacement of coordinate
/// c of vertex v per unit of each shape coefficient (columns).
struct ModelTemplate {
  MatrixX3dR rest_vertices;
  MatrixX3iR faces;
  Eigen::MatrixXd shape_basis;         // (3*V) x n_beta
  Eigen::MatrixXd skin_weights;        // V x n_joints
  Eigen::MatrixXd joint_regressor;     // n_joints x V
  Eigen::MatrixXd keypoint_regressor;  // n_kp x V
  std::vector<int> parent;             // parent[0] == -1
  MatrixX3dR rest_joints;              // joint_regressor * rest_vertices
  std::vector<std::string> family_names;

  int n_vertices() const { return static_cast<int>(rest_vertices.rows()); }
  int n_faces() const { return static_cast<int>(faces.rows()); }
  int n_beta() const { return static_cast<int>(shape_basis.cols()); }
  int n_joints() const { return static_cast<int>(parent.size()); }
  int n_keypoints() const { return static_cast<int>(keypoint_regressor.rows()); }

  bool operator==(const ModelTemplate&) const = default;
};

/// Throws ValidationError naming the first violated invariant.
void validate(const ModelTemplate& tmpl);

/// Joints ordered so that every parent precedes its children. Throws
/// ValidationError if `parent` is not a tree rooted at joint 0.
std::vector<int> topological_order(const std::vector<int>& parent);

struct Params {
  Eigen::VectorXd beta;
  MatrixX3dR theta;  // row 0 is the global orientation
  Eigen::Vector3d gamma = Eigen::Vector3d::Zero();

  static Params zeros(int n_beta, int n_joints);
  bool operator==(const Params&) const = default;
};

/// Throws std::invalid_argument when dimensions do not match the template or
/// any entry is non-finite.
void check_params(const ModelTemplate& tmpl, const Params& params);

struct PosedMesh {
  MatrixX3dR vertices;
  MatrixX3dR joints;
  MatrixX3dR keypoints3d;
};

/// Axis-angle to rotation matrix. Below a norm of 1e-8 the second-order
/// Taylor expansion I + K + K^2/2 is used.
Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis_angle);

/// dR/dr_i for i = 0..2.
std::array<Eigen::Matrix3d, 3> rodrigues_jacobian(const Eigen::Vector3d& axis_angle);

/// Shape, pose and skin. The root rotation pivots about the root joint's
/// shaped rest location; gamma is added afterwards to every output.
PosedMesh pose_mesh(const ModelTemplate& tmpl, const Params& params);

/// Writes `v` and `f` records only.
void write_obj(const std::string& path, const PosedMesh& mesh, const MatrixX3iR& faces);

/// Gradient of a scalar with respect to Params, same shapes as Params.
struct ParamGradient {
  Eigen::VectorXd beta;
  MatrixX3dR theta;
  Eigen::Vector3d gamma = Eigen::Vector3d::Zero();

  static ParamGradient zeros(int n_beta, int n_joints);
};

/// Forward-kinematics state shared by every readout evaluated at one Params.
struct KinematicState {
  std::vector<Eigen::Matrix3d> local_rotation;
  std::vector<Eigen::Matrix3d> global_rotation;
  std::vector<Eigen::Vector3d> global_translation;  // world position of joint
  std::vector<Eigen::Vector3d> rest_joint;          // shaped rest joints
};

/// Skinning collapsed onto a linear regressor R (rows x V).
///
/// Because skinning is linear in the vertices and R is linear, each output row
/// reduces to sum_j G_j(a_kj(beta)) with a_kj affine in beta. This makes
/// keypoint/joint evaluation O(rows * joints) and gives exact reverse-mode
/// gradients without touching the full mesh.
class SkinnedModel {
 public:
  explicit SkinnedModel(const ModelTemplate& tmpl);

  int n_beta() const { return n_beta_; }
  int n_joints() const { return static_cast<int>(parent_.size()); }
  int n_keypoints() const { return static_cast<int>(keypoint_rows_.size()); }

  KinematicState forward(const Params& params) const;

  MatrixX3dR keypoints(const Params& params, const KinematicState& state) const;
  MatrixX3dR joints(const Params& params, const KinematicState& state) const;
  MatrixX3dR keypoints(const Params& params) const { return keypoints(params, forward(params)); }
  MatrixX3dR joints(const Params& params) const { return joints(params, forward(params)); }

  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(keypoints).
  void backprop_keypoints(const Params& params, const KinematicState& state,
                          const MatrixX3dR& grad_keypoints, ParamGradient& grad) const;

 private:
  struct Term {
    int joint;
    double weight;               // sum_v R_kv w_vj
    Eigen::Vector3d offset;      // sum_v R_kv w_vj rest_v
    Eigen::Matrix3Xd shape;      // sum_v R_kv w_vj S_v  (3 x n_beta)
  };
  struct Row {
    std::vector<Term> terms;
    double total_weight = 0.0;   // sum_v R_kv, multiplies gamma
  };

  static std::vector<Row> reduce(const ModelTemplate& tmpl, const Eigen::MatrixXd& regressor);
  MatrixX3dR evaluate(const std::vector<Row>& rows, const Params& params,
                      const KinematicState& state) const;

  int n_beta_ = 0;
  std::vector<int> parent_;
  std::vector<int> order_;
  MatrixX3dR joint_rest_;        // W * rest_vertices
  Eigen::MatrixXd joint_shape_;  // (3*J) x n_beta, W applied to shape basis
  std::vector<Row> keypoint_rows_;
  std::vector<Row> joint_rows_;
};

}  // namespace quadfit

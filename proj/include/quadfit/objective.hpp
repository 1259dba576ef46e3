#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <vector>

#include "quadfit/camera.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/model.hpp"

namespace quadfit {

/// Everything the fitter optimizes: model parameters plus the camera
/// translation T.
struct FitVariables {
  Params params;
  Eigen::Vector3d camera_translation = Eigen::Vector3d::Zero();

  bool operator==(const FitVariables&) const = default;
};

/// Flat layout [beta | theta (row-major) | gamma | T].
Eigen::VectorXd to_vector(const FitVariables& vars);
FitVariables from_vector(const Eigen::VectorXd& x, int n_beta, int n_joints);
inline int variable_count(int n_beta, int n_joints) { return n_beta + 3 * n_joints + 6; }

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h over the flat layout.
/// Throws std::domain_error if any evaluation is non-finite.
Eigen::VectorXd grad_fd(const std::function<double(const FitVariables&)>& objective, const FitVariables& at,
                        double h = 1e-5);

/// Observed labels for one image.
struct Observation {
  Keypoints2d keypoints2d;
  std::optional<Labels3d> labels3d;
  double focal = 1000.0;
  int width = 512;
  int height = 512;

  Camera camera(const Eigen::Vector3d& translation) const;
};

struct ObjectiveSpec {
  bool use_2d = true;
  bool use_3d = true;      // only effective when the observation has 3D labels
  bool use_prior = true;
  std::vector<bool> keypoint_mask;  // restricts the 2D term; empty = all keypoints
  Loss2dOptions loss_2d;
  LossWeights weights;
};

/// Weighted sum of the 2D, 3D and prior terms evaluated through the skinned
/// keypoint model, with exact reverse-mode gradients over the flat layout.
class Objective {
 public:
  Objective(const SkinnedModel& model, const PriorDistribution& prior, const Observation& obs, ObjectiveSpec spec);

  LossReport evaluate(const FitVariables& vars, Eigen::VectorXd* gradient = nullptr) const;

  const ObjectiveSpec& spec() const { return spec_; }
  /// 2D observation after applying the keypoint mask.
  const Keypoints2d& masked_keypoints() const { return masked_; }

 private:
  const SkinnedModel& model_;
  const PriorDistribution& prior_;
  const Observation& obs_;
  ObjectiveSpec spec_;
  Keypoints2d masked_;
};

}  // namespace quadfit

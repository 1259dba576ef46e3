#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "quadfit/adam.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/model.hpp"
#include "quadfit/objective.hpp"

namespace quadfit {

/// One block of the fitting schedule: which variables move and which loss
/// terms drive them.
struct FitStage {
  std::string name;
  bool free_beta = false;
  bool free_pose = false;  // non-root joints
  bool free_root = false;  // global orientation
  bool free_gamma = false;
  bool free_camera = false;
  bool use_2d = true;
  bool use_3d = false;
  bool use_prior = false;
  bool torso_only = false;  // restrict the 2D term to FitConfig::torso_keypoints
  int max_iterations = 500;
  double step_size = 1e-2;
  double final_step_fraction = 1.0;  // step decays geometrically to step_size * this
};

struct FitConfig {
  std::vector<FitStage> stages;
  AdamConfig adam;
  double tolerance = 1e-7;  // relative objective change...
  int tolerance_window = 10;  // ...over this many iterations
  int restarts = 4;
  std::uint64_t seed = 0;
  int min_visible = 6;
  std::vector<int> torso_keypoints;
  LossWeights weights;
  Loss2dOptions loss_2d;
  Eigen::Vector3d initial_translation{0.0, 0.0, 6.0};
  /// When set, the fit starts from exactly these variables and skips restarts.
  std::optional<FitVariables> initialization;

  void check() const;
};

/// Stage 1: global orientation, gamma and T against the torso 2D term.
/// Stage 2: everything against 2D + prior (+ 3D when labelled).
FitConfig default_fit_config();

struct FitResult {
  FitVariables variables;
  LossReport report;
  std::vector<int> stage_iterations;
  bool converged = false;
  int restart = 0;
};

class Fitter {
 public:
  Fitter(const ModelTemplate& tmpl, const PriorDistribution& prior, FitConfig config = default_fit_config());

  /// Throws std::invalid_argument when fewer than `min_visible` keypoints are
  /// visible and std::runtime_error if no restart yields a finite objective.
  FitResult fit(const Observation& observation) const;

  const SkinnedModel& model() const { return model_; }
  const FitConfig& config() const { return config_; }

  /// Objective the final report is computed with (last stage's terms).
  ObjectiveSpec final_spec() const { return stage_spec(config_.stages.back()); }

 private:
  struct StageOutcome {
    FitVariables vars;
    double value;
    int iterations;
    bool converged;
  };

  ObjectiveSpec stage_spec(const FitStage& stage) const;
  std::vector<FitVariables> initial_guesses(const Observation& obs) const;
  StageOutcome run_stage(const FitStage& stage, const Observation& obs, FitVariables start) const;

  SkinnedModel model_;
  const PriorDistribution& prior_;
  FitConfig config_;
};

struct BatchItem {
  std::optional<FitResult> result;
  std::string error;
};

/// Independent fits, order preserved. Errors are recorded per item.
std::vector<BatchItem> batch_fit(const Fitter& fitter, const std::vector<Observation>& observations, int threads = 1);

/// JSON: variables (beta, flat theta, gamma, translation), loss report with
/// null for absent terms, stage iterations, convergence flag and restart.
void save_fit_result(const FitResult& result, const std::string& path);
FitResult load_fit_result(const std::string& path);

/// Camera translation minimizing the algebraic reprojection residual of known
/// camera-frame-free points; nullopt if fewer than two points are visible or
/// the solution puts the points behind the camera.
std::optional<Eigen::Vector3d> solve_translation(const MatrixX3dR& points, const Keypoints2d& observed, double focal,
                                                 const Eigen::Vector2d& principal);

}  // namespace quadfit

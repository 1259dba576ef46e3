#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "quadfit/model.hpp"

namespace quadfit {

/// x -> scale * rotation * x + translation
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  MatrixX3dR apply(const MatrixX3dR& points) const;
};

/// Least-squares similarity taking X onto Y (SVD, reflections excluded).
/// Throws std::invalid_argument on shape mismatch or fewer than 3 points and
/// DegenerateConfiguration when X is collinear or coincident.
Similarity procrustes_align(const MatrixX3dR& x, const MatrixX3dR& y);

/// Mean Euclidean distance after aligning pred onto gt.
double pa_mpjpe(const MatrixX3dR& pred_joints, const MatrixX3dR& gt_joints);
double pa_mpvpe(const MatrixX3dR& pred_vertices, const MatrixX3dR& gt_vertices);

enum class PckMode { hth, fraction };
enum class PckNormalizer { bbox_max_side, hth };

struct PckSpec {
  PckMode mode = PckMode::hth;
  double fraction = 0.1;
  PckNormalizer normalizer = PckNormalizer::bbox_max_side;
  int head = 0;
  int tail = 7;

  void check(int n_keypoints) const;
};

/// Reference length for normalized thresholds. nullopt when the reference is
/// unavailable (head or tail invisible for hth).
std::optional<double> reference_length(const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
                                       PckNormalizer normalizer, int head, int tail);

/// Fraction of visible keypoints with pixel error strictly below the
/// threshold. nullopt means the instance is skipped (hth reference invisible).
/// Throws std::invalid_argument when no keypoint is visible.
std::optional<double> pck(const Eigen::MatrixX2d& pred, const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
                          const PckSpec& spec);

inline constexpr int kAucSteps = 100;

/// Trapezoidal area under PCK(t) for t = 0, 0.01, ..., 1 with errors divided
/// by `normalizer`. The curve counts error <= t, unlike pck(). Throws std::invalid_argument if normalizer <= 0.
double auc(const Eigen::MatrixX2d& pred, const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
           double normalizer);

struct MetricsConfig {
  PckNormalizer normalizer = PckNormalizer::bbox_max_side;
  std::vector<double> fractions{0.1, 0.15};
  int head = 0;
  int tail = 7;
};

/// One prediction/ground-truth pair. 3D parts are optional so 2D-only labels
/// can still be scored.
struct EvalInstance {
  std::string id;
  std::optional<MatrixX3dR> pred_joints, gt_joints;
  std::optional<MatrixX3dR> pred_vertices, gt_vertices;
  Eigen::MatrixX2d pred2d, gt2d;
  std::vector<bool> visible;
};

struct InstanceMetrics {
  std::string id;
  std::optional<double> pa_mpjpe, pa_mpvpe;
  std::optional<double> pck_hth;
  std::vector<std::optional<double>> pck_fraction;  // one per MetricsConfig::fractions
  std::optional<double> auc;
};

struct MetricsReport {
  std::optional<double> pa_mpjpe, pa_mpvpe;
  std::optional<double> pck_hth;
  std::vector<double> fractions;
  std::vector<std::optional<double>> pck_fraction;
  std::optional<double> auc;
  int n_instances = 0;
  int n_hth_skipped = 0;
};

InstanceMetrics evaluate_instance(const EvalInstance& instance, const MetricsConfig& config = {});

/// Equal-weight averages; each metric averages over the instances that have it.
MetricsReport summarize(const std::vector<InstanceMetrics>& instances, const MetricsConfig& config = {});

std::string metrics_json(const MetricsReport& report);
void write_metrics_json(const MetricsReport& report, const std::string& path);
void write_metrics_csv(const std::vector<InstanceMetrics>& instances, const std::vector<double>& fractions,
                       const std::string& path);

}  // namespace quadfit

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quadfit/camera.hpp"
#include "quadfit/model.hpp"

namespace quadfit {

/// Outer weights of the total objective and the inner weights of the 3D and
/// prior terms.
struct LossWeights {
  double lambda_3d = 0.05;
  double lambda_2d = 0.01;
  double lambda_prior = 0.001;
  double lambda_adv = 0.0005;
  double lambda_con = 0.0005;
  double inner_beta_3d = 0.01;
  double inner_theta_3d = 0.2;
  double inner_beta_prior = 0.5;

  void check() const;
};

/// Gaussian prior over shape and pose. Covariances are factored once at
/// construction; construction fails with ValidationError if either is not SPD.
class PriorDistribution {
 public:
  PriorDistribution(Eigen::VectorXd mu_beta, Eigen::MatrixXd sigma_beta, Eigen::VectorXd mu_theta,
                    Eigen::MatrixXd sigma_theta);

  const Eigen::VectorXd& mu_beta() const { return mu_beta_; }
  const Eigen::MatrixXd& sigma_beta() const { return sigma_beta_; }
  const Eigen::VectorXd& mu_theta() const { return mu_theta_; }
  const Eigen::MatrixXd& sigma_theta() const { return sigma_theta_; }
  int n_beta() const { return static_cast<int>(mu_beta_.size()); }
  int n_joints() const { return static_cast<int>(mu_theta_.size() / 3); }

  /// Mean as Params (gamma = 0).
  Params mean() const;

  /// Sigma^{-1} x via the Cholesky factor.
  Eigen::VectorXd solve_beta(const Eigen::VectorXd& x) const { return llt_beta_.solve(x); }
  Eigen::VectorXd solve_theta(const Eigen::VectorXd& x) const { return llt_theta_.solve(x); }
  /// Lower Cholesky factor, used for sampling.
  Eigen::MatrixXd chol_beta() const { return llt_beta_.matrixL(); }

 private:
  Eigen::VectorXd mu_beta_;
  Eigen::MatrixXd sigma_beta_;
  Eigen::VectorXd mu_theta_;
  Eigen::MatrixXd sigma_theta_;
  Eigen::LLT<Eigen::MatrixXd> llt_beta_;
  Eigen::LLT<Eigen::MatrixXd> llt_theta_;
};

/// mu = 0, Sigma = sigma^2 I for both blocks.
PriorDistribution make_toy_prior(int n_beta, int n_joints, double sigma_beta = 1.0, double sigma_theta = 0.5);
PriorDistribution load_prior(const std::string& path);
void save_prior(const PriorDistribution& prior, const std::string& path);

/// Flattened theta (row-major, 3 per joint).
Eigen::VectorXd flatten_theta(const MatrixX3dR& theta);

struct Keypoints2d {
  Eigen::MatrixX2d uv;
  std::vector<bool> visible;

  int count_visible() const;
};

/// 3D supervision: keypoints always, parameters when the label carries them.
struct Labels3d {
  std::optional<Params> params;
  MatrixX3dR keypoints3d;
};

/// lambda_b |b^ - b|^2 + lambda_t |t^ - t|^2 + |K^ - K|_1. Parameter terms are
/// skipped when `gt.params` is empty.
double loss_3d(const Params& pred, const MatrixX3dR& pred_keypoints, const Labels3d& gt,
               const LossWeights& weights = {});

struct Loss2dOptions {
  bool normalize = true;  // divide pixel residuals by the image width
};

/// L1 reprojection error over visible keypoints. Returns nullopt when no
/// keypoint is visible (empty observation). Keypoints that project behind the
/// camera raise std::invalid_argument.
std::optional<double> loss_2d(const MatrixX3dR& pred_keypoints, const Camera& camera, const Keypoints2d& gt,
                              const Loss2dOptions& options = {});

/// lambda_b Mahalanobis(beta) + Mahalanobis(theta), solved through Cholesky.
double loss_prior(const Params& pred, const PriorDistribution& prior, const LossWeights& weights = {});

/// sum_k (D_k - 1)^2. Throws on an empty vector.
double loss_adv(std::span<const double> disc_outputs);

/// Scores a parameter vector; outputs near 1 mean "looks real".
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  virtual std::vector<double> score(const Params& params) const = 0;
};

/// Test discriminator: sigmoid(-d) for the shape and pose Mahalanobis
/// distances d under a prior.
class MahalanobisDiscriminator final : public Discriminator {
 public:
  explicit MahalanobisDiscriminator(const PriorDistribution& prior) : prior_(prior) {}
  std::vector<double> score(const Params& params) const override;

 private:
  const PriorDistribution& prior_;
};

struct EmbeddingBatch {
  Eigen::MatrixXd z;        // B x D
  std::vector<int> labels;  // family per row
};

struct SupConOptions {
  bool normalize = true;     // L2-normalize embeddings first
  bool log_form = false;     // standard -log(ratio) form instead of the literal ratio
  double temperature = 1.0;  // only used with log_form
};

/// Family contrastive loss. The literal form sums -1/|P(i)| sum_p exp(z_i.z_p) /
/// sum_o exp(z_i.z_o); anchors without positives contribute 0.
double loss_supcon(const EmbeddingBatch& batch, const SupConOptions& options = {});

struct LossComponents {
  std::optional<double> l3d, l2d, prior, adv, con;
};

struct LossReport {
  double total = 0.0;
  LossComponents components;
};

/// Weighted sum over present components. Throws if none is present.
LossReport loss_total(const LossComponents& components, const LossWeights& weights = {});

}  // namespace quadfit

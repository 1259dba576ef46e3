#include "quadfit/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json_util.hpp"

namespace quadfit {

void LossWeights::check() const {
  for (double w : {lambda_3d, lambda_2d, lambda_prior, lambda_adv, lambda_con, inner_beta_3d, inner_theta_3d,
                   inner_beta_prior})
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
}

PriorDistribution::PriorDistribution(Eigen::VectorXd mu_beta, Eigen::MatrixXd sigma_beta, Eigen::VectorXd mu_theta,
                                     Eigen::MatrixXd sigma_theta)
    : mu_beta_(std::move(mu_beta)),
      sigma_beta_(std::move(sigma_beta)),
      mu_theta_(std::move(mu_theta)),
      sigma_theta_(std::move(sigma_theta)) {
  if (sigma_beta_.rows() != mu_beta_.size() || sigma_beta_.cols() != mu_beta_.size())
    throw ValidationError("prior: sigma_beta shape does not match mu_beta");
  if (sigma_theta_.rows() != mu_theta_.size() || sigma_theta_.cols() != mu_theta_.size())
    throw ValidationError("prior: sigma_theta shape does not match mu_theta");
  if (mu_theta_.size() % 3 != 0) throw ValidationError("prior: mu_theta length must be a multiple of 3");
  auto check_spd = [](const Eigen::MatrixXd& s, Eigen::LLT<Eigen::MatrixXd>& llt, const char* name) {
    if (!s.allFinite() || !s.isApprox(s.transpose(), 1e-12))
      throw ValidationError(fmt::format("prior: {} is not symmetric", name));
    if (s.size() == 0) return;
    llt.compute(s);
    if (llt.info() != Eigen::Success) throw ValidationError(fmt::format("prior: {} is not positive definite", name));
  };
  check_spd(sigma_beta_, llt_beta_, "sigma_beta");
  check_spd(sigma_theta_, llt_theta_, "sigma_theta");
}

Params PriorDistribution::mean() const {
  Params p = Params::zeros(n_beta(), n_joints());
  p.beta = mu_beta_;
  p.theta = Eigen::Map<const MatrixX3dR>(mu_theta_.data(), n_joints(), 3);
  return p;
}

PriorDistribution make_toy_prior(int n_beta, int n_joints, double sigma_beta, double sigma_theta) {
  if (n_beta < 0 || n_joints < 1 || !(sigma_beta > 0) || !(sigma_theta > 0))
    throw std::invalid_argument("make_toy_prior: invalid dimensions or sigma");
  return PriorDistribution(Eigen::VectorXd::Zero(n_beta),
                           Eigen::MatrixXd::Identity(n_beta, n_beta) * sigma_beta * sigma_beta,
                           Eigen::VectorXd::Zero(3 * n_joints),
                           Eigen::MatrixXd::Identity(3 * n_joints, 3 * n_joints) * sigma_theta * sigma_theta);
}

void save_prior(const PriorDistribution& prior, const std::string& path) {
  detail::json j;
  j["version"] = 1;
  j["n_beta"] = prior.n_beta();
  j["n_joints"] = prior.n_joints();
  j["mu_beta"] = detail::vector_to_json(prior.mu_beta());
  j["sigma_beta"] = detail::matrix_to_json(prior.sigma_beta());
  j["mu_theta"] = detail::vector_to_json(prior.mu_theta());
  j["sigma_theta"] = detail::matrix_to_json(prior.sigma_theta());
  detail::write_json_file(path, j);
}

PriorDistribution load_prior(const std::string& path) {
  const detail::json j = detail::read_json_file(path);
  const int nb = detail::scalar<int>(j, "n_beta");
  const int nj = detail::scalar<int>(j, "n_joints");
  return PriorDistribution(
      detail::vector_from_json(detail::field(j, "mu_beta"), "mu_beta", nb),
      detail::matrix_from_json<Eigen::MatrixXd>(detail::field(j, "sigma_beta"), "sigma_beta", nb, nb),
      detail::vector_from_json(detail::field(j, "mu_theta"), "mu_theta", 3 * nj),
      detail::matrix_from_json<Eigen::MatrixXd>(detail::field(j, "sigma_theta"), "sigma_theta", 3 * nj, 3 * nj));
}

Eigen::VectorXd flatten_theta(const MatrixX3dR& theta) {
  return Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
}

int Keypoints2d::count_visible() const {
  return static_cast<int>(std::count(visible.begin(), visible.end(), true));
}

double loss_3d(const Params& pred, const MatrixX3dR& pred_kp, const Labels3d& gt, const LossWeights& w) {
  if (pred_kp.rows() != gt.keypoints3d.rows())
    throw std::invalid_argument("loss_3d: keypoint count mismatch");
  double value = (pred_kp - gt.keypoints3d).cwiseAbs().sum();
  if (gt.params) {
    if (gt.params->beta.size() != pred.beta.size() || gt.params->theta.rows() != pred.theta.rows())
      throw std::invalid_argument("loss_3d: parameter dimension mismatch");
    value += w.inner_beta_3d * (pred.beta - gt.params->beta).squaredNorm();
    value += w.inner_theta_3d * (pred.theta - gt.params->theta).squaredNorm();
  }
  return value;
}

std::optional<double> loss_2d(const MatrixX3dR& pred_kp, const Camera& camera, const Keypoints2d& gt,
                              const Loss2dOptions& options) {
  if (pred_kp.rows() != gt.uv.rows() || static_cast<Eigen::Index>(gt.visible.size()) != gt.uv.rows())
    throw std::invalid_argument("loss_2d: keypoint count mismatch");
  if (gt.count_visible() == 0) return std::nullopt;
  const Projection proj = project(pred_kp, camera);
  const double scale = options.normalize ? 1.0 / camera.width : 1.0;
  double value = 0.0;
  for (Eigen::Index k = 0; k < pred_kp.rows(); ++k) {
    if (!gt.visible[k]) continue;
    if (!proj.valid[k]) throw std::invalid_argument("loss_2d: keypoint behind the camera");
    value += scale * (proj.pixels.row(k) - gt.uv.row(k)).cwiseAbs().sum();
  }
  return value;
}

double loss_prior(const Params& pred, const PriorDistribution& prior, const LossWeights& w) {
  if (pred.beta.size() != prior.n_beta() || pred.theta.rows() != prior.n_joints())
    throw std::invalid_argument("loss_prior: parameter dimension mismatch");
  const Eigen::VectorXd db = pred.beta - prior.mu_beta();
  const Eigen::VectorXd dt = flatten_theta(pred.theta) - prior.mu_theta();
  double value = dt.dot(prior.solve_theta(dt));
  if (db.size() > 0) value += w.inner_beta_prior * db.dot(prior.solve_beta(db));
  return value;
}

double loss_adv(std::span<const double> d) {
  if (d.empty()) throw std::invalid_argument("loss_adv: no discriminator outputs");
  double value = 0.0;
  for (double x : d) value += (x - 1.0) * (x - 1.0);
  return value;
}

std::vector<double> MahalanobisDiscriminator::score(const Params& p) const {
  const Eigen::VectorXd db = p.beta - prior_.mu_beta();
  const Eigen::VectorXd dt = flatten_theta(p.theta) - prior_.mu_theta();
  const double d_beta = db.size() > 0 ? db.dot(prior_.solve_beta(db)) : 0.0;
  const double d_theta = dt.dot(prior_.solve_theta(dt));
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return {sigmoid(-d_beta), sigmoid(-d_theta)};
}

double loss_supcon(const EmbeddingBatch& batch, const SupConOptions& opt) {
  const Eigen::Index b = batch.z.rows();
  if (b < 2) throw std::invalid_argument("loss_supcon: batch needs at least 2 samples");
  if (static_cast<Eigen::Index>(batch.labels.size()) != b)
    throw std::invalid_argument("loss_supcon: label count mismatch");
  if (!batch.z.allFinite()) throw std::invalid_argument("loss_supcon: non-finite embedding");
  if (opt.log_form && !(opt.temperature > 0)) throw std::invalid_argument("loss_supcon: temperature must be positive");

  Eigen::MatrixXd z = batch.z;
  if (opt.normalize) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const double n = z.row(i).norm();
      if (n > 0) z.row(i) /= n;
    }
  }
  Eigen::MatrixXd sim = z * z.transpose();
  if (opt.log_form) sim /= opt.temperature;

  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index o = 0; o < b; ++o)
      if (o != i) peak = std::max(peak, sim(i, o));
    double denom = 0.0;
    for (Eigen::Index o = 0; o < b; ++o)
      if (o != i) denom += std::exp(sim(i, o) - peak);

    double acc = 0.0;
    int positives = 0;
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == i || batch.labels[p] != batch.labels[i]) continue;
      ++positives;
      if (opt.log_form)
        acc += (sim(i, p) - peak) - std::log(denom);
      else
        acc += std::exp(sim(i, p) - peak) / denom;
    }
    if (positives > 0) total += -acc / positives;
  }
  return total;
}

LossReport loss_total(const LossComponents& c, const LossWeights& w) {
  w.check();
  if (!c.l3d && !c.l2d && !c.prior && !c.adv && !c.con) throw std::invalid_argument("loss_total: no components");
  LossReport r;
  r.components = c;
  if (c.l3d) r.total += w.lambda_3d * *c.l3d;
  if (c.l2d) r.total += w.lambda_2d * *c.l2d;
  if (c.prior) r.total += w.lambda_prior * *c.prior;
  if (c.adv) r.total += w.lambda_adv * *c.adv;
  if (c.con) r.total += w.lambda_con * *c.con;
  return r;
}

}  // namespace quadfit

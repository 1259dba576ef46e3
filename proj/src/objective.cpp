#include "quadfit/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace quadfit {

namespace {

double sign(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

}  // namespace

Eigen::VectorXd to_vector(const FitVariables& v) {
  const int nb = static_cast<int>(v.params.beta.size());
  const int nj = static_cast<int>(v.params.theta.rows());
  Eigen::VectorXd x(variable_count(nb, nj));
  x.head(nb) = v.params.beta;
  x.segment(nb, 3 * nj) = flatten_theta(v.params.theta);
  x.segment<3>(nb + 3 * nj) = v.params.gamma;
  x.tail<3>() = v.camera_translation;
  return x;
}

FitVariables from_vector(const Eigen::VectorXd& x, int nb, int nj) {
  if (x.size() != variable_count(nb, nj)) throw std::invalid_argument("from_vector: size mismatch");
  FitVariables v;
  v.params.beta = x.head(nb);
  v.params.theta = Eigen::Map<const MatrixX3dR>(x.data() + nb, nj, 3);
  v.params.gamma = x.segment<3>(nb + 3 * nj);
  v.camera_translation = x.tail<3>();
  return v;
}

Eigen::VectorXd grad_fd(const std::function<double(const FitVariables&)>& f, const FitVariables& at, double h) {
  if (!(h > 0)) throw std::invalid_argument("grad_fd: step must be positive");
  const int nb = static_cast<int>(at.params.beta.size());
  const int nj = static_cast<int>(at.params.theta.rows());
  const Eigen::VectorXd x0 = to_vector(at);
  Eigen::VectorXd g(x0.size());
  Eigen::VectorXd x = x0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    x[i] = x0[i] + h;
    const double fp = f(from_vector(x, nb, nj));
    x[i] = x0[i] - h;
    const double fm = f(from_vector(x, nb, nj));
    x[i] = x0[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw std::domain_error("grad_fd: objective is not finite");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Camera Observation::camera(const Eigen::Vector3d& translation) const {
  Camera c;
  c.focal = focal;
  c.width = width;
  c.height = height;
  c.translation = translation;
  return c;
}

Objective::Objective(const SkinnedModel& model, const PriorDistribution& prior, const Observation& obs,
                     ObjectiveSpec spec)
    : model_(model), prior_(prior), obs_(obs), spec_(std::move(spec)) {
  const int nk = model.n_keypoints();
  if (obs.keypoints2d.uv.rows() != nk || static_cast<int>(obs.keypoints2d.visible.size()) != nk)
    throw std::invalid_argument("Objective: 2D keypoint count does not match the template");
  if (obs.labels3d && obs.labels3d->keypoints3d.rows() != nk)
    throw std::invalid_argument("Objective: 3D keypoint count does not match the template");
  if (!spec_.keypoint_mask.empty() && static_cast<int>(spec_.keypoint_mask.size()) != nk)
    throw std::invalid_argument("Objective: keypoint mask size mismatch");
  if (prior.n_beta() != model.n_beta() || prior.n_joints() != model.n_joints())
    throw std::invalid_argument("Objective: prior dimensions do not match the template");
  spec_.weights.check();
  masked_ = obs.keypoints2d;
  if (!spec_.keypoint_mask.empty())
    for (int k = 0; k < nk; ++k) masked_.visible[k] = masked_.visible[k] && spec_.keypoint_mask[k];
}

LossReport Objective::evaluate(const FitVariables& vars, Eigen::VectorXd* gradient) const {
  const Params& p = vars.params;
  const KinematicState state = model_.forward(p);
  const MatrixX3dR kp = model_.keypoints(p, state);
  const Camera camera = obs_.camera(vars.camera_translation);
  const LossWeights& w = spec_.weights;

  LossComponents c;
  if (spec_.use_2d) c.l2d = loss_2d(kp, camera, masked_, spec_.loss_2d);
  const bool use_3d = spec_.use_3d && obs_.labels3d.has_value();
  if (use_3d) c.l3d = loss_3d(p, kp, *obs_.labels3d, w);
  if (spec_.use_prior) c.prior = loss_prior(p, prior_, w);
  const LossReport report = loss_total(c, w);
  if (!gradient) return report;

  const int nb = model_.n_beta();
  const int nj = model_.n_joints();
  ParamGradient g = ParamGradient::zeros(nb, nj);
  MatrixX3dR g_kp = MatrixX3dR::Zero(kp.rows(), 3);
  Eigen::Vector3d g_cam = Eigen::Vector3d::Zero();

  if (c.l2d) {
    const double scale = w.lambda_2d * (spec_.loss_2d.normalize ? 1.0 / camera.width : 1.0);
    // Residual signs come from the same projection the loss uses so that an
    // exact fit has an exactly zero gradient.
    const Projection pr = project(kp, camera);
    for (Eigen::Index k = 0; k < kp.rows(); ++k) {
      if (!masked_.visible[k]) continue;
      const Eigen::Vector3d x = kp.row(k).transpose() + camera.translation;
      const double inv_z = 1.0 / x.z();
      const double su = scale * sign(pr.pixels(k, 0) - masked_.uv(k, 0));
      const double sv = scale * sign(pr.pixels(k, 1) - masked_.uv(k, 1));
      const Eigen::Vector3d du(camera.focal * inv_z, 0.0, -camera.focal * x.x() * inv_z * inv_z);
      const Eigen::Vector3d dv(0.0, camera.focal * inv_z, -camera.focal * x.y() * inv_z * inv_z);
      const Eigen::Vector3d gx = su * du + sv * dv;
      g_kp.row(k) += gx.transpose();
      g_cam += gx;
    }
  }
  if (use_3d) {
    const Labels3d& gt = *obs_.labels3d;
    g_kp += w.lambda_3d * (kp - gt.keypoints3d).unaryExpr([](double d) { return sign(d); });
    if (gt.params) {
      g.beta += w.lambda_3d * 2.0 * w.inner_beta_3d * (p.beta - gt.params->beta);
      g.theta += w.lambda_3d * 2.0 * w.inner_theta_3d * (p.theta - gt.params->theta);
    }
  }
  if (c.prior) {
    const Eigen::VectorXd db = p.beta - prior_.mu_beta();
    const Eigen::VectorXd dt = flatten_theta(p.theta) - prior_.mu_theta();
    if (nb > 0) g.beta += w.lambda_prior * 2.0 * w.inner_beta_prior * prior_.solve_beta(db);
    const Eigen::VectorXd gt = w.lambda_prior * 2.0 * prior_.solve_theta(dt);
    g.theta += Eigen::Map<const MatrixX3dR>(gt.data(), nj, 3);
  }
  model_.backprop_keypoints(p, state, g_kp, g);

  gradient->resize(variable_count(nb, nj));
  gradient->head(nb) = g.beta;
  gradient->segment(nb, 3 * nj) = flatten_theta(g.theta);
  gradient->segment<3>(nb + 3 * nj) = g.gamma;
  gradient->tail<3>() = g_cam;
  return report;
}

}  // namespace quadfit

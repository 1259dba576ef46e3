#include "quadfit/fitter.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

#include "json_util.hpp"
#include "quadfit/toy_template.hpp"

namespace quadfit {

namespace {

Eigen::Vector3d to_axis_angle(const Eigen::Matrix3d& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

// Rx(pi) turns the model's y-up frame into the camera's y-down frame; the yaw
// is applied about the model's vertical axis first.
Eigen::Matrix3d canonical_orientation(double yaw) {
  return (Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()))
      .toRotationMatrix();
}

// Rotation R and translation t minimizing sum |R a_i + t - b_i|^2.
std::optional<std::pair<Eigen::Matrix3d, Eigen::Vector3d>> rigid_align(const MatrixX3dR& a, const MatrixX3dR& b) {
  if (a.rows() < 3) return std::nullopt;
  const Eigen::RowVector3d ca = a.colwise().mean();
  const Eigen::RowVector3d cb = b.colwise().mean();
  const Eigen::MatrixX3d a0 = a.rowwise() - ca;
  const Eigen::MatrixX3d b0 = b.rowwise() - cb;
  const Eigen::Matrix3d H = a0.transpose() * b0;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()[1] <= 1e-12 * std::max(1.0, svd.singularValues()[0])) return std::nullopt;
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) D(2, 2) = -1.0;
  const Eigen::Matrix3d R = svd.matrixV() * D * svd.matrixU().transpose();
  const Eigen::Vector3d t = cb.transpose() - R * ca.transpose();
  return std::make_pair(R, t);
}

}  // namespace

void FitConfig::check() const {
  if (stages.empty()) throw std::invalid_argument("fit config: no stages");
  for (const auto& s : stages) {
    if (s.max_iterations < 0) throw std::invalid_argument("fit config: negative iteration count in " + s.name);
    if (!(s.step_size > 0.0) || !(s.final_step_fraction > 0.0))
      throw std::invalid_argument("fit config: step size must be positive in " + s.name);
  }
  if (!(tolerance >= 0.0) || tolerance_window < 1) throw std::invalid_argument("fit config: bad tolerance");
  if (restarts < 1) throw std::invalid_argument("fit config: restarts must be >= 1");
  if (min_visible < 1) throw std::invalid_argument("fit config: min_visible must be >= 1");
  weights.check();
}

FitConfig default_fit_config() {
  FitConfig c;
  FitStage global;
  global.name = "global";
  global.free_root = global.free_gamma = global.free_camera = true;
  global.use_2d = true;
  global.torso_only = true;
  global.max_iterations = 300;
  global.step_size = 1e-2;
  global.final_step_fraction = 0.1;

  FitStage full;
  full.name = "full";
  full.free_beta = full.free_pose = full.free_root = full.free_gamma = full.free_camera = true;
  full.use_2d = full.use_3d = full.use_prior = true;
  full.max_iterations = 2000;
  full.step_size = 1e-2;
  full.final_step_fraction = 1e-2;

  c.stages = {global, full};
  c.torso_keypoints.assign(kTorsoKeypoints.begin(), kTorsoKeypoints.end());
  return c;
}

std::optional<Eigen::Vector3d> solve_translation(const MatrixX3dR& points, const Keypoints2d& observed, double focal,
                                                 const Eigen::Vector2d& principal) {
  // f (X + Tx) = (u - cx)(Z + Tz) is linear in T; same for y.
  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < points.rows(); ++k)
    if (k < static_cast<Eigen::Index>(observed.visible.size()) && observed.visible[k]) rows.push_back(k);
  if (rows.size() < 2) return std::nullopt;
  Eigen::MatrixXd A(2 * rows.size(), 3);
  Eigen::VectorXd b(2 * rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Eigen::Index k = rows[i];
    const double du = observed.uv(k, 0) - principal.x();
    const double dv = observed.uv(k, 1) - principal.y();
    A.row(2 * i) << focal, 0.0, -du;
    b[2 * i] = du * points(k, 2) - focal * points(k, 0);
    A.row(2 * i + 1) << 0.0, focal, -dv;
    b[2 * i + 1] = dv * points(k, 2) - focal * points(k, 1);
  }
  const Eigen::Vector3d T = A.colPivHouseholderQr().solve(b);
  if (!T.allFinite()) return std::nullopt;
  for (const auto k : rows)
    if (points(k, 2) + T.z() <= kMinDepth) return std::nullopt;
  return T;
}

Fitter::Fitter(const ModelTemplate& tmpl, const PriorDistribution& prior, FitConfig config)
    : model_(tmpl), prior_(prior), config_(std::move(config)) {
  config_.check();
  if (prior_.n_beta() != model_.n_beta() || prior_.n_joints() != model_.n_joints())
    throw std::invalid_argument("fitter: prior dimensions do not match the template");
  for (int k : config_.torso_keypoints)
    if (k < 0 || k >= model_.n_keypoints()) throw std::invalid_argument("fitter: torso keypoint out of range");
}

ObjectiveSpec Fitter::stage_spec(const FitStage& stage) const {
  ObjectiveSpec spec;
  spec.use_2d = stage.use_2d;
  spec.use_3d = stage.use_3d;
  spec.use_prior = stage.use_prior;
  spec.loss_2d = config_.loss_2d;
  spec.weights = config_.weights;
  if (stage.torso_only) {
    spec.keypoint_mask.assign(model_.n_keypoints(), false);
    for (int k : config_.torso_keypoints) spec.keypoint_mask[k] = true;
  }
  return spec;
}

std::vector<FitVariables> Fitter::initial_guesses(const Observation& obs) const {
  if (config_.initialization) return {*config_.initialization};

  FitVariables base;
  base.params = prior_.mean();
  base.params.gamma.setZero();
  base.camera_translation = config_.initial_translation;
  const Eigen::Vector2d principal = obs.camera(Eigen::Vector3d::Zero()).principal();

  // Re-solves T for a given orientation so that the start is already roughly
  // registered to the 2D evidence.
  auto place = [&](FitVariables v) {
    const MatrixX3dR kp = model_.keypoints(v.params);
    if (auto T = solve_translation(kp, obs.keypoints2d, obs.focal, principal)) v.camera_translation = *T;
    return v;
  };

  std::vector<FitVariables> out;
  if (obs.labels3d && obs.labels3d->keypoints3d.rows() == model_.n_keypoints()) {
    // Register the mean-shape rest torso onto the labelled torso.
    FitVariables v = base;
    v.params.theta.row(0).setZero();
    const MatrixX3dR rest = model_.keypoints(v.params);
    const MatrixX3dR rest_joints = model_.joints(v.params);
    MatrixX3dR a(config_.torso_keypoints.size(), 3), b(config_.torso_keypoints.size(), 3);
    for (std::size_t i = 0; i < config_.torso_keypoints.size(); ++i) {
      a.row(i) = rest.row(config_.torso_keypoints[i]);
      b.row(i) = obs.labels3d->keypoints3d.row(config_.torso_keypoints[i]);
    }
    if (auto rt = rigid_align(a, b)) {
      const auto& [R, t] = *rt;
      // R (x - J0) + J0 + gamma = R x + t
      const Eigen::Vector3d j0 = rest_joints.row(0).transpose();
      v.params.theta.row(0) = to_axis_angle(R).transpose();
      v.params.gamma = t + R * j0 - j0;
      out.push_back(place(v));
    }
  }
  std::mt19937_64 rng(config_.seed);
  std::uniform_real_distribution<double> yaw_dist(0.0, 2.0 * std::numbers::pi);
  for (int r = 0; static_cast<int>(out.size()) < config_.restarts; ++r) {
    const double yaw = r < 4 ? r * std::numbers::pi / 2.0 : yaw_dist(rng);
    FitVariables v = base;
    v.params.theta.row(0) = to_axis_angle(canonical_orientation(yaw)).transpose();
    out.push_back(place(v));
  }
  return out;
}

Fitter::StageOutcome Fitter::run_stage(const FitStage& stage, const Observation& obs, FitVariables start) const {
  const int nb = model_.n_beta();
  const int nj = model_.n_joints();
  ObjectiveSpec spec = stage_spec(stage);
  if (stage.torso_only) {
    // Without at least two torso points the global stage is ill-posed; use
    // whatever is visible instead.
    int torso_visible = 0;
    for (int k : config_.torso_keypoints) torso_visible += obs.keypoints2d.visible[k] ? 1 : 0;
    if (torso_visible < 2) spec.keypoint_mask.clear();
  }
  const Objective objective(model_, prior_, obs, spec);

  Eigen::VectorXd mask = Eigen::VectorXd::Zero(variable_count(nb, nj));
  if (stage.free_beta) mask.head(nb).setOnes();
  if (stage.free_root) mask.segment(nb, 3).setOnes();
  if (stage.free_pose) mask.segment(nb + 3, 3 * (nj - 1)).setOnes();
  if (stage.free_gamma) mask.segment(nb + 3 * nj, 3).setOnes();
  if (stage.free_camera) mask.tail(3).setOnes();

  Eigen::VectorXd x = to_vector(start);
  Eigen::VectorXd g(x.size());
  auto eval = [&](const Eigen::VectorXd& at, Eigen::VectorXd& grad) {
    try {
      const double f = objective.evaluate(from_vector(at, nb, nj), &grad).total;
      return std::isfinite(f) && grad.allFinite() ? f : std::numeric_limits<double>::infinity();
    } catch (const std::invalid_argument&) {
      return std::numeric_limits<double>::infinity();  // a keypoint crossed behind the camera
    }
  };

  double f = eval(x, g);
  if (!std::isfinite(f)) return {start, f, 0, false};
  Eigen::VectorXd best_x = x;
  double best_f = f;
  std::deque<double> history{f};

  Adam adam(x.size(), config_.adam);
  double step = stage.step_size;
  const double decay = stage.max_iterations > 0
                           ? std::pow(stage.final_step_fraction, 1.0 / stage.max_iterations)
                           : 1.0;
  for (int it = 1; it <= stage.max_iterations; ++it) {
    Eigen::VectorXd candidate = x;
    adam.step(candidate, g, mask, step);
    step *= decay;
    Eigen::VectorXd g_new(x.size());
    const double f_new = eval(candidate, g_new);
    if (!std::isfinite(f_new)) {
      // Back off to the best iterate with a smaller step.
      x = best_x;
      eval(x, g);
      step *= 0.5;
      adam.reset();
      history.push_back(best_f);
    } else {
      x = candidate;
      g = g_new;
      f = f_new;
      if (f < best_f) {
        best_f = f;
        best_x = x;
      }
      history.push_back(f);
    }
    if (static_cast<int>(history.size()) > config_.tolerance_window + 1) history.pop_front();
    if (static_cast<int>(history.size()) == config_.tolerance_window + 1 &&
        std::abs(history.front() - history.back()) <= config_.tolerance * std::abs(history.back())) {
      return {from_vector(best_x, nb, nj), best_f, it, true};
    }
  }
  return {from_vector(best_x, nb, nj), best_f, stage.max_iterations, stage.max_iterations == 0};
}

FitResult Fitter::fit(const Observation& obs) const {
  if (obs.keypoints2d.uv.rows() != model_.n_keypoints() ||
      static_cast<int>(obs.keypoints2d.visible.size()) != model_.n_keypoints())
    throw std::invalid_argument("fit: keypoint count does not match the template");
  const int visible = obs.keypoints2d.count_visible();
  if (visible < config_.min_visible)
    throw std::invalid_argument("fit: too few visible keypoints (" + std::to_string(visible) + " < " +
                                std::to_string(config_.min_visible) + ")");

  const Objective final_objective(model_, prior_, obs, final_spec());
  std::optional<FitResult> best;
  double best_value = std::numeric_limits<double>::infinity();
  const auto guesses = initial_guesses(obs);
  for (std::size_t r = 0; r < guesses.size(); ++r) {
    FitVariables v = guesses[r];
    FitResult result;
    result.converged = true;
    bool ok = true;
    for (const auto& stage : config_.stages) {
      auto outcome = run_stage(stage, obs, v);
      if (!std::isfinite(outcome.value)) {
        ok = false;
        break;
      }
      v = outcome.vars;
      result.stage_iterations.push_back(outcome.iterations);
      result.converged = result.converged && outcome.converged;
    }
    if (!ok) continue;
    LossReport report;
    try {
      report = final_objective.evaluate(v);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (!std::isfinite(report.total)) continue;
    if (report.total < best_value) {
      best_value = report.total;
      result.variables = v;
      result.report = report;
      result.restart = static_cast<int>(r);
      best = std::move(result);
    }
  }
  if (!best) throw std::runtime_error("fit: objective is non-finite for every initialization");
  return *best;
}

std::vector<BatchItem> batch_fit(const Fitter& fitter, const std::vector<Observation>& observations, int threads) {
  if (threads < 1) throw std::invalid_argument("batch_fit: threads must be >= 1");
  std::vector<BatchItem> out(observations.size());
  auto work = [&](std::size_t i) {
    try {
      out[i].result = fitter.fit(observations[i]);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(threads, std::max<std::size_t>(1, observations.size()));
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < observations.size(); ++i) work(i);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < observations.size(); i += n_threads) work(i);
    });
  for (auto& th : pool) th.join();
  return out;
}

namespace {

using detail::json;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* name) {
  const json& v = detail::field(j, name);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw ParseError(fmt::format("field '{}': expected a number or null", name));
  return v.get<double>();
}

}  // namespace

void save_fit_result(const FitResult& r, const std::string& path) {
  const Params& p = r.variables.params;
  json vars;
  vars["beta"] = detail::vector_to_json(p.beta);
  vars["theta"] = detail::vector_to_json(flatten_theta(p.theta));
  vars["gamma"] = detail::vector_to_json(p.gamma);
  vars["translation"] = detail::vector_to_json(r.variables.camera_translation);
  const LossComponents& c = r.report.components;
  json report;
  report["total"] = r.report.total;
  report["l2d"] = optional_json(c.l2d);
  report["l3d"] = optional_json(c.l3d);
  report["prior"] = optional_json(c.prior);
  json j;
  j["variables"] = vars;
  j["report"] = report;
  j["stage_iterations"] = r.stage_iterations;
  j["converged"] = r.converged;
  j["restart"] = r.restart;
  detail::write_json_file(path, j, 1);
}

FitResult load_fit_result(const std::string& path) {
  const json j = detail::read_json_file(path);
  FitResult r;
  try {
    const json& vars = detail::field(j, "variables");
    r.variables.params.beta = detail::vector_from_json(detail::field(vars, "beta"), "beta", -1);
    const Eigen::VectorXd theta = detail::vector_from_json(detail::field(vars, "theta"), "theta", -1);
    if (theta.size() == 0 || theta.size() % 3 != 0) throw ParseError("field 'theta': size must be a positive multiple of 3");
    r.variables.params.theta = Eigen::Map<const MatrixX3dR>(theta.data(), theta.size() / 3, 3);
    r.variables.params.gamma = detail::vector_from_json(detail::field(vars, "gamma"), "gamma", 3);
    r.variables.camera_translation = detail::vector_from_json(detail::field(vars, "translation"), "translation", 3);
    const json& rep = detail::field(j, "report");
    r.report.total = detail::scalar<double>(rep, "total");
    r.report.components.l2d = optional_from(rep, "l2d");
    r.report.components.l3d = optional_from(rep, "l3d");
    r.report.components.prior = optional_from(rep, "prior");
    r.stage_iterations = detail::scalar<std::vector<int>>(j, "stage_iterations");
    r.converged = detail::scalar<bool>(j, "converged");
    r.restart = detail::scalar<int>(j, "restart");
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", path, e.what()));
  }
  return r;
}

}  // namespace quadfit

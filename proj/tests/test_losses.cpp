#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "quadfit/camera.hpp"
#include "quadfit/error.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/objective.hpp"
#include "quadfit/toy_template.hpp"

using namespace quadfit;

namespace {

const ModelTemplate& toy() {
  static const ModelTemplate t = make_toy_template();
  return t;
}

// Brute-force triple loop straight from the printed formula.
double supcon_oracle(const Eigen::MatrixXd& z, const std::vector<int>& labels) {
  const int b = static_cast<int>(z.rows());
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    double denom = 0.0;
    for (int o = 0; o < b; ++o)
      if (o != i) denom += std::exp(z.row(i).dot(z.row(o)));
    double acc = 0.0;
    int np = 0;
    for (int p = 0; p < b; ++p)
      if (p != i && labels[p] == labels[i]) {
        acc += std::exp(z.row(i).dot(z.row(p))) / denom;
        ++np;
      }
    if (np > 0) total += -acc / np;
  }
  return total;
}

Params random_params(std::mt19937_64& rng, int nb, int nj, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Params p = Params::zeros(nb, nj);
  for (int i = 0; i < nb; ++i) p.beta[i] = n(rng);
  for (int i = 0; i < p.theta.size(); ++i) p.theta.data()[i] = n(rng);
  p.gamma << n(rng), n(rng), n(rng);
  return p;
}

double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace

TEST_CASE("weights carry the published values") {
  const LossWeights w;
  CHECK(w.lambda_3d == 0.05);
  CHECK(w.lambda_2d == 0.01);
  CHECK(w.lambda_prior == 0.001);
  CHECK(w.lambda_adv == 0.0005);
  CHECK(w.lambda_con == 0.0005);
  CHECK(w.inner_beta_3d == 0.01);
  CHECK(w.inner_theta_3d == 0.2);
  CHECK(w.inner_beta_prior == 0.5);
}

TEST_CASE("loss_3d identities") {
  Params gt = Params::zeros(4, 3);
  gt.beta << 0.1, 0.2, 0.3, 0.4;
  MatrixX3dR kp = MatrixX3dR::Random(5, 3);
  const Labels3d label{gt, kp};
  CHECK(loss_3d(gt, kp, label) == 0.0);

  Params pred = gt;
  pred.beta[0] += 1.0;
  CHECK(loss_3d(pred, kp, label) == doctest::Approx(0.01).epsilon(1e-15));

  MatrixX3dR off = kp;
  off(2, 0) += 0.1;
  CHECK(loss_3d(gt, off, label) == doctest::Approx(0.1).epsilon(1e-12));

  const Labels3d kp_only{std::nullopt, kp};
  CHECK(loss_3d(pred, off, kp_only) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK_THROWS_AS(loss_3d(gt, MatrixX3dR::Zero(4, 3), label), std::invalid_argument);
}

TEST_CASE("loss_2d identities and empty observation") {
  Camera cam;
  cam.translation << 0, 0, 5;
  MatrixX3dR kp(3, 3);
  kp << 0, 0, 0, 0.1, -0.2, 0, -0.1, 0.1, 0.5;
  const Projection proj = project(kp, cam);
  Keypoints2d gt{proj.pixels, {true, true, true}};
  CHECK(*loss_2d(kp, cam, gt) == 0.0);

  gt.visible = {false, true, false};
  gt.uv(1, 0) += 3.0;
  gt.uv(1, 1) -= 4.0;
  CHECK(*loss_2d(kp, cam, gt) == doctest::Approx(7.0 / 512.0).epsilon(1e-12));
  CHECK(*loss_2d(kp, cam, gt, {.normalize = false}) == doctest::Approx(7.0).epsilon(1e-12));

  gt.visible = {false, false, false};
  CHECK_FALSE(loss_2d(kp, cam, gt).has_value());
}

TEST_CASE("loss_prior identities and explicit-inverse oracle") {
  const PriorDistribution unit = make_toy_prior(3, 2, 1.0, 1.0);
  Params p = unit.mean();
  CHECK(loss_prior(p, unit) == 0.0);
  p.beta[0] = 1.0;
  CHECK(loss_prior(p, unit) == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int nb = 5, nj = 3;
    Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(nb, nb, [&] { return n(rng); });
    Eigen::MatrixXd c = Eigen::MatrixXd::NullaryExpr(3 * nj, 3 * nj, [&] { return n(rng); });
    const Eigen::MatrixXd sb = a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(nb, nb);
    const Eigen::MatrixXd st = c * c.transpose() + 0.5 * Eigen::MatrixXd::Identity(3 * nj, 3 * nj);
    const Eigen::VectorXd mb = Eigen::VectorXd::NullaryExpr(nb, [&] { return n(rng); });
    const Eigen::VectorXd mt = Eigen::VectorXd::NullaryExpr(3 * nj, [&] { return n(rng); });
    const PriorDistribution prior(mb, sb, mt, st);
    const Params q = random_params(rng, nb, nj, 1.0);
    const Eigen::VectorXd db = q.beta - mb;
    const Eigen::VectorXd dt = flatten_theta(q.theta) - mt;
    const double expect = 0.5 * db.dot(sb.inverse() * db) + dt.dot(st.inverse() * dt);
    CHECK(loss_prior(q, prior) == doctest::Approx(expect).epsilon(1e-9));

    // Invariance under a simultaneous orthogonal change of basis.
    const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
    const Eigen::MatrixXd qt = Eigen::HouseholderQR<Eigen::MatrixXd>(c).householderQ();
    const PriorDistribution rotated(qb * mb, qb * sb * qb.transpose(), qt * mt, qt * st * qt.transpose());
    Params qr = q;
    qr.beta = qb * q.beta;
    const Eigen::VectorXd tr = qt * flatten_theta(q.theta);
    qr.theta = Eigen::Map<const MatrixX3dR>(tr.data(), nj, 3);
    CHECK(loss_prior(qr, rotated) == doctest::Approx(loss_prior(q, prior)).epsilon(1e-9));
  }
}

TEST_CASE("prior rejects non-SPD covariance") {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(1, 1) = -1.0;
  CHECK_THROWS_AS(PriorDistribution(Eigen::VectorXd::Zero(2), bad, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)),
                  ValidationError);
}

TEST_CASE("prior file round trip") {
  const auto path = (std::filesystem::temp_directory_path() / "quadfit_prior.json").string();
  const PriorDistribution prior = make_toy_prior(4, 3, 0.7, 0.2);
  save_prior(prior, path);
  const PriorDistribution back = load_prior(path);
  CHECK(back.sigma_beta() == prior.sigma_beta());
  CHECK(back.mu_theta() == prior.mu_theta());
}

TEST_CASE("loss_adv") {
  const std::vector<double> ones{1, 1, 1};
  CHECK(loss_adv(ones) == 0.0);
  const std::vector<double> zeros{0, 0, 0};
  CHECK(loss_adv(zeros) == 3.0);
  const std::vector<double> mixed{0.5, 1.5};
  CHECK(loss_adv(mixed) == 0.5);
  CHECK_THROWS_AS(loss_adv(std::vector<double>{}), std::invalid_argument);

  const PriorDistribution prior = make_toy_prior(3, 2);
  const MahalanobisDiscriminator disc(prior);
  const auto at_mean = disc.score(prior.mean());
  CHECK(at_mean.size() == 2);
  CHECK(at_mean[0] == doctest::Approx(0.5));
  Params far = prior.mean();
  far.beta.setConstant(5.0);
  CHECK(disc.score(far)[0] < 1e-10);
}

TEST_CASE("loss_supcon") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  EmbeddingBatch pair{Eigen::MatrixXd::NullaryExpr(2, 8, [&] { return n(rng); }), {3, 3}};
  CHECK(loss_supcon(pair) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(loss_supcon(pair, {.normalize = false}) == doctest::Approx(-2.0).epsilon(1e-15));
  pair.labels = {1, 2};
  CHECK(loss_supcon(pair) == 0.0);

  Eigen::MatrixXd z(3, 2);
  z << 0.3, -0.1, 0.2, 0.4, -0.5, 0.1;
  const EmbeddingBatch triple{z, {0, 0, 1}};
  CHECK(loss_supcon(triple, {.normalize = false}) == doctest::Approx(supcon_oracle(z, {0, 0, 1})).epsilon(1e-12));

  EmbeddingBatch single{Eigen::MatrixXd::Ones(1, 4), {0}};
  CHECK_THROWS_AS(loss_supcon(single), std::invalid_argument);

  // Large unnormalized similarities stay finite thanks to the max shift.
  EmbeddingBatch huge{Eigen::MatrixXd::Constant(4, 2, 40.0), {0, 0, 1, 1}};
  CHECK(std::isfinite(loss_supcon(huge, {.normalize = false})));

  // Log form: -log of the same ratio.
  const double log_form = loss_supcon(triple, {.normalize = false, .log_form = true});
  double expect = 0.0;
  {
    auto ratio = [&](int i, int p) {
      double d = 0;
      for (int o = 0; o < 3; ++o)
        if (o != i) d += std::exp(z.row(i).dot(z.row(o)));
      return std::exp(z.row(i).dot(z.row(p))) / d;
    };
    expect = -std::log(ratio(0, 1)) - std::log(ratio(1, 0));
  }
  CHECK(log_form == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("property: loss_supcon is invariant to batch order") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> fam(0, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const int b = 16;
    EmbeddingBatch batch{Eigen::MatrixXd::NullaryExpr(b, 6, [&] { return n(rng); }), {}};
    for (int i = 0; i < b; ++i) batch.labels.push_back(fam(rng));
    std::vector<int> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    EmbeddingBatch shuffled{Eigen::MatrixXd(b, 6), std::vector<int>(b)};
    for (int i = 0; i < b; ++i) {
      shuffled.z.row(i) = batch.z.row(perm[i]);
      shuffled.labels[i] = batch.labels[perm[i]];
    }
    CHECK(loss_supcon(shuffled) == doctest::Approx(loss_supcon(batch)).epsilon(1e-12));
  }
}

TEST_CASE("loss_total") {
  const LossComponents all{1.0, 1.0, 1.0, 1.0, 1.0};
  CHECK(loss_total(all).total == doctest::Approx(0.062).epsilon(1e-14));
  LossComponents only2d;
  only2d.l2d = 2.0;
  const LossReport r = loss_total(only2d);
  CHECK(r.total == doctest::Approx(0.02).epsilon(1e-15));
  CHECK_FALSE(r.components.l3d.has_value());
  CHECK_THROWS_AS(loss_total(LossComponents{}), std::invalid_argument);

  LossComponents doubled = all;
  *doubled.prior *= 2.0;
  CHECK(loss_total(doubled).total - loss_total(all).total == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("grad_fd basics") {
  FitVariables at{Params::zeros(3, 2), Eigen::Vector3d::Zero()};
  at.params.beta[0] = 1.0;
  const Eigen::VectorXd g = grad_fd([](const FitVariables& v) { return v.params.beta.squaredNorm(); }, at);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(g.size());
  expect[0] = 2.0;
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-8);

  const PriorDistribution prior = make_toy_prior(3, 2);
  const FitVariables mean{prior.mean(), Eigen::Vector3d::Zero()};
  const Eigen::VectorXd gp = grad_fd([&](const FitVariables& v) { return loss_prior(v.params, prior); }, mean);
  CHECK(gp.cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(grad_fd([](const FitVariables&) { return NAN; }, mean), std::domain_error);
}

TEST_CASE("objective gradient matches central differences on random toy instances") {
  const ModelTemplate& t = toy();
  const SkinnedModel model(t);
  const PriorDistribution prior = make_toy_prior(t.n_beta(), t.n_joints(), 1.0, 0.5);
  std::mt19937_64 rng(123);
  std::normal_distribution<double> n(0.0, 1.0);

  for (int trial = 0; trial < 10; ++trial) {
    const Params truth = random_params(rng, t.n_beta(), t.n_joints(), 0.3);
    Observation obs;
    const Eigen::Vector3d cam_t(0.1, -0.2, 6.0);
    const MatrixX3dR kp = model.keypoints(truth);
    obs.keypoints2d = {project(kp, obs.camera(cam_t)).pixels, std::vector<bool>(kp.rows(), true)};
    obs.keypoints2d.visible[3] = false;
    obs.labels3d = Labels3d{random_params(rng, t.n_beta(), t.n_joints(), 0.3), kp};

    FitVariables at{random_params(rng, t.n_beta(), t.n_joints(), 0.3), cam_t + Eigen::Vector3d(0.05, 0.02, 0.3)};
    for (int mode = 0; mode < 3; ++mode) {
      ObjectiveSpec spec;
      spec.use_2d = mode == 0;
      spec.use_3d = mode == 1;
      spec.use_prior = mode == 2;
      const Objective objective(model, prior, obs, spec);
      Eigen::VectorXd analytic;
      objective.evaluate(at, &analytic);
      const Eigen::VectorXd fd = grad_fd([&](const FitVariables& v) { return objective.evaluate(v).total; }, at);
      CHECK(relative_error(analytic, fd) < 1e-3);
    }
  }
}

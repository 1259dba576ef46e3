#include "quadfit/metrics.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json_util.hpp"
#include "quadfit/error.hpp"

namespace quadfit {

MatrixX3dR Similarity::apply(const MatrixX3dR& points) const {
  MatrixX3dR out = (scale * points * rotation.transpose()).rowwise() + translation.transpose();
  return out;
}

Similarity procrustes_align(const MatrixX3dR& x, const MatrixX3dR& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("procrustes_align: point counts differ");
  if (x.rows() < 3) throw std::invalid_argument("procrustes_align: need at least 3 points");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("procrustes_align: non-finite input");
  const double n = static_cast<double>(x.rows());
  const Eigen::RowVector3d mx = x.colwise().mean();
  const Eigen::RowVector3d my = y.colwise().mean();
  const Eigen::MatrixX3d x0 = x.rowwise() - mx;
  const Eigen::MatrixX3d y0 = y.rowwise() - my;

  const double var_x = x0.squaredNorm() / n;
  Eigen::JacobiSVD<Eigen::MatrixX3d> shape(x0);
  const auto sx = shape.singularValues();
  if (!(var_x > 0.0) || sx[1] <= 1e-9 * sx[0])
    throw DegenerateConfiguration("procrustes_align: source points are collinear or coincident");

  const Eigen::Matrix3d cov = y0.transpose() * x0 / n;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d s = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s[2] = -1.0;

  Similarity out;
  out.rotation = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  out.scale = svd.singularValues().dot(s) / var_x;
  out.translation = my.transpose() - out.scale * out.rotation * mx.transpose();
  return out;
}

namespace {

double aligned_mean_distance(const MatrixX3dR& pred, const MatrixX3dR& gt) {
  const MatrixX3dR aligned = procrustes_align(pred, gt).apply(pred);
  return (aligned - gt).rowwise().norm().mean();
}

void check_2d(const Eigen::MatrixX2d& pred, const Eigen::MatrixX2d& gt, const std::vector<bool>& visible) {
  if (pred.rows() != gt.rows() || static_cast<Eigen::Index>(visible.size()) != gt.rows())
    throw std::invalid_argument("keypoint metrics: size mismatch");
  bool any = false;
  for (bool v : visible) any = any || v;
  if (!any) throw std::invalid_argument("keypoint metrics: no visible keypoint");
}

}  // namespace

double pa_mpjpe(const MatrixX3dR& pred, const MatrixX3dR& gt) { return aligned_mean_distance(pred, gt); }
double pa_mpvpe(const MatrixX3dR& pred, const MatrixX3dR& gt) { return aligned_mean_distance(pred, gt); }

void PckSpec::check(int n_keypoints) const {
  if (mode == PckMode::fraction && !(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("PckSpec: fraction must lie in (0, 1]");
  if (head < 0 || head >= n_keypoints || tail < 0 || tail >= n_keypoints)
    throw std::invalid_argument("PckSpec: head/tail index out of range");
}

std::optional<double> reference_length(const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
                                       PckNormalizer normalizer, int head, int tail) {
  if (normalizer == PckNormalizer::hth) {
    if (!visible.at(head) || !visible.at(tail)) return std::nullopt;
    return (gt.row(head) - gt.row(tail)).norm();
  }
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(INFINITY);
  Eigen::Vector2d hi = Eigen::Vector2d::Constant(-INFINITY);
  for (Eigen::Index k = 0; k < gt.rows(); ++k) {
    if (!visible[k]) continue;
    lo = lo.cwiseMin(gt.row(k).transpose());
    hi = hi.cwiseMax(gt.row(k).transpose());
  }
  if (!lo.allFinite()) return std::nullopt;
  return (hi - lo).maxCoeff();
}

std::optional<double> pck(const Eigen::MatrixX2d& pred, const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
                          const PckSpec& spec) {
  check_2d(pred, gt, visible);
  spec.check(static_cast<int>(gt.rows()));
  double threshold;
  if (spec.mode == PckMode::hth) {
    const auto hth = reference_length(gt, visible, PckNormalizer::hth, spec.head, spec.tail);
    if (!hth) return std::nullopt;
    threshold = 0.5 * *hth;
  } else {
    const auto ref = reference_length(gt, visible, spec.normalizer, spec.head, spec.tail);
    if (!ref) return std::nullopt;
    threshold = spec.fraction * *ref;
  }
  int hits = 0, total = 0;
  for (Eigen::Index k = 0; k < gt.rows(); ++k) {
    if (!visible[k]) continue;
    ++total;
    if ((pred.row(k) - gt.row(k)).norm() < threshold) ++hits;
  }
  return static_cast<double>(hits) / total;
}

double auc(const Eigen::MatrixX2d& pred, const Eigen::MatrixX2d& gt, const std::vector<bool>& visible,
           double normalizer) {
  check_2d(pred, gt, visible);
  if (!(normalizer > 0.0) || !std::isfinite(normalizer)) throw std::invalid_argument("auc: normalizer must be > 0");
  std::vector<double> err;
  for (Eigen::Index k = 0; k < gt.rows(); ++k)
    if (visible[k]) err.push_back((pred.row(k) - gt.row(k)).norm() / normalizer);
  // Inclusive here so an exact prediction scores PCK(0) = 1 and the area is 1.
  auto curve = [&](double t) {
    int hits = 0;
    for (double e : err) hits += e <= t ? 1 : 0;
    return static_cast<double>(hits) / err.size();
  };
  double area = 0.0;
  double prev = curve(0.0);
  for (int i = 1; i <= kAucSteps; ++i) {
    const double cur = curve(static_cast<double>(i) / kAucSteps);
    area += 0.5 * (prev + cur) / kAucSteps;
    prev = cur;
  }
  return area;
}

InstanceMetrics evaluate_instance(const EvalInstance& in, const MetricsConfig& config) {
  InstanceMetrics out;
  out.id = in.id;
  if (in.pred_joints && in.gt_joints) out.pa_mpjpe = pa_mpjpe(*in.pred_joints, *in.gt_joints);
  if (in.pred_vertices && in.gt_vertices) out.pa_mpvpe = pa_mpvpe(*in.pred_vertices, *in.gt_vertices);

  PckSpec spec;
  spec.head = config.head;
  spec.tail = config.tail;
  spec.normalizer = config.normalizer;
  out.pck_hth = pck(in.pred2d, in.gt2d, in.visible, spec);
  spec.mode = PckMode::fraction;
  for (double f : config.fractions) {
    spec.fraction = f;
    out.pck_fraction.push_back(pck(in.pred2d, in.gt2d, in.visible, spec));
  }
  const auto ref = reference_length(in.gt2d, in.visible, config.normalizer, config.head, config.tail);
  if (ref && *ref > 0.0) out.auc = auc(in.pred2d, in.gt2d, in.visible, *ref);
  return out;
}

namespace {

struct Mean {
  double sum = 0.0;
  int n = 0;
  void add(const std::optional<double>& v) {
    if (!v) return;
    sum += *v;
    ++n;
  }
  std::optional<double> value() const { return n > 0 ? std::optional<double>(sum / n) : std::nullopt; }
};

}  // namespace

MetricsReport summarize(const std::vector<InstanceMetrics>& instances, const MetricsConfig& config) {
  MetricsReport r;
  r.fractions = config.fractions;
  r.n_instances = static_cast<int>(instances.size());
  Mean mpjpe, mpvpe, hth, area;
  std::vector<Mean> fr(config.fractions.size());
  for (const auto& m : instances) {
    mpjpe.add(m.pa_mpjpe);
    mpvpe.add(m.pa_mpvpe);
    hth.add(m.pck_hth);
    if (!m.pck_hth) ++r.n_hth_skipped;
    area.add(m.auc);
    if (m.pck_fraction.size() != fr.size()) throw std::invalid_argument("summarize: fraction count mismatch");
    for (std::size_t i = 0; i < fr.size(); ++i) fr[i].add(m.pck_fraction[i]);
  }
  r.pa_mpjpe = mpjpe.value();
  r.pa_mpvpe = mpvpe.value();
  r.pck_hth = hth.value();
  r.auc = area.value();
  for (const auto& f : fr) r.pck_fraction.push_back(f.value());
  return r;
}

namespace {

detail::json opt(const std::optional<double>& v) { return v ? detail::json(*v) : detail::json(nullptr); }

}  // namespace

std::string metrics_json(const MetricsReport& r) {
  detail::json j;
  j["n_instances"] = r.n_instances;
  j["n_hth_skipped"] = r.n_hth_skipped;
  j["pa_mpjpe"] = opt(r.pa_mpjpe);
  j["pa_mpvpe"] = opt(r.pa_mpvpe);
  j["pck_hth"] = opt(r.pck_hth);
  detail::json fr = detail::json::object();
  for (std::size_t i = 0; i < r.fractions.size(); ++i) fr[fmt::format("{:g}", r.fractions[i])] = opt(r.pck_fraction[i]);
  j["pck"] = fr;
  j["auc"] = opt(r.auc);
  return j.dump(2);
}

void write_metrics_json(const MetricsReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << metrics_json(report) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

void write_metrics_csv(const std::vector<InstanceMetrics>& instances, const std::vector<double>& fractions,
                       const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); };
  os << "id,pa_mpjpe,pa_mpvpe,pck_hth";
  for (double f : fractions) os << fmt::format(",pck_{:g}", f);
  os << ",auc\n";
  for (const auto& m : instances) {
    os << m.id << ',' << cell(m.pa_mpjpe) << ',' << cell(m.pa_mpvpe) << ',' << cell(m.pck_hth);
    if (m.pck_fraction.size() != fractions.size()) throw std::invalid_argument("write_metrics_csv: fraction count mismatch");
    for (const auto& f : m.pck_fraction) os << ',' << cell(f);
    os << ',' << cell(m.auc) << '\n';
  }
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace quadfit

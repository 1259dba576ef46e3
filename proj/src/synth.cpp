#include "quadfit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json_util.hpp"
#include "quadfit/error.hpp"
#include "quadfit/toy_template.hpp"

namespace quadfit {

using detail::json;

// ---------------------------------------------------------------- pose library

PoseLibrary make_pose_library(int n_joints, int count, std::uint64_t seed, double noise) {
  if (n_joints < 1 || count < 1) throw std::invalid_argument("make_pose_library: need joints and poses");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  // Leg chains of the toy layout: upper, middle, lower, paw.
  constexpr std::array<int, 4> leg_base = {8, 12, 16, 20};
  constexpr std::array<double, 4> leg_phase = {0.0, std::numbers::pi, std::numbers::pi / 2, 3 * std::numbers::pi / 2};
  PoseLibrary lib;
  for (int i = 0; i < count; ++i) {
    MatrixX3dR theta = MatrixX3dR::Zero(n_joints, 3);
    const double phase = phase_dist(rng);
    for (int leg = 0; leg < 4; ++leg) {
      const double s = std::sin(phase + leg_phase[leg]);
      const double swing[4] = {0.35 * s, -0.25 * std::max(0.0, s), 0.2 * std::max(0.0, -s), 0.1 * s};
      for (int k = 0; k < 4; ++k) {
        const int j = leg_base[leg] + k;
        if (j < n_joints) theta(j, 2) = swing[k];
      }
    }
    // Neck and tail sway.
    if (n_joints > 3) theta(3, 1) = 0.2 * std::sin(phase * 0.5);
    for (int j = 24; j < n_joints; ++j) theta(j, 1) = 0.08 * std::sin(phase + 0.4 * (j - 24));
    for (int j = 1; j < n_joints; ++j)
      for (int c = 0; c < 3; ++c) theta(j, c) += g(rng);
    lib.poses.push_back(std::move(theta));
  }
  return lib;
}

void save_pose_library(const PoseLibrary& library, const std::string& path) {
  json j = json::array();
  for (const auto& p : library.poses) j.push_back(detail::matrix_to_json(p));
  detail::write_json_file(path, j);
}

PoseLibrary load_pose_library(const std::string& path) {
  const json j = detail::read_json_file(path);
  if (!j.is_array()) throw ParseError(path + ": pose library must be a JSON list");
  PoseLibrary lib;
  for (const auto& entry : j) {
    if (!entry.is_array()) throw ParseError(path + ": pose entries must be lists of rows");
    lib.poses.push_back(detail::matrix_from_json<MatrixX3dR>(entry, "pose", -1, 3));
    if (lib.poses.back().rows() != lib.poses.front().rows())
      throw ValidationError(path + ": pose rows disagree on the joint count");
  }
  return lib;
}

// ---------------------------------------------------------------- sampling

std::uint64_t scene_seed(std::uint64_t root, std::uint64_t index) {
  std::uint64_t z = root + (index + 1) * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SceneSample sample_scene(std::mt19937_64& rng, const PriorDistribution& prior, const PoseLibrary& library,
                         const SceneConfig& config) {
  if (library.poses.empty()) throw std::invalid_argument("sample_scene: empty pose library");
  const int nj = prior.n_joints();
  for (const auto& p : library.poses)
    if (p.rows() != nj) throw std::invalid_argument("sample_scene: pose library rows do not match the prior");
  if ((config.translation_min.array() > config.translation_max.array()).any())
    throw std::invalid_argument("sample_scene: empty translation box");

  SceneSample s;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(prior.n_beta());
  for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
  s.params.beta = prior.mu_beta() + prior.chol_beta() * z;

  std::uniform_int_distribution<int> pick(0, static_cast<int>(library.poses.size()) - 1);
  s.pose_index = pick(rng);
  s.params.theta = library.poses[s.pose_index];
  // uniform_real_distribution is half-open [-pi, pi); drop -pi to keep it open.
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  for (int c = 0; c < 3; ++c) {
    double a;
    do a = angle(rng);
    while (a <= -std::numbers::pi);
    s.params.theta(0, c) = a;
  }
  s.params.gamma.setZero();

  s.camera.focal = config.focal;
  s.camera.width = config.width;
  s.camera.height = config.height;
  for (int c = 0; c < 3; ++c) {
    std::uniform_real_distribution<double> t(config.translation_min[c], config.translation_max[c]);
    s.camera.translation[c] = t(rng);
  }
  std::uniform_int_distribution<int> species(0, static_cast<int>(kSpecies.size()) - 1);
  const int sp = species(rng);
  s.species = kSpecies[sp];
  s.family = kSpeciesFamily[sp];
  return s;
}

SceneSample sample_scene(std::uint64_t root, std::uint64_t index, const PriorDistribution& prior,
                         const PoseLibrary& library, const SceneConfig& config) {
  const std::uint64_t seed = scene_seed(root, index);
  std::mt19937_64 rng(seed);
  SceneSample s = sample_scene(rng, prior, library, config);
  s.seed = seed;
  return s;
}

namespace {

json camera_to_json(const Camera& c) {
  return {{"focal", c.focal}, {"T", detail::vector_to_json(c.translation)}, {"width", c.width}, {"height", c.height}};
}

CameraRecord camera_record_from_json(const json& j) {
  CameraRecord c;
  c.focal = detail::scalar<double>(j, "focal");
  c.translation = detail::vector_from_json(detail::field(j, "T"), "T", 3);
  c.width = detail::scalar<int>(j, "width");
  c.height = detail::scalar<int>(j, "height");
  return c;
}

}  // namespace

void save_scene(const SceneSample& s, const std::string& path) {
  json j;
  j["beta"] = detail::vector_to_json(s.params.beta);
  j["theta"] = detail::matrix_to_json(s.params.theta);
  j["gamma"] = detail::vector_to_json(s.params.gamma);
  j["camera"] = camera_to_json(s.camera);
  j["species"] = s.species;
  j["family"] = s.family;
  j["pose_index"] = s.pose_index;
  j["seed"] = s.seed;
  detail::write_json_file(path, j, 1);
}

SceneSample load_scene(const std::string& path) {
  const json j = detail::read_json_file(path);
  SceneSample s;
  s.params.beta = detail::vector_from_json(detail::field(j, "beta"), "beta", -1);
  s.params.theta = detail::matrix_from_json<MatrixX3dR>(detail::field(j, "theta"), "theta", -1, 3);
  s.params.gamma = detail::vector_from_json(detail::field(j, "gamma"), "gamma", 3);
  s.camera = camera_record_from_json(detail::field(j, "camera")).camera();
  s.species = detail::scalar<std::string>(j, "species");
  s.family = detail::scalar<std::string>(j, "family");
  s.pose_index = detail::scalar<int>(j, "pose_index");
  s.seed = detail::scalar<std::uint64_t>(j, "seed");
  return s;
}

// ---------------------------------------------------------------- visibility

std::vector<bool> keypoint_visibility(const MatrixX3dR& kp, const Camera& camera, const DepthMap& depth, double eps) {
  check_camera(camera);
  if (!depth.same_size(camera.width, camera.height) || depth.channels != 1)
    throw std::invalid_argument("keypoint_visibility: depth map does not match the camera image");
  if (eps < 0.0) {
    double sum = 0.0;
    std::size_t n = 0;
    for (float d : depth.data)
      if (std::isfinite(d)) {
        sum += d;
        ++n;
      }
    eps = n > 0 ? 1e-3 * sum / n : 0.0;
  }
  const Projection pr = project(kp, camera);
  std::vector<bool> vis(kp.rows(), false);
  for (Eigen::Index k = 0; k < kp.rows(); ++k) {
    if (!pr.valid[k]) continue;
    const double u = pr.pixels(k, 0), v = pr.pixels(k, 1);
    if (!(u >= 0.0 && u < camera.width && v >= 0.0 && v < camera.height)) continue;
    const double dp = depth.at(static_cast<int>(u), static_cast<int>(v));
    // An uncovered pixel has no surface to compare against: not visible.
    vis[k] = std::isfinite(dp) && pr.depth[k] <= dp + eps;
  }
  return vis;
}

// ---------------------------------------------------------------- filtering

CycleResult cycle_consistency(const Mask& a, const Mask& b, double threshold) {
  if (!a.same_size(b.width, b.height) || a.channels != b.channels)
    throw std::invalid_argument("cycle_consistency: mask sizes differ");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("cycle_consistency: threshold outside [0, 1]");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  if (uni == 0) throw std::domain_error("cycle_consistency: both masks are empty, IoU undefined");
  CycleResult r;
  r.iou = static_cast<double>(inter) / static_cast<double>(uni);
  r.accepted = r.iou >= threshold;
  return r;
}

FilterDecision classify(double iou, double threshold, double floor) {
  if (iou >= threshold) return FilterDecision::accept;
  if (iou >= floor) return FilterDecision::uncertain;
  return FilterDecision::reject;
}

const char* to_string(FilterDecision d) {
  switch (d) {
    case FilterDecision::accept:
      return "accept";
    case FilterDecision::uncertain:
      return "uncertain";
    case FilterDecision::reject:
      return "reject";
  }
  return "?";
}

// ---------------------------------------------------------------- annotations

Camera CameraRecord::camera() const {
  Camera c;
  c.focal = focal;
  c.translation = translation;
  c.width = width;
  c.height = height;
  return c;
}

std::vector<bool> AnnotationRecord::visible() const {
  std::vector<bool> v(keypoints2d.rows());
  for (Eigen::Index k = 0; k < keypoints2d.rows(); ++k) v[k] = keypoints2d(k, 2) != 0.0;
  return v;
}

Keypoints2d AnnotationRecord::keypoints() const { return {keypoints2d.leftCols<2>(), visible()}; }

void validate(const AnnotationRecord& r) {
  if (r.keypoints2d.rows() != kNumKeypoints) throw ValidationError("annotation: keypoints2d must have 26 rows");
  if (r.keypoints3d && r.keypoints3d->rows() != kNumKeypoints)
    throw ValidationError("annotation: keypoints3d must have 26 rows");
  if (r.beta.has_value() != r.theta.has_value() || r.beta.has_value() != r.gamma.has_value())
    throw ValidationError("annotation: beta/theta/gamma must be all present or all null");
  if (!(r.camera.focal > 0.0) || r.camera.width <= 0 || r.camera.height <= 0)
    throw ValidationError("annotation: invalid camera");
  const auto& b = r.bbox;
  if (!(b[0] <= b[2] && b[1] <= b[3])) throw ValidationError("annotation: bbox is inverted");
  for (Eigen::Index k = 0; k < r.keypoints2d.rows(); ++k) {
    const double v = r.keypoints2d(k, 2);
    if (v != 0.0 && v != 1.0) throw ValidationError("annotation: visibility must be 0 or 1");
    if (v == 0.0) continue;
    const double u = r.keypoints2d(k, 0), y = r.keypoints2d(k, 1);
    if (!(u >= 0.0 && u < r.camera.width && y >= 0.0 && y < r.camera.height))
      throw ValidationError(fmt::format("annotation: visible keypoint {} projects outside the image", k));
  }
}

Observation observation_from_record(const AnnotationRecord& r, bool use_3d) {
  Observation obs;
  obs.keypoints2d = r.keypoints();
  obs.focal = r.camera.focal;
  obs.width = r.camera.width;
  obs.height = r.camera.height;
  if (use_3d && r.keypoints3d) obs.labels3d = Labels3d{std::nullopt, *r.keypoints3d};
  return obs;
}

void save_annotation(const AnnotationRecord& r, const std::string& path) {
  validate(r);
  json j;
  j["image"] = r.image;
  j["species"] = r.species;
  j["family"] = r.family;
  j["beta"] = r.beta ? detail::vector_to_json(*r.beta) : json(nullptr);
  j["theta"] = r.theta ? detail::vector_to_json(flatten_theta(*r.theta)) : json(nullptr);
  j["gamma"] = r.gamma ? detail::vector_to_json(*r.gamma) : json(nullptr);
  j["camera"] = camera_to_json(r.camera.camera());
  j["keypoints3d"] = r.keypoints3d ? detail::matrix_to_json(*r.keypoints3d) : json(nullptr);
  j["keypoints2d"] = detail::matrix_to_json(r.keypoints2d);
  j["bbox"] = r.bbox;
  j["mask"] = r.mask;
  j["depth"] = r.depth;
  j["source"] = r.source;
  detail::write_json_file(path, j, 1);
}

AnnotationRecord load_annotation(const std::string& path) {
  const json j = detail::read_json_file(path);
  AnnotationRecord r;
  try {
    r.image = detail::scalar<std::string>(j, "image");
    r.species = detail::scalar<std::string>(j, "species");
    r.family = detail::scalar<std::string>(j, "family");
    if (const json& b = detail::field(j, "beta"); !b.is_null()) r.beta = detail::vector_from_json(b, "beta", -1);
    if (const json& t = detail::field(j, "theta"); !t.is_null()) {
      const Eigen::VectorXd flat = detail::vector_from_json(t, "theta", -1);
      if (flat.size() % 3 != 0) throw ParseError("field 'theta': length must be a multiple of 3");
      r.theta = MatrixX3dR(Eigen::Map<const MatrixX3dR>(flat.data(), flat.size() / 3, 3));
    }
    if (const json& g = detail::field(j, "gamma"); !g.is_null()) r.gamma = detail::vector_from_json(g, "gamma", 3);
    r.camera = camera_record_from_json(detail::field(j, "camera"));
    if (const json& k = detail::field(j, "keypoints3d"); !k.is_null())
      r.keypoints3d = detail::matrix_from_json<MatrixX3dR>(k, "keypoints3d", kNumKeypoints, 3);
    r.keypoints2d = detail::matrix_from_json<Eigen::MatrixX3d>(detail::field(j, "keypoints2d"), "keypoints2d",
                                                              kNumKeypoints, 3);
    const Eigen::VectorXd bbox = detail::vector_from_json(detail::field(j, "bbox"), "bbox", 4);
    for (int i = 0; i < 4; ++i) r.bbox[i] = bbox[i];
    r.mask = detail::scalar<std::string>(j, "mask");
    r.depth = detail::scalar<std::string>(j, "depth");
    r.source = detail::scalar<std::string>(j, "source");
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
  validate(r);
  return r;
}

AnnotationRecord emit_annotation(const SceneSample& sample, const PosedMesh& posed, const ConditionImages& images,
                                 const std::vector<bool>& visibility, const AnnotationPaths& paths,
                                 const std::string& source) {
  const Camera& cam = sample.camera;
  if (!images.mask.same_size(cam.width, cam.height) || !images.depth.same_size(cam.width, cam.height))
    throw ValidationError("emit_annotation: condition images do not match the camera");
  if (posed.keypoints3d.rows() != kNumKeypoints || static_cast<int>(visibility.size()) != kNumKeypoints)
    throw ValidationError("emit_annotation: expected 26 keypoints and visibility flags");

  int x0 = cam.width, y0 = cam.height, x1 = -1, y1 = -1;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      if (images.mask.at(x, y)) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) throw ValidationError("emit_annotation: empty mask");

  AnnotationRecord r;
  r.image = paths.image;
  r.mask = paths.mask;
  r.depth = paths.depth;
  r.species = sample.species;
  r.family = sample.family;
  r.source = source;
  r.beta = sample.params.beta;
  r.theta = sample.params.theta;
  r.gamma = sample.params.gamma;
  r.camera = CameraRecord{cam.focal, cam.translation, cam.width, cam.height};
  r.keypoints3d = posed.keypoints3d;
  const Projection pr = project(posed.keypoints3d, cam);
  r.keypoints2d.resize(kNumKeypoints, 3);
  for (int k = 0; k < kNumKeypoints; ++k) {
    r.keypoints2d(k, 0) = pr.pixels(k, 0);
    r.keypoints2d(k, 1) = pr.pixels(k, 1);
    r.keypoints2d(k, 2) = visibility[k] ? 1.0 : 0.0;
  }
  // Pixel x covers [x, x + 1); pad and clamp to the image.
  r.bbox = {std::max(0.0, double(x0 - kBboxPad)), std::max(0.0, double(y0 - kBboxPad)),
            std::min(double(cam.width), double(x1 + 1 + kBboxPad)),
            std::min(double(cam.height), double(y1 + 1 + kBboxPad))};
  validate(r);
  return r;
}

// ---------------------------------------------------------------- manifest

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({detail::scalar<std::string>(j, "record"), detail::scalar<std::string>(j, "source")});
    } catch (const json::parse_error& e) {
      throw ParseError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
  }
  return out;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& e : entries) os << json{{"record", e.record}, {"source", e.source}}.dump() << '\n';
  if (!os) throw IoError("failed writing " + path);
}

std::string resolve_record_path(const std::string& manifest_path, const std::string& record) {
  const std::filesystem::path p(record);
  if (p.is_absolute()) return record;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

// ---------------------------------------------------------------- pipeline

AnnotationRecord render_scene(const ModelTemplate& tmpl, const SceneSample& sample, const std::string& out_dir,
                              const std::string& stem, const RgbImage* background) {
  const PosedMesh posed = pose_mesh(tmpl, sample.params);
  const ConditionImages images = rasterize(posed.vertices, tmpl.faces, sample.camera);
  const std::vector<bool> vis = keypoint_visibility(posed.keypoints3d, sample.camera, images.depth);

  const AnnotationPaths paths{stem + ".png", stem + "_mask.png", stem + "_depth.pfm"};
  AnnotationRecord record = emit_annotation(sample, posed, images, vis, paths);

  // Stand-in for the generated photo: depth-shaded silhouette over a background.
  const int w = sample.camera.width, h = sample.camera.height;
  float dmin = INFINITY, dmax = -INFINITY;
  for (float d : images.depth.data)
    if (std::isfinite(d)) {
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  RgbImage fg(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float d = images.depth.at(x, y);
      if (!std::isfinite(d)) continue;
      const double t = dmax > dmin ? (d - dmin) / (dmax - dmin) : 0.0;
      const auto shade = static_cast<std::uint8_t>(230 - 150 * t);
      fg.at(x, y, 0) = shade;
      fg.at(x, y, 1) = static_cast<std::uint8_t>(shade * 0.8);
      fg.at(x, y, 2) = static_cast<std::uint8_t>(shade * 0.6);
    }
  const RgbImage bg = background ? *background : RgbImage(w, h, 3, 96);
  const std::filesystem::path dir(out_dir);
  write_rgb_png(composite_background(fg, images.mask, bg), (dir / paths.image).string());
  write_mask_png(images.mask, (dir / paths.mask).string());
  write_depth_pfm(images.depth, (dir / paths.depth).string());
  save_annotation(record, (dir / (stem + ".json")).string());
  return record;
}

}  // namespace quadfit

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "quadfit/camera.hpp"
#include "quadfit/image.hpp"
#include "quadfit/losses.hpp"
#include "quadfit/model.hpp"
#include "quadfit/objective.hpp"
#include "quadfit/raster.hpp"

namespace quadfit {

/// Pose rows (n_joints x 3 axis-angle each). Row 0 is ignored by the sampler.
struct PoseLibrary {
  std::vector<MatrixX3dR> poses;
};

/// Procedural gait set: sinusoidal leg swing with phase offsets per leg, tail
/// and neck sway, and small per-joint noise. Stands in for captured motion.
PoseLibrary make_pose_library(int n_joints, int count, std::uint64_t seed, double noise = 0.05);
PoseLibrary load_pose_library(const std::string& path);
void save_pose_library(const PoseLibrary& library, const std::string& path);

struct SceneConfig {
  double focal = 1000.0;
  int width = 512;
  int height = 512;
  Eigen::Vector3d translation_min{-0.5, -0.5, 4.0};
  Eigen::Vector3d translation_max{0.5, 0.5, 8.0};
};

struct SceneSample {
  Params params;   // gamma is zero; the sampled translation lives in the camera
  Camera camera;
  std::string species;
  std::string family;
  int pose_index = 0;  // row of the pose library that supplied theta
  std::uint64_t seed = 0;

  bool operator==(const SceneSample&) const = default;
};

/// Independent per-scene seed derived from a root seed (splitmix64).
std::uint64_t scene_seed(std::uint64_t root, std::uint64_t index);

/// beta = mu + L z; theta from a uniformly chosen library row with the root
/// replaced by a rotation vector uniform on (-pi, pi)^3; translation uniform in
/// the configured box. Throws std::invalid_argument on an empty library or
/// library rows that do not match the prior.
SceneSample sample_scene(std::mt19937_64& rng, const PriorDistribution& prior, const PoseLibrary& library,
                         const SceneConfig& config = {});

/// sample_scene seeded with scene_seed(root, index); `seed` records it.
SceneSample sample_scene(std::uint64_t root, std::uint64_t index, const PriorDistribution& prior,
                         const PoseLibrary& library, const SceneConfig& config = {});

void save_scene(const SceneSample& scene, const std::string& path);
SceneSample load_scene(const std::string& path);

/// Visible iff the projection lands inside the image and the keypoint depth is
/// within eps of the rasterized depth at its pixel. Pixels without coverage
/// (+inf depth) never confirm visibility. eps < 0 selects the default
/// 1e-3 * mean finite depth of the map.
std::vector<bool> keypoint_visibility(const MatrixX3dR& keypoints3d, const Camera& camera, const DepthMap& depth,
                                      double eps = -1.0);

enum class FilterDecision { accept, uncertain, reject };

struct CycleResult {
  bool accepted = false;
  double iou = 0.0;
};

inline constexpr double kIouThreshold = 0.8;
inline constexpr double kUncertainFloor = 0.6;

/// Throws std::invalid_argument on size mismatch and std::domain_error when
/// both masks are empty.
CycleResult cycle_consistency(const Mask& conditioned, const Mask& candidate, double iou_threshold = kIouThreshold);

/// accept at or above the threshold, uncertain in [floor, threshold), else reject.
FilterDecision classify(double iou, double threshold = kIouThreshold, double uncertain_floor = kUncertainFloor);
const char* to_string(FilterDecision decision);

struct CameraRecord {
  double focal = 1000.0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 512;
  int height = 512;

  Camera camera() const;
  bool operator==(const CameraRecord&) const = default;
};

/// Per-image label. Parameter and 3D fields are absent for 2D-only sources.
struct AnnotationRecord {
  std::string image;
  std::string species;
  std::string family;
  std::optional<Eigen::VectorXd> beta;
  std::optional<MatrixX3dR> theta;
  std::optional<Eigen::Vector3d> gamma;
  CameraRecord camera;
  std::optional<MatrixX3dR> keypoints3d;
  Eigen::MatrixX3d keypoints2d;  // u, v, visibility
  std::array<double, 4> bbox{};  // x_min, y_min, x_max, y_max (pixels)
  std::string mask;
  std::string depth;
  std::string source;

  bool has_params() const { return beta && theta && gamma; }
  /// Visibility column as flags.
  std::vector<bool> visible() const;
  Keypoints2d keypoints() const;
  bool operator==(const AnnotationRecord&) const = default;
};

/// Throws ValidationError naming the violated invariant.
void validate(const AnnotationRecord& record);

void save_annotation(const AnnotationRecord& record, const std::string& path);
AnnotationRecord load_annotation(const std::string& path);

/// Fitting target for a record: its 2D keypoints, camera intrinsics and, when
/// `use_3d` and the record has them, its 3D keypoints (never its parameters).
Observation observation_from_record(const AnnotationRecord& record, bool use_3d = true);

struct AnnotationPaths {
  std::string image, mask, depth;
};

/// Builds the record, with bbox = tight mask bounds padded by 2 px and clamped
/// to the image. Refuses (ValidationError) an empty mask or any invariant
/// violation.
AnnotationRecord emit_annotation(const SceneSample& sample, const PosedMesh& posed, const ConditionImages& images,
                                 const std::vector<bool>& visibility, const AnnotationPaths& paths,
                                 const std::string& source = "CtrlAni3D");

inline constexpr int kBboxPad = 2;

struct ManifestEntry {
  std::string record;  // as written in the manifest
  std::string source;
};

/// JSONL, one {"record": path, "source": id} per line. Blank lines are skipped.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);
/// Record path resolved against the manifest's directory when relative.
std::string resolve_record_path(const std::string& manifest_path, const std::string& record);

/// Pose, rasterize, test visibility, write mask/depth/preview image and the
/// annotation under `out_dir` using file stem `stem`. Returns the record.
AnnotationRecord render_scene(const ModelTemplate& tmpl, const SceneSample& sample, const std::string& out_dir,
                              const std::string& stem, const RgbImage* background = nullptr);

}  // namespace quadfit

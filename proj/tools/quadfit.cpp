// quadfit: batch entry points over the library.
//
//   make-toy   --out DIR                      template.json, prior.json, poses.json
//   sample     --in TOYDIR --out DIR --n N    scene_*.json + scenes.jsonl
//   rasterize  --in SCENES --model TOYDIR --out DIR
//   filter     --in MANIFEST --candidates DIR --out DIR
//   fit        --in MANIFEST --model TOYDIR --out DIR
//   eval       --pred MANIFEST --gt MANIFEST --model TOYDIR --out FILE [--csv FILE]
//   aggregate  --in SOURCES.json --out DIR
//
// Exit status: 0 ok, 1 invalid input or any failed item, 2 I/O failure.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "quadfit/dataset.hpp"
#include "quadfit/error.hpp"
#include "quadfit/fitter.hpp"
#include "quadfit/metrics.hpp"
#include "quadfit/synth.hpp"
#include "quadfit/template_io.hpp"
#include "quadfit/toy_template.hpp"

using namespace quadfit;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Every tunable number lives here; --config may override any existing key
// but may not add new ones.
json default_settings() {
  const LossWeights w;
  const SceneConfig scene;
  const FitConfig fit = default_fit_config();
  return {
      {"camera", {{"focal", scene.focal}, {"width", scene.width}, {"height", scene.height}}},
      {"sample",
       {{"translation_min", {scene.translation_min.x(), scene.translation_min.y(), scene.translation_min.z()}},
        {"translation_max", {scene.translation_max.x(), scene.translation_max.y(), scene.translation_max.z()}}}},
      {"toy",
       {{"n_joints", ToyConfig{}.n_joints},
        {"n_beta", ToyConfig{}.n_beta},
        {"sigma_beta", 1.0},
        {"sigma_theta", 0.5},
        {"pose_count", 64},
        {"pose_noise", 0.05}}},
      {"filter", {{"iou_threshold", kIouThreshold}, {"uncertain_floor", kUncertainFloor}}},
      {"weights",
       {{"lambda_3d", w.lambda_3d},
        {"lambda_2d", w.lambda_2d},
        {"lambda_prior", w.lambda_prior},
        {"lambda_adv", w.lambda_adv},
        {"lambda_con", w.lambda_con},
        {"inner_beta_3d", w.inner_beta_3d},
        {"inner_theta_3d", w.inner_theta_3d},
        {"inner_beta_prior", w.inner_beta_prior}}},
      {"fit",
       {{"restarts", fit.restarts},
        {"use_3d", true},
        {"min_visible", fit.min_visible},
        {"tolerance", fit.tolerance},
        {"global_iterations", fit.stages[0].max_iterations},
        {"full_iterations", fit.stages[1].max_iterations}}},
      {"metrics", {{"fractions", MetricsConfig{}.fractions}, {"normalizer", "bbox_max_side"}}},
      {"dataset", {{"ratio", kValidationRatio}, {"batch", kDefaultBatch}, {"mode", "per_record"}}},
  };
}

void merge_strict(json& base, const json& over, const std::string& where) {
  if (!over.is_object()) throw ValidationError("config" + where + ": expected an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = where + "." + it.key();
    if (!base.contains(it.key())) throw ValidationError("config: unknown key " + key.substr(1));
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, *it, key);
      continue;
    }
    const bool same = (slot.is_number() && it->is_number()) || slot.type() == it->type();
    if (!same) throw ValidationError("config: wrong type for " + key.substr(1));
    slot = *it;
  }
}

struct Settings {
  json raw;

  double num(const char* group, const char* key) const { return raw.at(group).at(key).get<double>(); }
  int integer(const char* group, const char* key) const { return raw.at(group).at(key).get<int>(); }

  SceneConfig scene() const {
    SceneConfig c;
    c.focal = num("camera", "focal");
    c.width = integer("camera", "width");
    c.height = integer("camera", "height");
    const auto lo = raw.at("sample").at("translation_min").get<std::vector<double>>();
    const auto hi = raw.at("sample").at("translation_max").get<std::vector<double>>();
    if (lo.size() != 3 || hi.size() != 3) throw ValidationError("config: translation bounds need 3 entries");
    c.translation_min = {lo[0], lo[1], lo[2]};
    c.translation_max = {hi[0], hi[1], hi[2]};
    for (int i = 0; i < 3; ++i)
      if (!(c.translation_min[i] <= c.translation_max[i])) throw ValidationError("config: translation_min > max");
    if (!(c.focal > 0.0) || c.width <= 0 || c.height <= 0) throw ValidationError("config: invalid camera");
    return c;
  }

  LossWeights weights() const {
    LossWeights w;
    w.lambda_3d = num("weights", "lambda_3d");
    w.lambda_2d = num("weights", "lambda_2d");
    w.lambda_prior = num("weights", "lambda_prior");
    w.lambda_adv = num("weights", "lambda_adv");
    w.lambda_con = num("weights", "lambda_con");
    w.inner_beta_3d = num("weights", "inner_beta_3d");
    w.inner_theta_3d = num("weights", "inner_theta_3d");
    w.inner_beta_prior = num("weights", "inner_beta_prior");
    w.check();
    return w;
  }

  FitConfig fit(std::uint64_t seed) const {
    FitConfig c = default_fit_config();
    c.seed = seed;
    c.weights = weights();
    c.restarts = integer("fit", "restarts");
    c.min_visible = integer("fit", "min_visible");
    c.tolerance = num("fit", "tolerance");
    c.stages[0].max_iterations = integer("fit", "global_iterations");
    c.stages[1].max_iterations = integer("fit", "full_iterations");
    c.check();
    return c;
  }

  MetricsConfig metrics() const {
    MetricsConfig m;
    m.fractions = raw.at("metrics").at("fractions").get<std::vector<double>>();
    const auto n = raw.at("metrics").at("normalizer").get<std::string>();
    if (n == "bbox_max_side") m.normalizer = PckNormalizer::bbox_max_side;
    else if (n == "hth") m.normalizer = PckNormalizer::hth;
    else throw ValidationError("config: metrics.normalizer must be bbox_max_side or hth");
    return m;
  }
};

Settings load_settings(const std::string& path) {
  Settings s{default_settings()};
  if (path.empty()) return s;
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  json over;
  try {
    over = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  merge_strict(s.raw, over, "");
  return s;
}

struct Common {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// Path of `target` as seen from directory `from`, so manifests stay valid when
// the whole tree moves.
std::string relative_to(const std::string& target, const std::string& from) {
  return fs::proximate(fs::absolute(target), fs::absolute(from)).generic_string();
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// Runs fn(i) for i in [0, n) on `threads` workers, strided so the assignment
// is fixed. Errors are collected per item, never thrown.
std::vector<std::string> parallel_items(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(n);
  const auto worker = [&](std::size_t start) {
    for (std::size_t i = start; i < n; i += static_cast<std::size_t>(threads)) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  if (threads <= 1) {
    worker(0);
    return errors;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker, static_cast<std::size_t>(t));
  for (auto& t : pool) t.join();
  return errors;
}

int report_failures(const std::vector<std::string>& errors, const std::vector<std::string>& names) {
  int failed = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i].empty()) continue;
    ++failed;
    spdlog::error("{}: {}", names[i], errors[i]);
  }
  if (failed) spdlog::warn("{} of {} items failed", failed, errors.size());
  return failed ? 1 : 0;
}

struct Toy {
  ModelTemplate tmpl;
  PriorDistribution prior;
  PoseLibrary poses;
};

Toy load_toy(const std::string& dir, bool with_poses) {
  Toy t{load_template(join(dir, "template.json")), load_prior(join(dir, "prior.json")), {}};
  if (with_poses) t.poses = load_pose_library(join(dir, "poses.json"));
  return t;
}

// --- subcommands ----------------------------------------------------------

int cmd_make_toy(const Common& c, const Settings& s, const std::string& out) {
  ensure_dir(out);
  ToyConfig tc;
  tc.n_joints = s.integer("toy", "n_joints");
  tc.n_beta = s.integer("toy", "n_beta");
  tc.seed = c.seed;
  const ModelTemplate tmpl = make_toy_template(tc);
  save_template(tmpl, join(out, "template.json"));
  save_prior(make_toy_prior(tmpl.n_beta(), tmpl.n_joints(), s.num("toy", "sigma_beta"), s.num("toy", "sigma_theta")),
             join(out, "prior.json"));
  save_pose_library(make_pose_library(tmpl.n_joints(), s.integer("toy", "pose_count"), c.seed, s.num("toy", "pose_noise")),
                    join(out, "poses.json"));
  spdlog::info("wrote toy model ({} joints, {} shape coefficients, {} vertices) to {}", tmpl.n_joints(), tmpl.n_beta(),
               tmpl.n_vertices(), out);
  return 0;
}

int cmd_sample(const Common& c, const Settings& s, const std::string& toy_dir, const std::string& out, int n) {
  if (n < 1) throw ValidationError("--n must be >= 1");
  const Toy toy = load_toy(toy_dir, true);
  const SceneConfig scene = s.scene();
  ensure_dir(out);
  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < n; ++i) {
    const std::string name = fmt::format("scene_{:05d}.json", i);
    save_scene(sample_scene(c.seed, i, toy.prior, toy.poses, scene), join(out, name));
    manifest.push_back({name, "CtrlAni3D"});
  }
  write_manifest(manifest, join(out, "scenes.jsonl"));
  spdlog::info("wrote {} scenes to {}", n, out);
  return 0;
}

int cmd_rasterize(const Common& c, const std::string& scenes, const std::string& toy_dir, const std::string& out,
                  const std::string& background_path) {
  const Toy toy = load_toy(toy_dir, false);
  const auto lines = read_manifest(scenes);
  std::optional<RgbImage> background;
  if (!background_path.empty()) background = read_rgb_png(background_path);
  ensure_dir(out);

  std::vector<std::string> names(lines.size());
  std::vector<std::optional<AnnotationRecord>> records(lines.size());
  const auto errors = parallel_items(lines.size(), c.threads, [&](std::size_t i) {
    const std::string path = resolve_record_path(scenes, lines[i].record);
    names[i] = path;
    const SceneSample sample = load_scene(path);
    records[i] = render_scene(toy.tmpl, sample, out, stem_of(path), background ? &*background : nullptr);
  });

  std::vector<ManifestEntry> manifest;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i]) manifest.push_back({stem_of(names[i]) + ".json", records[i]->source});
  write_manifest(manifest, join(out, "manifest.jsonl"));
  spdlog::info("rasterized {} of {} scenes into {}", manifest.size(), lines.size(), out);
  return report_failures(errors, names);
}

int cmd_filter(const Settings& s, const std::string& in, const std::string& candidates, const std::string& out) {
  const double threshold = s.num("filter", "iou_threshold");
  const double floor = s.num("filter", "uncertain_floor");
  if (!(floor <= threshold)) throw ValidationError("config: filter.uncertain_floor must not exceed iou_threshold");
  const auto lines = read_manifest(in);
  ensure_dir(out);

  std::vector<ManifestEntry> accept, uncertain, reject;
  std::ofstream report(join(out, "filter.jsonl"));
  if (!report) throw IoError("cannot open " + join(out, "filter.jsonl"));
  std::vector<std::string> errors(lines.size()), names(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string path = resolve_record_path(in, lines[i].record);
    names[i] = path;
    try {
      const AnnotationRecord r = load_annotation(path);
      const Mask cond = read_mask_png(resolve_record_path(path, r.mask));
      const Mask cand = read_mask_png(join(candidates, fs::path(r.mask).filename().string()));
      const CycleResult cr = cycle_consistency(cond, cand, threshold);
      const FilterDecision d = classify(cr.iou, threshold, floor);
      const ManifestEntry e{relative_to(path, out), lines[i].source};
      (d == FilterDecision::accept ? accept : d == FilterDecision::uncertain ? uncertain : reject).push_back(e);
      report << json{{"record", e.record}, {"iou", cr.iou}, {"decision", to_string(d)}}.dump() << '\n';
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  if (!report) throw IoError("failed writing " + join(out, "filter.jsonl"));
  write_manifest(accept, join(out, "accept.jsonl"));
  write_manifest(uncertain, join(out, "uncertain.jsonl"));
  write_manifest(reject, join(out, "reject.jsonl"));
  spdlog::info("filter: {} accepted, {} uncertain, {} rejected", accept.size(), uncertain.size(), reject.size());
  return report_failures(errors, names);
}

int cmd_fit(const Common& c, const Settings& s, const std::string& in, const std::string& toy_dir,
            const std::string& out) {
  const Toy toy = load_toy(toy_dir, false);
  const Fitter fitter(toy.tmpl, toy.prior, s.fit(c.seed));
  const bool use_3d = s.raw.at("fit").at("use_3d").get<bool>();
  const auto lines = read_manifest(in);
  ensure_dir(out);

  std::vector<std::string> names;
  std::vector<Observation> obs;
  for (const auto& e : lines) {
    names.push_back(resolve_record_path(in, e.record));
    obs.push_back(observation_from_record(load_annotation(names.back()), use_3d));
  }
  const auto items = batch_fit(fitter, obs, c.threads);

  std::vector<ManifestEntry> fits, targets;
  std::vector<std::string> errors(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].result) {
      errors[i] = items[i].error;
      continue;
    }
    const std::string name = stem_of(names[i]) + "_fit.json";
    save_fit_result(*items[i].result, join(out, name));
    fits.push_back({name, lines[i].source});
    targets.push_back({relative_to(names[i], out), lines[i].source});
    spdlog::debug("{}: objective {:.6g}, restart {}", names[i], items[i].result->report.total,
                  items[i].result->restart);
  }
  write_manifest(fits, join(out, "fits.jsonl"));
  write_manifest(targets, join(out, "targets.jsonl"));
  spdlog::info("fitted {} of {} records into {}", fits.size(), items.size(), out);
  return report_failures(errors, names);
}

struct Prediction {
  Params params;
  std::optional<Eigen::MatrixX2d> pixels;  // annotation predictions carry their own 2D
  std::optional<Eigen::Vector3d> translation;
};

Prediction load_prediction(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (j.is_object() && j.contains("variables")) {
    const FitResult r = load_fit_result(path);
    return {r.variables.params, std::nullopt, r.variables.camera_translation};
  }
  const AnnotationRecord r = load_annotation(path);
  if (!r.has_params()) throw ValidationError(path + ": prediction has no parameters");
  return {Params{*r.beta, *r.theta, *r.gamma}, Eigen::MatrixX2d(r.keypoints2d.leftCols<2>()), std::nullopt};
}

int cmd_eval(const Settings& s, const std::string& pred_manifest, const std::string& gt_manifest,
             const std::string& toy_dir, const std::string& out, const std::string& csv) {
  const Toy toy = load_toy(toy_dir, false);
  const MetricsConfig mc = s.metrics();
  const auto pred_lines = read_manifest(pred_manifest);
  const auto gt_lines = read_manifest(gt_manifest);
  if (pred_lines.size() != gt_lines.size())
    throw ValidationError(fmt::format("eval: {} predictions but {} ground-truth records", pred_lines.size(),
                                      gt_lines.size()));

  std::vector<InstanceMetrics> instances;
  for (std::size_t i = 0; i < gt_lines.size(); ++i) {
    const std::string gt_path = resolve_record_path(gt_manifest, gt_lines[i].record);
    const AnnotationRecord gt = load_annotation(gt_path);
    const Prediction pred = load_prediction(resolve_record_path(pred_manifest, pred_lines[i].record));
    check_params(toy.tmpl, pred.params);
    const PosedMesh pm = pose_mesh(toy.tmpl, pred.params);

    EvalInstance inst;
    inst.id = stem_of(gt_path);
    inst.pred_joints = pm.joints;
    inst.pred_vertices = pm.vertices;
    if (gt.has_params()) {
      const PosedMesh gm = pose_mesh(toy.tmpl, Params{*gt.beta, *gt.theta, *gt.gamma});
      inst.gt_joints = gm.joints;
      inst.gt_vertices = gm.vertices;
    }
    inst.gt2d = gt.keypoints2d.leftCols<2>();
    inst.visible = gt.visible();
    if (pred.pixels) {
      inst.pred2d = *pred.pixels;
    } else {
      Camera cam = gt.camera.camera();
      cam.translation = *pred.translation;
      inst.pred2d = project(pm.keypoints3d, cam).pixels;
    }
    instances.push_back(evaluate_instance(inst, mc));
  }
  const MetricsReport report = summarize(instances, mc);
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) ensure_dir(parent.string());
  write_metrics_json(report, out);
  if (!csv.empty()) write_metrics_csv(instances, mc.fractions, csv);
  spdlog::info("eval over {} instances: {}", report.n_instances, metrics_json(report));
  return 0;
}

int cmd_aggregate(const Common& c, const Settings& s, const std::string& in, const std::string& out, int batches) {
  if (batches < 0) throw ValidationError("--batches must be >= 0");
  std::ifstream is(in);
  if (!is) throw IoError("cannot open " + in);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ParseError(in + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("sources") || !j["sources"].is_array())
    throw ValidationError(in + ": expected {\"sources\": [...]}");

  std::vector<SourceListing> listings;
  for (const json& src : j["sources"]) {
    DatasetSource d;
    try {
      d.id = src.at("id").get<std::string>();
      d.manifest = resolve_record_path(in, src.at("manifest").get<std::string>());
      const std::string kind = src.value("kind", "full_3d");
      if (kind == "full_3d") d.kind = LabelKind::full_3d;
      else if (kind == "kp2d_only") d.kind = LabelKind::kp2d_only;
      else throw ValidationError(in + ": kind must be full_3d or kp2d_only");
      if (src.contains("weight")) d.weight = src.at("weight").get<double>();
    } catch (const json::exception& e) {
      throw ValidationError(in + ": " + e.what());
    }
    listings.push_back(load_source(d));
  }

  const std::string mode_name = s.raw.at("dataset").at("mode").get<std::string>();
  WeightMode mode;
  if (mode_name == "per_record") mode = WeightMode::per_record;
  else if (mode_name == "per_dataset") mode = WeightMode::per_dataset;
  else throw ValidationError("config: dataset.mode must be per_record or per_dataset");

  const Aggregate agg = aggregate(std::move(listings), mode);
  const double ratio = s.num("dataset", "ratio");
  const Split sp = split(agg, ratio, c.seed);
  ensure_dir(out);

  json table = json::array();
  for (std::size_t k = 0; k < agg.sources.size(); ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < agg.entries.size(); ++i)
      if (agg.entries[i].source == k) mass += agg.probability[i];
    table.push_back({{"id", agg.sources[k].id},
                     {"records", agg.sizes[k]},
                     {"weight", *agg.sources[k].weight},
                     {"mass", mass}});
  }
  std::ofstream os(join(out, "aggregate.json"));
  os << json{{"mode", mode_name}, {"ratio", ratio}, {"seed", c.seed}, {"sources", table}}.dump(1) << '\n';
  if (!os) throw IoError("failed writing " + join(out, "aggregate.json"));

  const auto entries_of = [&](const std::vector<std::size_t>& idx) {
    std::vector<ManifestEntry> m;
    for (std::size_t i : idx) m.push_back({relative_to(agg.entries[i].record, out), agg.sources[agg.entries[i].source].id});
    return m;
  };
  write_manifest(entries_of(sp.train), join(out, "train.jsonl"));
  write_manifest(entries_of(sp.val), join(out, "val.jsonl"));

  if (batches > 0) {
    std::mt19937_64 rng(c.seed);
    std::ofstream bs(join(out, "batches.jsonl"));
    if (!bs) throw IoError("cannot open " + join(out, "batches.jsonl"));
    const int size = s.integer("dataset", "batch");
    for (int b = 0; b < batches; ++b) {
      const auto idx = sample_batch(agg, sp.train, rng, size);
      const auto recs = load_batch(agg, idx);
      json line{{"records", json::array()}, {"families", json::array()}};
      for (std::size_t k = 0; k < idx.size(); ++k) {
        line["records"].push_back(relative_to(agg.entries[idx[k]].record, out));
        line["families"].push_back(recs[k].family);
      }
      bs << line.dump() << '\n';
    }
    if (!bs) throw IoError("failed writing " + join(out, "batches.jsonl"));
  }
  spdlog::info("aggregate: {} records from {} sources, {} train / {} val", agg.entries.size(), agg.sources.size(),
               sp.train.size(), sp.val.size());
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("quadfit");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("QUADFIT_LOG")) {
    const std::string v = env;
    const auto level = spdlog::level::from_str(v);
    // from_str maps unknown names to "off"; only accept real names.
    if (level != spdlog::level::off || v == "off") spdlog::set_level(level);
    else spdlog::warn("QUADFIT_LOG={} is not a level name; keeping info", v);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"quadfit: quadruped body-model toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "root seed")->capture_default_str();
  app.add_option("--threads", common.threads, "batch parallelism")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--config", common.config, "JSON overrides of the numeric defaults");

  std::string in, out, model, candidates, pred, gt, csv, background;
  int n = 1, batches = 0;

  auto* make_toy = app.add_subcommand("make-toy", "write a procedural template, prior and pose library");
  make_toy->add_option("--out", out)->required();

  auto* sample = app.add_subcommand("sample", "draw scenes");
  sample->add_option("--in", in, "toy directory")->required();
  sample->add_option("--out", out)->required();
  sample->add_option("--n", n, "scene count")->capture_default_str();

  auto* rasterize = app.add_subcommand("rasterize", "render masks, depth and annotations");
  rasterize->add_option("--in", in, "scene manifest")->required();
  rasterize->add_option("--model", model, "toy directory")->required();
  rasterize->add_option("--out", out)->required();
  rasterize->add_option("--background", background, "RGB PNG composited behind the animal");

  auto* filter = app.add_subcommand("filter", "cycle-consistency filtering");
  filter->add_option("--in", in, "annotation manifest")->required();
  filter->add_option("--candidates", candidates, "directory of re-extracted masks")->required();
  filter->add_option("--out", out)->required();

  auto* fit = app.add_subcommand("fit", "fit the model to every record");
  fit->add_option("--in", in, "annotation manifest")->required();
  fit->add_option("--model", model, "toy directory")->required();
  fit->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "metrics between prediction and ground-truth manifests");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--gt", gt)->required();
  eval->add_option("--model", model, "toy directory")->required();
  eval->add_option("--out", out, "metrics JSON")->required();
  eval->add_option("--csv", csv, "per-instance CSV");

  auto* agg = app.add_subcommand("aggregate", "weighted multi-source dataset");
  agg->add_option("--in", in, "sources JSON")->required();
  agg->add_option("--out", out)->required();
  agg->add_option("--batches", batches, "minibatches to draw")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const Settings settings = load_settings(common.config);
    const auto* sub = app.get_subcommands().front();
    spdlog::info("{} seed={} threads={}", sub->get_name(), common.seed, common.threads);
    spdlog::info("config {}", settings.raw.dump());

    if (sub == make_toy) return cmd_make_toy(common, settings, out);
    if (sub == sample) return cmd_sample(common, settings, in, out, n);
    if (sub == rasterize) return cmd_rasterize(common, in, model, out, background);
    if (sub == filter) return cmd_filter(settings, in, candidates, out);
    if (sub == fit) return cmd_fit(common, settings, in, model, out);
    if (sub == eval) return cmd_eval(settings, pred, gt, model, out, csv);
    if (sub == agg) return cmd_aggregate(common, settings, in, out, batches);
  } catch (const IoError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 1;
}

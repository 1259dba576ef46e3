#include "quadfit/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

#include <fmt/format.h>

#include "quadfit/error.hpp"

namespace quadfit {

namespace {

constexpr std::array<std::pair<std::string_view, double>, 7> kDefaultWeights = {{
    {"Animal3D", 1.0},
    {"CtrlAni3D", 0.5},
    {"AnimalPose", 0.15},
    {"AwA", 0.15},
    {"ZebraSynthetic", 0.05},
    {"StanfordExtra", 0.15},
    {"APT-36K", 0.15},
}};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::optional<double> default_weight(std::string_view id) {
  for (const auto& [name, w] : kDefaultWeights)
    if (name == id) return w;
  return std::nullopt;
}

SourceListing load_source(const DatasetSource& source) {
  const auto lines = read_manifest(source.manifest);
  const bool tagged = std::any_of(lines.begin(), lines.end(), [&](const auto& e) { return e.source == source.id; });
  SourceListing out{source, {}};
  for (const auto& e : lines) {
    if (tagged && e.source != source.id) continue;
    const std::string path = resolve_record_path(source.manifest, e.record);
    const AnnotationRecord r = load_annotation(path);
    if (source.kind == LabelKind::kp2d_only && (r.has_params() || r.keypoints3d))
      throw ValidationError(fmt::format("{}: 2D-only source '{}' carries 3D labels", path, source.id));
    if (source.kind == LabelKind::full_3d && !r.has_params())
      throw ValidationError(fmt::format("{}: 3D source '{}' lacks parameters", path, source.id));
    out.records.push_back(path);
  }
  return out;
}

Aggregate aggregate(std::vector<SourceListing> sources, WeightMode mode) {
  if (sources.empty()) throw ValidationError("aggregate: no sources");
  // Sorting makes the table independent of the order sources were listed in.
  std::sort(sources.begin(), sources.end(),
            [](const SourceListing& a, const SourceListing& b) { return a.source.id < b.source.id; });
  Aggregate agg;
  agg.mode = mode;
  std::set<std::string> seen;
  for (auto& s : sources) {
    if (!seen.insert(s.source.id).second) throw ValidationError("aggregate: duplicate source id " + s.source.id);
    if (!s.source.weight) s.source.weight = default_weight(s.source.id);
    if (!s.source.weight) throw ValidationError("aggregate: no weight given for unknown source " + s.source.id);
    if (!(*s.source.weight >= 0.0) || !std::isfinite(*s.source.weight))
      throw ValidationError("aggregate: weight must be finite and >= 0 for " + s.source.id);
    const std::size_t idx = agg.sources.size();
    agg.sources.push_back(s.source);
    agg.sizes.push_back(s.records.size());
    for (auto& r : s.records) agg.entries.push_back({idx, std::move(r)});
  }

  std::vector<double> mass(agg.sources.size());
  for (std::size_t i = 0; i < mass.size(); ++i) {
    const double w = *agg.sources[i].weight;
    mass[i] = mode == WeightMode::per_record ? w : (agg.sizes[i] > 0 ? w / agg.sizes[i] : 0.0);
  }
  double total = 0.0;
  for (const auto& e : agg.entries) total += mass[e.source];
  if (!(total > 0.0)) throw ValidationError("aggregate: every record has zero weight");
  agg.probability.reserve(agg.entries.size());
  for (const auto& e : agg.entries) agg.probability.push_back(mass[e.source] / total);
  return agg;
}

Split split(const Aggregate& agg, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must lie in (0, 1)");
  Split out;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < agg.sources.size(); ++s) {
    const std::size_t n = agg.sizes[s];
    if (n == 0) throw ValidationError("split: source " + agg.sources[s].id + " is empty");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), begin);
    std::mt19937_64 rng(seed ^ fnv1a(agg.sources[s].id));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + n_val);
    out.train.insert(out.train.end(), idx.begin() + n_val, idx.end());
    begin += n;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

std::vector<std::size_t> sample_batch(const Aggregate& agg, const std::vector<std::size_t>& pool,
                                      std::mt19937_64& rng, int batch) {
  if (pool.empty()) throw std::invalid_argument("sample_batch: empty split");
  if (batch < 1) throw std::invalid_argument("sample_batch: batch size must be >= 1");
  std::vector<double> w;
  w.reserve(pool.size());
  for (std::size_t i : pool) w.push_back(agg.probability.at(i));
  if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0)
    throw std::invalid_argument("sample_batch: every record in the split has zero weight");
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::vector<std::size_t> out(batch);
  for (auto& o : out) o = pool[pick(rng)];
  return out;
}

std::vector<AnnotationRecord> load_batch(const Aggregate& agg, const std::vector<std::size_t>& indices) {
  std::vector<AnnotationRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(load_annotation(agg.entries.at(i).record));
  return out;
}

}  // namespace quadfit

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "quadfit/synth.hpp"

namespace quadfit {

enum class LabelKind { full_3d, kp2d_only };

/// How a source weight is spread over its records.
///   per_record:  every record draws with probability proportional to the
///                weight, so bigger sources get more total mass.
///   per_dataset: the weight is the source's total mass, split evenly.
enum class WeightMode { per_record, per_dataset };

struct DatasetSource {
  std::string id;
  std::string manifest;
  LabelKind kind = LabelKind::full_3d;
  std::optional<double> weight;  // defaults by id when absent
};

/// Training sample weights of the known datasets; nullopt for unknown ids.
std::optional<double> default_weight(std::string_view id);

/// A source with its record paths (resolved).
struct SourceListing {
  DatasetSource source;
  std::vector<std::string> records;
};

/// Reads the manifest, keeps lines whose source id matches (all lines when
/// none carries the id) and checks every record against the label kind.
SourceListing load_source(const DatasetSource& source);

struct AggregateEntry {
  std::size_t source = 0;  // index into Aggregate::sources
  std::string record;
};

struct Aggregate {
  std::vector<DatasetSource> sources;  // sorted by id, weights resolved
  std::vector<std::size_t> sizes;
  std::vector<AggregateEntry> entries;  // grouped by source, records in input order
  std::vector<double> probability;      // per entry, sums to 1
  WeightMode mode = WeightMode::per_record;
};

/// Throws ValidationError on duplicate ids, negative or missing weights, or
/// when no record has positive mass.
Aggregate aggregate(std::vector<SourceListing> sources, WeightMode mode = WeightMode::per_record);

inline constexpr double kValidationRatio = 3.0 / 20.0;

struct Split {
  std::vector<std::size_t> train;  // entry indices, ascending
  std::vector<std::size_t> val;
};

/// Per source: shuffle with a seed mixed from `seed` and the source id, then
/// take round(ratio * n) for validation. Throws on an empty source or a ratio
/// outside (0, 1).
Split split(const Aggregate& agg, double ratio = kValidationRatio, std::uint64_t seed = 0);

inline constexpr int kDefaultBatch = 16;

/// B i.i.d. draws with replacement from `pool` (entry indices) with
/// probabilities renormalized over the pool.
std::vector<std::size_t> sample_batch(const Aggregate& agg, const std::vector<std::size_t>& pool,
                                      std::mt19937_64& rng, int batch = kDefaultBatch);

std::vector<AnnotationRecord> load_batch(const Aggregate& agg, const std::vector<std::size_t>& indices);

}  // namespace quadfit

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "autolycus/data.hpp"
#include "autolycus/tree.hpp"

namespace autolycus {

struct SynthDataset {
  DecisionTree tree;
  DatasetSchema schema;
  std::vector<LabeledSample> samples;  // the full input domain, labelled by `tree`
};

inline constexpr std::uint64_t kMaxSynthDomain = 1'000'000;

// Random axis-aligned tree over integer features in [0, domain_size), plus the
// exhaustively enumerated domain labelled by that tree.
inline SynthDataset synth_tree_dataset(int depth, int feature_count, int domain_size,
                                       std::uint64_t rng_seed, int class_count = 2) {
  if (depth < 1) throw ArgumentError("depth must be >= 1");
  if (feature_count < 1) throw ArgumentError("feature_count must be >= 1");
  if (domain_size < 2) throw ArgumentError("domain_size must be >= 2");
  if (class_count < 2) throw ArgumentError("class_count must be >= 2");
  std::uint64_t cells = 1;
  for (int f = 0; f < feature_count; ++f) {
    cells *= static_cast<std::uint64_t>(domain_size);
    if (cells > kMaxSynthDomain)
      throw CapacityError("domain_size^feature_count exceeds " + std::to_string(kMaxSynthDomain));
  }

  DatasetSchema schema;
  for (int f = 0; f < feature_count; ++f) {
    FeatureSpec spec;
    spec.name = "x" + std::to_string(f);
    spec.kind = FeatureKind::integer;
    spec.lower = 0;
    spec.upper = domain_size - 1;
    schema.features.push_back(spec);
  }
  for (int c = 0; c < class_count; ++c) schema.label_names.push_back("c" + std::to_string(c));
  schema.label_column = "label";

  auto rng = make_rng(rng_seed);
  std::vector<TreeNode> nodes;
  std::vector<int> lo(feature_count, 0), hi(feature_count, domain_size - 1);

  auto region_size = [&] {
    long long n = 1;
    for (int f = 0; f < feature_count; ++f) n *= hi[f] - lo[f] + 1;
    return n;
  };

  auto grow = [&](auto&& self, int remaining) -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    std::vector<int> splittable;
    for (int f = 0; f < feature_count; ++f)
      if (hi[f] > lo[f]) splittable.push_back(f);
    if (remaining == 0 || splittable.empty()) {
      const int label = std::uniform_int_distribution<int>(0, class_count - 1)(rng);
      nodes[id].counts.assign(static_cast<std::size_t>(class_count), 0);
      nodes[id].counts[static_cast<std::size_t>(label)] = region_size();
      return id;
    }
    const int f = splittable[std::uniform_int_distribution<std::size_t>(0, splittable.size() - 1)(rng)];
    const int t = std::uniform_int_distribution<int>(lo[f], hi[f] - 1)(rng);
    nodes[id].feature = f;
    nodes[id].threshold = t;
    const int saved_hi = hi[f];
    hi[f] = t;
    const int l = self(self, remaining - 1);
    hi[f] = saved_hi;
    const int saved_lo = lo[f];
    lo[f] = t + 1;
    const int r = self(self, remaining - 1);
    lo[f] = saved_lo;
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  };
  grow(grow, depth);

  TreeParams params;
  params.max_depth = depth;
  params.rng_seed = rng_seed;

  SynthDataset out{DecisionTree(schema, params, std::move(nodes)), {}, {}};
  out.samples.reserve(static_cast<std::size_t>(cells));
  std::vector<double> x(static_cast<std::size_t>(feature_count), 0.0);
  for (std::uint64_t k = 0; k < cells; ++k) {
    std::uint64_t rest = k;
    for (int f = feature_count - 1; f >= 0; --f) {
      x[static_cast<std::size_t>(f)] = static_cast<double>(rest % static_cast<std::uint64_t>(domain_size));
      rest /= static_cast<std::uint64_t>(domain_size);
    }
    out.samples.push_back({Sample(x), out.tree.predict(std::span<const double>(x))});
  }
  std::vector<Sample> rows;
  rows.reserve(out.samples.size());
  for (const auto& s : out.samples) rows.push_back(s.sample);
  compute_means(schema, rows);
  out.schema = schema;
  out.tree = DecisionTree(schema, params, out.tree.nodes());
  return out;
}

}  // namespace autolycus

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolycus/data.hpp"
#include "autolycus/error.hpp"

namespace autolycus {

struct TreeParams {
  int max_depth = 32;
  int min_samples_split = 2;
  // Carried for reproducibility; split ties are broken by feature index and
  // threshold, so fitting consumes no randomness.
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (max_depth < 1) throw ArgumentError("max_depth must be >= 1");
    if (min_samples_split < 2) throw ArgumentError("min_samples_split must be >= 2");
  }
};

// Flat node storage: internal nodes reference children by index.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;   // x <= threshold
  int right = -1;  // x > threshold
  std::vector<long long> counts;  // leaves only

  bool is_leaf() const { return feature < 0; }

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct TreeShape {
  int depth = 0;
  int leaf_count = 0;
  int node_count = 0;
};

inline double gini(const std::vector<long long>& counts) {
  long long total = 0;
  for (auto c : counts) {
    if (c < 0) throw ArgumentError("gini: negative class count");
    total += c;
  }
  if (total == 0) throw ArgumentError("gini: counts sum to zero");
  double sum_sq = 0.0;
  for (auto c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

inline int argmax_label(const std::vector<long long>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

class DecisionTree {
 public:
  DecisionTree() = default;

  // Node 0 is the root. Throws FormatError if the structure is inconsistent.
  DecisionTree(DatasetSchema schema, TreeParams params, std::vector<TreeNode> nodes)
      : schema_(std::move(schema)), params_(params), nodes_(std::move(nodes)) {
    check();
  }

  static DecisionTree constant(DatasetSchema schema, TreeParams params, int label,
                               long long count = 1) {
    TreeNode leaf;
    leaf.counts.assign(schema.class_count(), 0);
    leaf.counts.at(static_cast<std::size_t>(label)) = count;
    return DecisionTree(std::move(schema), params, {std::move(leaf)});
  }

  int predict(const Sample& s) const { return predict(std::span<const double>(s.values)); }

  int predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes_[i].is_leaf()) {
      const auto& n = nodes_[i];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return argmax_label(nodes_[i].counts);
  }

  TreeShape describe() const {
    TreeShape shape;
    shape.node_count = static_cast<int>(nodes_.size());
    std::vector<std::pair<int, int>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      const auto& n = nodes_[i];
      if (n.is_leaf()) {
        ++shape.leaf_count;
        shape.depth = std::max(shape.depth, d);
      } else {
        stack.push_back({n.right, d + 1});
        stack.push_back({n.left, d + 1});
      }
    }
    return shape;
  }

  const DatasetSchema& schema() const { return schema_; }
  const TreeParams& params() const { return params_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

 private:
  void check() const {
    if (nodes_.empty()) throw FormatError("tree has no nodes");
    std::vector<int> parents(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (n.is_leaf()) {
        if (n.counts.size() != schema_.class_count())
          throw FormatError("node " + std::to_string(i) + ": counts length != class count");
        long long total = 0;
        for (auto c : n.counts) {
          if (c < 0) throw FormatError("node " + std::to_string(i) + ": negative count");
          total += c;
        }
        if (total < 1) throw FormatError("node " + std::to_string(i) + ": empty leaf");
        continue;
      }
      if (static_cast<std::size_t>(n.feature) >= schema_.feature_count())
        throw FormatError("node " + std::to_string(i) + ": feature index out of range");
      for (int c : {n.left, n.right}) {
        if (c <= static_cast<int>(i) || c >= static_cast<int>(nodes_.size()))
          throw FormatError("node " + std::to_string(i) + ": bad child index");
        ++parents[c];
      }
    }
    for (std::size_t i = 1; i < nodes_.size(); ++i)
      if (parents[i] != 1) throw FormatError("node " + std::to_string(i) + ": not a tree");
  }

  DatasetSchema schema_;
  TreeParams params_;
  std::vector<TreeNode> nodes_;
};

// ---------------------------------------------------------------------------
// CART fitting

namespace detail {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // sum of n_child * gini(child)
};

inline double weighted_impurity(const std::vector<long long>& counts, long long n) {
  // n * gini = n - sum(c^2) / n
  double sq = 0.0;
  for (auto c : counts) sq += static_cast<double>(c) * static_cast<double>(c);
  return static_cast<double>(n) - sq / static_cast<double>(n);
}

class CartBuilder {
 public:
  CartBuilder(const std::vector<LabeledSample>& train, const DatasetSchema& schema,
              const TreeParams& params)
      : train_(train), schema_(schema), params_(params) {}

  std::vector<TreeNode> build() {
    std::vector<std::size_t> idx(train_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    grow(idx, 0);
    return std::move(nodes_);
  }

 private:
  std::vector<long long> class_counts(const std::vector<std::size_t>& idx) const {
    std::vector<long long> counts(schema_.class_count(), 0);
    for (auto i : idx) ++counts[static_cast<std::size_t>(train_[i].label)];
    return counts;
  }

  int grow(const std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    auto counts = class_counts(idx);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
    if (pure || depth >= params_.max_depth ||
        idx.size() < static_cast<std::size_t>(params_.min_samples_split)) {
      nodes_[id].counts = std::move(counts);
      return id;
    }
    auto best = find_split(idx);
    if (best.feature < 0) {
      nodes_[id].counts = std::move(counts);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (auto i : idx)
      (train_[i].sample[static_cast<std::size_t>(best.feature)] <= best.threshold ? left : right)
          .push_back(i);
    nodes_[id].feature = best.feature;
    nodes_[id].threshold = best.threshold;
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  SplitChoice find_split(const std::vector<std::size_t>& idx) const {
    SplitChoice best;
    const auto n = static_cast<long long>(idx.size());
    const auto total = class_counts(idx);
    std::vector<std::size_t> order = idx;
    for (std::size_t f = 0; f < schema_.feature_count(); ++f) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return train_[a].sample[f] < train_[b].sample[f];
      });
      std::vector<long long> left(schema_.class_count(), 0);
      std::vector<long long> right = total;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const auto lab = static_cast<std::size_t>(train_[order[k]].label);
        ++left[lab];
        --right[lab];
        const double v = train_[order[k]].sample[f];
        const double next = train_[order[k + 1]].sample[f];
        if (!(v < next)) continue;
        const auto nl = static_cast<long long>(k + 1);
        const double score = weighted_impurity(left, nl) + weighted_impurity(right, n - nl);
        // Features and thresholds are visited in ascending order, so only a
        // strict improvement replaces the incumbent.
        if (best.feature < 0 || score < best.score - 1e-12 * std::max(1.0, best.score)) {
          best.feature = static_cast<int>(f);
          best.threshold = v + (next - v) / 2.0;
          best.score = score;
        }
      }
    }
    return best;
  }

  const std::vector<LabeledSample>& train_;
  const DatasetSchema& schema_;
  const TreeParams& params_;
  std::vector<TreeNode> nodes_;
};

}  // namespace detail

inline DecisionTree fit(const std::vector<LabeledSample>& train, const DatasetSchema& schema,
                        const TreeParams& params) {
  params.validate();
  if (train.empty()) throw ArgumentError("cannot fit a tree on an empty training set");
  for (const auto& s : train) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= schema.class_count())
      throw ArgumentError("training label out of range");
    if (s.sample.size() != schema.feature_count())
      throw ArgumentError("training sample has wrong length");
  }
  detail::CartBuilder builder(train, schema, params);
  return DecisionTree(schema, params, builder.build());
}

// ---------------------------------------------------------------------------
// Model JSON

namespace detail {

inline json node_to_json(const std::vector<TreeNode>& nodes, int i) {
  const auto& n = nodes[i];
  if (n.is_leaf()) return {{"counts", n.counts}};
  json j;
  j["feature"] = n.feature;
  // 17 significant digits, emitted as a raw number token
  j["threshold"] = json::parse(format_double17(n.threshold));
  j["left"] = node_to_json(nodes, n.left);
  j["right"] = node_to_json(nodes, n.right);
  return j;
}

inline int node_from_json(const json& j, const DatasetSchema& schema, std::vector<TreeNode>& out,
                          const std::string& path) {
  if (!j.is_object()) throw FormatError(path + ": node must be an object");
  const int id = static_cast<int>(out.size());
  out.emplace_back();
  if (j.contains("counts")) {
    const auto& c = j["counts"];
    if (!c.is_array() || c.size() != schema.class_count())
      throw FormatError(path + ".counts: expected " + std::to_string(schema.class_count()) +
                        " integers");
    long long total = 0;
    for (const auto& v : c) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw FormatError(path + ".counts: non-negative integers required");
      out[id].counts.push_back(v.get<long long>());
      total += v.get<long long>();
    }
    if (total < 1) throw FormatError(path + ".counts: leaf must hold at least one sample");
    return id;
  }
  if (!j.contains("feature") || !j["feature"].is_number_integer())
    throw FormatError(path + ".feature: integer required");
  if (!j.contains("threshold") || !j["threshold"].is_number())
    throw FormatError(path + ".threshold: number required");
  const auto feature = j["feature"].get<long long>();
  if (feature < 0 || static_cast<std::size_t>(feature) >= schema.feature_count())
    throw FormatError(path + ".feature: index " + std::to_string(feature) + " out of range");
  if (!j.contains("left") || !j.contains("right"))
    throw FormatError(path + ": internal node needs left and right");
  out[id].feature = static_cast<int>(feature);
  out[id].threshold = j["threshold"].get<double>();
  const int l = node_from_json(j["left"], schema, out, path + ".left");
  const int r = node_from_json(j["right"], schema, out, path + ".right");
  out[id].left = l;
  out[id].right = r;
  return id;
}

}  // namespace detail

inline std::string serialize(const DecisionTree& tree) {
  json doc;
  doc["params"] = {{"max_depth", tree.params().max_depth},
                   {"min_samples_split", tree.params().min_samples_split},
                   {"rng_seed", tree.params().rng_seed}};
  doc["schema_ref"] = tree.schema().fingerprint();
  doc["root"] = detail::node_to_json(tree.nodes(), 0);
  return doc.dump(2) + "\n";
}

inline std::string schema_ref_of(const std::string& model_text) {
  try {
    return json::parse(model_text).at("schema_ref").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model document: ") + e.what());
  }
}

inline DecisionTree deserialize(const std::string& text, const DatasetSchema& schema) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model document: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("root")) throw FormatError("model document: missing root");
  TreeParams params;
  if (doc.contains("params")) {
    const auto& p = doc["params"];
    try {
      params.max_depth = p.value("max_depth", params.max_depth);
      params.min_samples_split = p.value("min_samples_split", params.min_samples_split);
      params.rng_seed = p.value("rng_seed", params.rng_seed);
    } catch (const json::exception& e) {
      throw FormatError(std::string("params: ") + e.what());
    }
  }
  if (doc.contains("schema_ref") && doc["schema_ref"].is_string() &&
      doc["schema_ref"].get<std::string>() != schema.fingerprint())
    throw SchemaError("model was trained against a different schema");
  std::vector<TreeNode> nodes;
  detail::node_from_json(doc["root"], schema, nodes, "root");
  return DecisionTree(schema, params, std::move(nodes));
}

}  // namespace autolycus

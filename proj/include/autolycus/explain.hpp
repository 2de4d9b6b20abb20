#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "autolycus/data.hpp"
#include "autolycus/error.hpp"
#include "autolycus/util.hpp"

namespace autolycus {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Half-open bin (lower, upper]; infinite ends are unbounded.
struct Interval {
  double lower = -kInf;
  double upper = kInf;

  bool contains(double v) const { return v > lower && v <= upper; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

// Linear-interpolation quantile over already sorted values.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ArgumentError("quantile of an empty set");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

// Quartile binning for continuous and integer features. Categorical features
// pass through with one bin per category.
class Discretizer {
 public:
  struct FeatureBins {
    bool categorical = false;
    std::size_t category_count = 0;
    std::array<double, 3> quartiles{0.0, 0.0, 0.0};
    // Effective cut points, strictly ascending. Integer features use floored
    // cuts so that every bin holds at least one admissible integer.
    std::vector<double> cuts;
  };

  Discretizer() = default;
  Discretizer(DatasetSchema schema, std::vector<FeatureBins> bins)
      : schema_(std::move(schema)), bins_(std::move(bins)) {}

  const DatasetSchema& schema() const { return schema_; }
  const FeatureBins& feature(std::size_t f) const { return bins_.at(f); }
  std::size_t feature_count() const { return bins_.size(); }

  std::size_t bin_count(std::size_t f) const {
    const auto& b = bins_[f];
    return b.categorical ? b.category_count : b.cuts.size() + 1;
  }

  std::size_t bin_of(std::size_t f, double v) const {
    const auto& b = bins_[f];
    if (b.categorical) return static_cast<std::size_t>(v);
    return static_cast<std::size_t>(std::lower_bound(b.cuts.begin(), b.cuts.end(), v) - b.cuts.begin());
  }

  Interval interval(std::size_t f, std::size_t bin) const {
    const auto& cuts = bins_[f].cuts;
    Interval iv;
    if (bin > 0) iv.lower = cuts[bin - 1];
    if (bin < cuts.size()) iv.upper = cuts[bin];
    return iv;
  }

  // Uniform draw of a concrete admissible value inside `bin`.
  double draw(std::size_t f, std::size_t bin, Rng& rng) const {
    const auto& spec = schema_.features[f];
    if (bins_[f].categorical) return static_cast<double>(bin);
    const auto iv = interval(f, bin);
    const double lo = std::max(iv.lower, spec.lower);
    const double hi = std::min(iv.upper, spec.upper);
    if (spec.kind == FeatureKind::integer) {
      const auto first = static_cast<long long>(bin == 0 ? std::ceil(spec.lower) : std::floor(iv.lower) + 1);
      const auto last = static_cast<long long>(std::floor(hi));
      return static_cast<double>(std::uniform_int_distribution<long long>(first, last)(rng));
    }
    if (!(lo < hi)) return hi;
    double v = std::uniform_real_distribution<double>(lo, hi)(rng);
    // the open lower edge belongs to the previous bin
    if (bin > 0 && v <= iv.lower) v = hi;
    return v;
  }

 private:
  DatasetSchema schema_;
  std::vector<FeatureBins> bins_;
};

inline Discretizer build_discretizer(const std::vector<LabeledSample>& train,
                                     const DatasetSchema& schema) {
  if (train.empty()) throw ArgumentError("cannot build a discretizer from no samples");
  std::vector<Discretizer::FeatureBins> bins(schema.feature_count());
  std::vector<double> column(train.size());
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const auto& spec = schema.features[f];
    auto& b = bins[f];
    if (spec.is_categorical()) {
      b.categorical = true;
      b.category_count = spec.categories.size();
      continue;
    }
    for (std::size_t i = 0; i < train.size(); ++i) column[i] = train[i].sample[f];
    std::sort(column.begin(), column.end());
    b.quartiles = {quantile_sorted(column, 0.25), quantile_sorted(column, 0.5),
                   quantile_sorted(column, 0.75)};
    if (b.quartiles[0] == b.quartiles[2]) continue;  // constant-ish feature: one bin
    for (double q : b.quartiles) {
      const double c = spec.kind == FeatureKind::integer ? std::floor(q) : q;
      if (c < spec.lower || c >= spec.upper) continue;
      if (b.cuts.empty() || c > b.cuts.back()) b.cuts.push_back(c);
    }
  }
  return Discretizer(schema, std::move(bins));
}

struct Perturbation {
  Sample sample;
  std::vector<std::uint8_t> agreement;  // 1 where the point shares the center's bin
};

inline std::vector<Perturbation> perturb(const Sample& center, const Discretizer& disc,
                                         const DatasetSchema& schema, int n,
                                         std::uint64_t rng_seed) {
  if (n < 1) throw ArgumentError("perturb: n must be >= 1");
  const std::size_t fn = schema.feature_count();
  std::vector<std::size_t> center_bin(fn);
  for (std::size_t f = 0; f < fn; ++f) center_bin[f] = disc.bin_of(f, center[f]);

  std::vector<Perturbation> out;
  out.reserve(static_cast<std::size_t>(n));
  out.push_back({center, std::vector<std::uint8_t>(fn, 1)});
  auto rng = make_rng(rng_seed);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int k = 1; k < n; ++k) {
    Perturbation p{Sample(std::vector<double>(fn)), std::vector<std::uint8_t>(fn, 1)};
    for (std::size_t f = 0; f < fn; ++f) {
      const std::size_t nb = disc.bin_count(f);
      std::size_t bin = center_bin[f];
      if (coin(rng) == 0 && nb > 1) {
        auto other = std::uniform_int_distribution<std::size_t>(0, nb - 2)(rng);
        bin = other >= center_bin[f] ? other + 1 : other;
        p.agreement[f] = 0;
      }
      p.sample[f] = disc.draw(f, bin, rng);
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline double kernel_weight(std::span<const std::uint8_t> agreement, double kernel_width) {
  if (!(kernel_width > 0.0)) throw ArgumentError("kernel width must be > 0");
  double d2 = 0.0;
  for (auto a : agreement) d2 += a ? 0.0 : 1.0;
  return std::exp(-d2 / (kernel_width * kernel_width));
}

struct LocalPoint {
  std::vector<std::uint8_t> agreement;
  double target = 0.0;  // 1 when the oracle agrees with the center's label
  double weight = 1.0;
};

struct FeatureWeight {
  std::size_t feature = 0;
  double weight = 0.0;
};

namespace detail {

// Weighted ridge on the given columns with an unpenalised intercept (handled
// by weighted centering).
inline Eigen::VectorXd weighted_ridge(const std::vector<LocalPoint>& points,
                                      const std::vector<std::size_t>& columns, double lambda) {
  const auto k = static_cast<Eigen::Index>(columns.size());
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd x(n, k);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < k; ++j) x(i, j) = p.agreement[columns[static_cast<std::size_t>(j)]];
    y(i) = p.target;
    w(i) = p.weight;
  }
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw NumericError("local fit: weights sum to zero");
  const Eigen::RowVectorXd xbar = (w.transpose() * x) / wsum;
  const double ybar = w.dot(y) / wsum;
  const Eigen::MatrixXd xc = x.rowwise() - xbar;
  const Eigen::VectorXd yc = y.array() - ybar;
  Eigen::MatrixXd a = xc.transpose() * w.asDiagonal() * xc;
  a.diagonal().array() += lambda;
  const Eigen::VectorXd b = xc.transpose() * (w.asDiagonal() * yc);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  bool singular = ldlt.info() != Eigen::Success;
  if (lambda == 0.0 && k > 0) {
    // a zero pivot means some column is constant after centering
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    singular = singular || d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff());
  }
  if (singular) throw NumericError("local fit: singular normal matrix; use a positive ridge_lambda");
  return ldlt.solve(b);
}

inline void sort_by_magnitude(std::vector<FeatureWeight>& v) {
  std::stable_sort(v.begin(), v.end(), [](const FeatureWeight& a, const FeatureWeight& b) {
    const double ma = std::abs(a.weight), mb = std::abs(b.weight);
    if (ma != mb) return ma > mb;
    return a.feature < b.feature;
  });
}

}  // namespace detail

// Full fit, keep the top_k largest |coefficients|, refit on that subset.
inline std::vector<FeatureWeight> fit_local(const std::vector<LocalPoint>& points, int top_k,
                                            double ridge_lambda) {
  if (top_k < 1) throw ArgumentError("top_k must be >= 1");
  if (ridge_lambda < 0.0) throw ArgumentError("ridge_lambda must be >= 0");
  if (points.size() < static_cast<std::size_t>(top_k) + 1)
    throw ArgumentError("local fit needs at least top_k + 1 points");
  const std::size_t fn = points.front().agreement.size();
  for (const auto& p : points)
    if (p.agreement.size() != fn) throw ArgumentError("agreement vectors differ in length");
  if (fn == 0) return {};

  std::vector<std::size_t> all(fn);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Eigen::VectorXd full = detail::weighted_ridge(points, all, ridge_lambda);
  std::vector<FeatureWeight> ranked;
  for (std::size_t f = 0; f < fn; ++f) ranked.push_back({f, full(static_cast<Eigen::Index>(f))});
  detail::sort_by_magnitude(ranked);
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(top_k)));

  std::vector<std::size_t> selected;
  for (const auto& r : ranked) selected.push_back(r.feature);
  std::sort(selected.begin(), selected.end());
  const Eigen::VectorXd refit = detail::weighted_ridge(points, selected, ridge_lambda);
  std::vector<FeatureWeight> out;
  for (std::size_t j = 0; j < selected.size(); ++j)
    out.push_back({selected[j], refit(static_cast<Eigen::Index>(j))});
  detail::sort_by_magnitude(out);
  return out;
}

struct ExplainerConfig {
  int num_perturbations = 1000;
  std::optional<double> kernel_width;  // default 0.75 * sqrt(feature count)
  std::optional<int> top_k;            // default min(feature count, 5)
  double ridge_lambda = 1.0;
  std::uint64_t rng_seed = 0;

  double resolved_kernel_width(std::size_t fn) const {
    return kernel_width.value_or(0.75 * std::sqrt(static_cast<double>(fn)));
  }
  int resolved_top_k(std::size_t fn) const {
    return top_k.value_or(static_cast<int>(std::min<std::size_t>(fn, 5)));
  }

  void validate(std::size_t fn) const {
    if (resolved_top_k(fn) < 1) throw ArgumentError("top_k must be >= 1");
    if (num_perturbations < resolved_top_k(fn) + 1)
      throw ArgumentError("num_perturbations must be >= top_k + 1");
    if (!(resolved_kernel_width(fn) > 0.0)) throw ArgumentError("kernel_width must be > 0");
    if (ridge_lambda < 0.0) throw ArgumentError("ridge_lambda must be >= 0");
  }
};

struct ExplanationTerm {
  std::size_t feature = 0;
  double weight = 0.0;
  std::optional<Interval> interval;  // continuous / integer features
  std::optional<int> category;       // categorical features

  friend bool operator==(const ExplanationTerm&, const ExplanationTerm&) = default;
};

struct Explanation {
  int label = 0;
  std::vector<ExplanationTerm> terms;

  friend bool operator==(const Explanation&, const Explanation&) = default;
};

using PredictFn = std::function<int(const Sample&)>;

// Issues exactly config.num_perturbations predictions; point 0 is the
// center and supplies the explained label.
inline Explanation explain(const PredictFn& predict, const Sample& center, const Discretizer& disc,
                           const ExplainerConfig& config) {
  const auto& schema = disc.schema();
  const std::size_t fn = schema.feature_count();
  config.validate(fn);
  const double width = config.resolved_kernel_width(fn);
  const int top_k = std::min<int>(config.resolved_top_k(fn), static_cast<int>(fn));

  auto points = perturb(center, disc, schema, config.num_perturbations, config.rng_seed);
  std::vector<LocalPoint> local;
  local.reserve(points.size());
  int label = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int l = predict(points[i].sample);
    if (i == 0) label = l;
    const double w = kernel_weight(points[i].agreement, width);
    local.push_back({std::move(points[i].agreement), l == label ? 1.0 : 0.0, w});
  }

  Explanation exp{label, {}};
  for (const auto& fw : fit_local(local, top_k, config.ridge_lambda)) {
    ExplanationTerm term{fw.feature, fw.weight, std::nullopt, std::nullopt};
    if (schema.features[fw.feature].is_categorical())
      term.category = static_cast<int>(center[fw.feature]);
    else
      term.interval = disc.interval(fw.feature, disc.bin_of(fw.feature, center[fw.feature]));
    exp.terms.push_back(term);
  }
  return exp;
}

// ---------------------------------------------------------------------------
// Explanation JSON

inline json explanation_to_json(const Explanation& e) {
  json terms = json::array();
  for (const auto& t : e.terms) {
    json jt;
    jt["feature"] = t.feature;
    jt["weight"] = t.weight;
    jt["lower"] = nullptr;
    jt["upper"] = nullptr;
    jt["category"] = nullptr;
    if (t.interval) {
      if (std::isfinite(t.interval->lower)) jt["lower"] = t.interval->lower;
      if (std::isfinite(t.interval->upper)) jt["upper"] = t.interval->upper;
    }
    if (t.category) jt["category"] = *t.category;
    terms.push_back(std::move(jt));
  }
  return {{"label", e.label}, {"terms", std::move(terms)}};
}

inline Explanation explanation_from_json(const json& doc) {
  try {
    Explanation e;
    e.label = doc.at("label").get<int>();
    for (const auto& jt : doc.at("terms")) {
      ExplanationTerm t;
      t.feature = jt.at("feature").get<std::size_t>();
      t.weight = jt.at("weight").get<double>();
      const auto& cat = jt.value("category", json());
      if (!cat.is_null()) {
        t.category = cat.get<int>();
      } else {
        Interval iv;
        const auto& lo = jt.value("lower", json());
        const auto& hi = jt.value("upper", json());
        if (!lo.is_null()) iv.lower = lo.get<double>();
        if (!hi.is_null()) iv.upper = hi.get<double>();
        t.interval = iv;
      }
      e.terms.push_back(t);
    }
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed explanation: ") + ex.what());
  }
}

}  // namespace autolycus

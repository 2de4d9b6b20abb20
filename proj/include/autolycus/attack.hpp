#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "autolycus/data.hpp"
#include "autolycus/error.hpp"
#include "autolycus/explain.hpp"
#include "autolycus/service.hpp"
#include "autolycus/tree.hpp"

namespace autolycus {

enum class Discipline { lifo, fifo };

inline Discipline discipline_from_string(const std::string& s) {
  if (s == "lifo") return Discipline::lifo;
  if (s == "fifo") return Discipline::fifo;
  throw ArgumentError("unknown frontier discipline '" + s + "'");
}

enum class StopReason { budget_exhausted, frontier_empty, bounds_satisfied, oracle_error };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::budget_exhausted: return "budget_exhausted";
    case StopReason::frontier_empty: return "frontier_empty";
    case StopReason::bounds_satisfied: return "bounds_satisfied";
    case StopReason::oracle_error: return "oracle_error";
  }
  return "?";
}

struct AttackConfig {
  int lower_bound = 0;    // keep going while some class has <= this many visits
  int upper_bound = 100;  // visits recorded per class at most
  // Crossing step for continuous features; unset means 1% of the feature range.
  std::optional<double> epsilon;
  int integer_step = 1;
  Discipline discipline = Discipline::lifo;
  std::uint64_t max_queries = 1000;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (lower_bound < 0 || lower_bound > upper_bound)
      throw ArgumentError("need 0 <= lower bound <= upper bound");
    if (epsilon && !(*epsilon > 0.0)) throw ArgumentError("epsilon must be > 0");
    if (integer_step < 1) throw ArgumentError("integer_step must be >= 1");
    if (max_queries < 1) throw ArgumentError("max_queries must be >= 1");
  }

  double epsilon_for(const FeatureSpec& f) const {
    return epsilon.value_or(0.01 * (f.upper - f.lower));
  }
};

struct ParsedTerm {
  std::size_t feature = 0;
  Interval interval;
  std::optional<int> category;

  friend bool operator==(const ParsedTerm&, const ParsedTerm&) = default;
};

// Terms in |weight|-descending order; zero-weight terms carry no boundary
// information and are dropped.
inline std::vector<ParsedTerm> parse_exp(const Explanation& exp, const DatasetSchema& schema) {
  std::vector<ExplanationTerm> terms = exp.terms;
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
    return std::abs(a.weight) > std::abs(b.weight);
  });
  std::vector<ParsedTerm> out;
  for (const auto& t : terms) {
    if (t.weight == 0.0) continue;
    if (t.feature >= schema.feature_count()) continue;
    ParsedTerm p{t.feature, {}, std::nullopt};
    if (schema.features[t.feature].is_categorical()) {
      if (!t.category) continue;
      p.category = t.category;
    } else {
      p.interval = t.interval.value_or(Interval{});
    }
    out.push_back(p);
  }
  return out;
}

struct Candidate {
  Sample sample;
  std::size_t changed_feature = 0;
};

// Single-feature variants of `current` that sit just across each explained
// bin edge (or on every other category).
inline std::vector<Candidate> generate_smp(const Sample& current,
                                           const std::vector<ParsedTerm>& parsed,
                                           const DatasetSchema& schema,
                                           const AttackConfig& config) {
  std::vector<Candidate> out;
  auto emit = [&](std::size_t f, double v) {
    const auto& spec = schema.features[f];
    if (!spec.admits(v) || v == current[f]) return;
    Candidate c{current, f};
    c.sample[f] = v;
    out.push_back(std::move(c));
  };
  for (const auto& term : parsed) {
    const std::size_t f = term.feature;
    const auto& spec = schema.features[f];
    switch (spec.kind) {
      case FeatureKind::categorical: {
        const int cur = static_cast<int>(current[f]);
        for (int c = 0; c < static_cast<int>(spec.categories.size()); ++c)
          if (c != cur) emit(f, c);
        break;
      }
      case FeatureKind::integer: {
        // bins are (lower, upper]: floor(lower) is the nearest integer below
        const double step = config.integer_step;
        if (std::isfinite(term.interval.lower))
          emit(f, std::floor(term.interval.lower) - step + 1.0);
        if (std::isfinite(term.interval.upper)) emit(f, std::floor(term.interval.upper) + step);
        break;
      }
      case FeatureKind::continuous: {
        const double eps = config.epsilon_for(spec);
        if (std::isfinite(term.interval.lower)) emit(f, term.interval.lower - eps);
        if (std::isfinite(term.interval.upper)) emit(f, term.interval.upper + eps);
        break;
      }
    }
  }
  return out;
}

struct QueryRecord {
  Sample sample;
  int label = 0;
  std::ptrdiff_t parent = -1;  // query index of the sample this one was derived from
  int changed_feature = -1;
  bool recorded = false;       // counted towards n_visits

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct AttackTrace {
  std::vector<LabeledSample> visited;
  std::vector<int> n_visits;
  std::uint64_t queries = 0;
  std::uint64_t seed_queries = 0;  // queries spent on seed samples themselves
  std::vector<Sample> frontier_residue;
  StopReason stop_reason = StopReason::frontier_empty;
  std::string error;
  std::vector<QueryRecord> log;

  friend bool operator==(const AttackTrace&, const AttackTrace&) = default;
};

namespace detail {

using SampleKey = std::vector<long long>;

// Values rounded to 9 decimals so epsilon arithmetic noise does not defeat
// deduplication.
inline SampleKey sample_key(const Sample& s) {
  SampleKey k(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) k[i] = std::llround(s[i] * 1e9);
  return k;
}

struct FrontierEntry {
  Sample sample;
  std::ptrdiff_t parent = -1;
  int changed_feature = -1;
};

}  // namespace detail

inline AttackTrace trav_a(const std::vector<Sample>& seeds, QueryOracle& oracle,
                          const DatasetSchema& schema, const AttackConfig& config) {
  config.validate();
  const std::size_t cn = schema.class_count();
  AttackTrace trace;
  trace.n_visits.assign(cn, 0);

  std::deque<detail::FrontierEntry> frontier;
  std::set<detail::SampleKey> in_frontier, queried;

  auto complete = [&](const Sample& s, std::uint64_t salt) {
    bool have_means = std::all_of(schema.features.begin(), schema.features.end(),
                                  [](const FeatureSpec& f) { return f.mean.has_value(); });
    return impute_missing(s, schema, have_means ? ImputeMode::mean : ImputeMode::random,
                          config.rng_seed + salt);
  };
  std::vector<Sample> initial;
  for (std::size_t i = 0; i < seeds.size(); ++i) initial.push_back(complete(seeds[i], i));
  if (initial.empty()) {
    Sample blank(std::vector<double>(schema.feature_count(), kMissing));
    initial.push_back(impute_missing(blank, schema, ImputeMode::random, config.rng_seed));
  }
  for (auto& s : initial) {
    validate_sample(schema, s);
    if (in_frontier.insert(detail::sample_key(s)).second) frontier.push_back({std::move(s), -1, -1});
  }

  const std::uint64_t start = oracle.queries_used();
  std::uint64_t used = 0;
  auto some_class_needs_visits = [&] {
    return std::any_of(trace.n_visits.begin(), trace.n_visits.end(),
                       [&](int v) { return v <= config.lower_bound; });
  };

  bool failed = false;
  while (!frontier.empty() && some_class_needs_visits() && used < config.max_queries) {
    detail::FrontierEntry cur;
    if (config.discipline == Discipline::lifo) {
      cur = std::move(frontier.back());
      frontier.pop_back();
    } else {
      cur = std::move(frontier.front());
      frontier.pop_front();
    }
    const auto key = detail::sample_key(cur.sample);
    in_frontier.erase(key);
    queried.insert(key);

    Explanation exp;
    try {
      exp = oracle.explain(cur.sample);
      used = oracle.queries_used() - start;
      if (exp.label < 0 || static_cast<std::size_t>(exp.label) >= cn)
        throw ProtocolError("oracle returned label " + std::to_string(exp.label) +
                            " outside [0, " + std::to_string(cn) + ")");
    } catch (const Error& e) {
      trace.error = e.what();
      frontier.push_back(std::move(cur));
      failed = true;
      break;
    }

    const auto query_index = static_cast<std::ptrdiff_t>(trace.log.size());
    QueryRecord rec{cur.sample, exp.label, cur.parent, cur.changed_feature, false};
    if (cur.parent < 0) ++trace.seed_queries;
    auto& visits = trace.n_visits[static_cast<std::size_t>(exp.label)];
    if (visits < config.upper_bound) {
      ++visits;
      rec.recorded = true;
      trace.visited.push_back({cur.sample, exp.label});
      for (auto& cand : generate_smp(cur.sample, parse_exp(exp, schema), schema, config)) {
        auto k = detail::sample_key(cand.sample);
        if (queried.count(k) || in_frontier.count(k)) continue;
        in_frontier.insert(std::move(k));
        frontier.push_back(
            {std::move(cand.sample), query_index, static_cast<int>(cand.changed_feature)});
      }
    }
    trace.log.push_back(std::move(rec));
  }

  try {
    trace.queries = failed ? used : oracle.queries_used() - start;
  } catch (const Error&) {
    trace.queries = used;
  }
  for (const auto& e : frontier) trace.frontier_residue.push_back(e.sample);
  if (failed)
    trace.stop_reason = StopReason::oracle_error;
  else if (!some_class_needs_visits())
    trace.stop_reason = StopReason::bounds_satisfied;
  else if (frontier.empty())
    trace.stop_reason = StopReason::frontier_empty;
  else
    trace.stop_reason = StopReason::budget_exhausted;
  return trace;
}

struct Extraction {
  DecisionTree surrogate;
  AttackTrace trace;
  bool constant_surrogate = false;  // fewer than two classes were observed
};

inline Extraction extract(QueryOracle& oracle, const std::vector<Sample>& seeds,
                          const DatasetSchema& schema, const TreeParams& target_params,
                          const AttackConfig& config) {
  Extraction out{DecisionTree{}, trav_a(seeds, oracle, schema, config), false};
  std::set<int> labels;
  for (const auto& v : out.trace.visited) labels.insert(v.label);
  if (labels.size() < 2) {
    out.constant_surrogate = true;
    const int label = labels.empty() ? 0 : *labels.begin();
    const auto n = static_cast<long long>(std::max<std::size_t>(1, out.trace.visited.size()));
    out.surrogate = DecisionTree::constant(schema, target_params, label, n);
  } else {
    out.surrogate = fit(out.trace.visited, schema, target_params);
  }
  return out;
}

inline std::string format_trace_csv(const AttackTrace& trace, const DatasetSchema& schema) {
  std::string out = "query_index,";
  for (const auto& f : schema.features) out += f.name + ',';
  out += "predicted_label,parent_index,changed_feature\n";
  for (std::size_t i = 0; i < trace.log.size(); ++i) {
    const auto& r = trace.log[i];
    out += std::to_string(i) + ',';
    for (std::size_t f = 0; f < schema.feature_count(); ++f)
      out += format_value(schema.features[f], r.sample[f]) + ',';
    out += schema.label_names.at(static_cast<std::size_t>(r.label)) + ',';
    out += std::to_string(r.parent) + ',';
    out += std::to_string(r.changed_feature) + '\n';
  }
  return out;
}

}  // namespace autolycus

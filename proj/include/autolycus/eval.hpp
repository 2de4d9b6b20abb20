#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolycus/attack.hpp"
#include "autolycus/data.hpp"
#include "autolycus/explain.hpp"
#include "autolycus/service.hpp"
#include "autolycus/tree.hpp"

namespace autolycus {

inline double accuracy(const DecisionTree& model, const std::vector<LabeledSample>& test) {
  if (test.empty()) throw ArgumentError("accuracy of an empty test set");
  std::size_t hits = 0;
  for (const auto& s : test) hits += model.predict(s.sample) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// Label agreement between two models; true labels play no part.
inline double r_test(const PredictFn& target, const PredictFn& surrogate,
                     const std::vector<Sample>& inputs) {
  if (inputs.empty()) throw ArgumentError("r_test of an empty input set");
  std::size_t same = 0;
  for (const auto& x : inputs) same += target(x) == surrogate(x) ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(inputs.size());
}

inline double r_test(const DecisionTree& target, const DecisionTree& surrogate,
                     const std::vector<Sample>& inputs) {
  return r_test([&](const Sample& s) { return target.predict(s); },
                [&](const Sample& s) { return surrogate.predict(s); }, inputs);
}

inline std::vector<Sample> inputs_of(const std::vector<LabeledSample>& rows) {
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.sample);
  return out;
}

struct EvalReport {
  double accuracy_target = 0.0;
  double accuracy_surrogate = 0.0;
  double r_test = 0.0;
  std::uint64_t queries = 0;
  int seed_count = 0;
  std::uint64_t repetition_seed = 0;

  json to_json() const {
    return {{"accuracy_target", accuracy_target},   {"accuracy_surrogate", accuracy_surrogate},
            {"r_test", r_test},                     {"queries", queries},
            {"seed_count", seed_count},             {"repetition_seed", repetition_seed}};
  }
};

inline EvalReport evaluate(const DecisionTree& target, const DecisionTree& surrogate,
                           const std::vector<LabeledSample>& test) {
  EvalReport r;
  r.accuracy_target = accuracy(target, test);
  r.accuracy_surrogate = accuracy(surrogate, test);
  r.r_test = autolycus::r_test(target, surrogate, inputs_of(test));
  return r;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepConfig {
  std::string dataset = "dataset";
  std::string data_path;
  std::string schema_path;
  double train_fraction = 0.5;
  TreeParams target;
  std::vector<int> seed_counts{0};           // total seeds, split evenly over classes
  std::vector<std::uint64_t> budgets{100};   // max billed queries per attack
  int repetitions = 1;
  std::uint64_t base_seed = 0;
  AttackConfig attack;
  // Per-class visit bounds; unset means "equal to the cell's budget" so the
  // query budget is the binding constraint.
  std::optional<int> lower_bound;
  std::optional<int> upper_bound;
  ExplainerConfig explainer;
  int threads = 1;

  void validate() const {
    if (repetitions < 1) throw ArgumentError("repetitions must be >= 1");
    if (budgets.empty() || seed_counts.empty()) throw ArgumentError("empty sweep axis");
    for (std::size_t i = 0; i < budgets.size(); ++i) {
      if (budgets[i] < 1) throw ArgumentError("budgets must be positive");
      if (i > 0 && budgets[i] <= budgets[i - 1]) throw ArgumentError("budgets must ascend");
    }
    if (threads < 1) throw ArgumentError("threads must be >= 1");
    target.validate();
  }

  // Relative data/schema paths resolve against `base_dir`.
  static SweepConfig from_json(const json& j, const std::filesystem::path& base_dir = {}) {
    SweepConfig c;
    try {
      c.dataset = j.value("dataset", c.dataset);
      auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return (path.is_relative() && !base_dir.empty() ? base_dir / path : path).string();
      };
      c.data_path = resolve(j.at("data").get<std::string>());
      c.schema_path = resolve(j.at("schema").get<std::string>());
      c.train_fraction = j.value("train_fraction", c.train_fraction);
      if (j.contains("target")) {
        const auto& t = j["target"];
        c.target.max_depth = t.value("max_depth", c.target.max_depth);
        c.target.min_samples_split = t.value("min_samples_split", c.target.min_samples_split);
      }
      c.seed_counts = j.value("seed_counts", c.seed_counts);
      c.budgets = j.value("budgets", c.budgets);
      c.repetitions = j.value("repetitions", c.repetitions);
      c.base_seed = j.value("base_seed", c.base_seed);
      c.threads = j.value("threads", c.threads);
      if (j.contains("attack")) {
        const auto& a = j["attack"];
        if (a.contains("lb")) c.lower_bound = a["lb"].get<int>();
        if (a.contains("ub")) c.upper_bound = a["ub"].get<int>();
        if (a.contains("epsilon")) c.attack.epsilon = a["epsilon"].get<double>();
        c.attack.integer_step = a.value("integer_step", c.attack.integer_step);
        if (a.contains("discipline"))
          c.attack.discipline = discipline_from_string(a["discipline"].get<std::string>());
      }
      if (j.contains("explainer")) {
        const auto& e = j["explainer"];
        c.explainer.num_perturbations = e.value("num_perturbations", c.explainer.num_perturbations);
        if (e.contains("kernel_width")) c.explainer.kernel_width = e["kernel_width"].get<double>();
        if (e.contains("top_k")) c.explainer.top_k = e["top_k"].get<int>();
        c.explainer.ridge_lambda = e.value("ridge_lambda", c.explainer.ridge_lambda);
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("sweep config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

struct SweepRow {
  std::string dataset;
  int seed_count = 0;
  std::uint64_t budget = 0;
  double budget_fraction = 0.0;
  std::string repetition;  // index, "mean" or "std"
  std::optional<double> acc_target;
  std::optional<double> acc_surrogate;
  std::optional<double> r_test;
  std::optional<double> queries;
  std::string stop_reason;  // "error: ..." for failed cells
};

struct SweepResult {
  std::vector<SweepRow> cells;       // per repetition, deterministic order
  std::vector<SweepRow> aggregates;  // mean then std per (seed_count, budget)
};

namespace detail {

struct RepetitionSetup {
  std::vector<LabeledSample> train, test;
  std::optional<DecisionTree> target;
  std::optional<Discretizer> disc;
  std::string error;
};

inline std::string opt_num(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace detail

inline SweepResult run_experiment(const Dataset& data, const SweepConfig& config) {
  config.validate();
  const auto& schema = data.schema;
  const std::size_t cn = schema.class_count();
  const auto reps = static_cast<std::size_t>(config.repetitions);

  std::vector<detail::RepetitionSetup> setups(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    auto& s = setups[r];
    const std::uint64_t seed = config.base_seed + r;
    try {
      auto parts = split(data.samples, config.train_fraction, seed);
      s.train = std::move(parts.train);
      s.test = std::move(parts.test);
      TreeParams params = config.target;
      params.rng_seed = seed;
      s.target = fit(s.train, schema, params);
      s.disc = build_discretizer(s.train, schema);
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  }

  struct Cell {
    int seed_count;
    std::uint64_t budget;
    std::size_t rep;
  };
  std::vector<Cell> cells;
  for (int sc : config.seed_counts)
    for (auto b : config.budgets)
      for (std::size_t r = 0; r < reps; ++r) cells.push_back({sc, b, r});

  SweepResult result;
  result.cells.resize(cells.size());
  auto run_cell = [&](std::size_t i) {
    const auto& cell = cells[i];
    const auto& setup = setups[cell.rep];
    const std::uint64_t seed = config.base_seed + cell.rep;
    SweepRow row;
    row.dataset = config.dataset;
    row.seed_count = cell.seed_count;
    row.budget = cell.budget;
    row.repetition = std::to_string(cell.rep);
    try {
      if (!setup.error.empty()) throw Error(setup.error);
      row.budget_fraction =
          static_cast<double>(cell.budget) / static_cast<double>(setup.train.size());
      ExplainerConfig ecfg = config.explainer;
      ecfg.rng_seed = seed;
      LocalOracle oracle(*setup.target, *setup.disc, ecfg, Pricing::per_call);
      const int per_class = cell.seed_count / static_cast<int>(cn);
      auto seeds = sample_seeds(setup.train, per_class, cn, seed).seeds;
      row.seed_count = static_cast<int>(seeds.size());
      AttackConfig acfg = config.attack;
      acfg.max_queries = cell.budget;
      acfg.rng_seed = seed;
      acfg.upper_bound = config.upper_bound.value_or(static_cast<int>(cell.budget));
      acfg.lower_bound = std::min(acfg.upper_bound,
                                  config.lower_bound.value_or(static_cast<int>(cell.budget)));
      TreeParams params = config.target;
      params.rng_seed = seed;
      auto ex = extract(oracle, seeds, schema, params, acfg);
      auto report = evaluate(*setup.target, ex.surrogate, setup.test);
      row.acc_target = report.accuracy_target;
      row.acc_surrogate = report.accuracy_surrogate;
      row.r_test = report.r_test;
      row.queries = static_cast<double>(ex.trace.queries);
      row.stop_reason = to_string(ex.trace.stop_reason);
    } catch (const std::exception& e) {
      row.stop_reason = std::string("error: ") + e.what();
    }
    result.cells[i] = std::move(row);
  };

  if (config.threads <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    for (int t = 0; t < config.threads; ++t)
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(i);
      });
  }

  // Aggregates over successful repetitions of each (seed_count, budget).
  for (std::size_t start = 0; start < cells.size(); start += reps) {
    const auto& first = result.cells[start];
    SweepRow mean{first.dataset, first.seed_count, first.budget, first.budget_fraction, "mean",
                  {}, {}, {}, {}, ""};
    SweepRow sd = mean;
    sd.repetition = "std";
    auto stat = [&](auto member, std::optional<double>& m, std::optional<double>& s) {
      std::vector<double> v;
      for (std::size_t r = 0; r < reps; ++r)
        if (auto x = result.cells[start + r].*member) v.push_back(*x);
      if (v.empty()) return;
      double sum = 0.0;
      for (double x : v) sum += x;
      const double mu = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mu) * (x - mu);
      m = mu;
      s = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    };
    stat(&SweepRow::acc_target, mean.acc_target, sd.acc_target);
    stat(&SweepRow::acc_surrogate, mean.acc_surrogate, sd.acc_surrogate);
    stat(&SweepRow::r_test, mean.r_test, sd.r_test);
    stat(&SweepRow::queries, mean.queries, sd.queries);
    result.aggregates.push_back(std::move(mean));
    result.aggregates.push_back(std::move(sd));
  }
  return result;
}

inline SweepResult run_experiment(const SweepConfig& config) {
  return run_experiment(load_dataset(config.data_path, config.schema_path), config);
}

inline std::string format_results_csv(const SweepResult& result) {
  std::string out =
      "dataset,seed_count,budget,budget_fraction,repetition,acc_target,acc_surrogate,r_test,"
      "queries,stop_reason\n";
  auto emit = [&](const SweepRow& r) {
    std::string reason = r.stop_reason;
    for (char& c : reason)
      if (c == ',' || c == '\n') c = ';';
    out += r.dataset + ',' + std::to_string(r.seed_count) + ',' + std::to_string(r.budget) + ',' +
           format_double(r.budget_fraction) + ',' + r.repetition + ',' +
           detail::opt_num(r.acc_target) + ',' + detail::opt_num(r.acc_surrogate) + ',' +
           detail::opt_num(r.r_test) + ',' + detail::opt_num(r.queries) + ',' + reason + '\n';
  };
  for (const auto& r : result.cells) emit(r);
  for (const auto& r : result.aggregates) emit(r);
  return out;
}

}  // namespace autolycus

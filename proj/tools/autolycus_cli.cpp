#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <string>

#include <CLI11.hpp>

#include "autolycus/autolycus.hpp"

using namespace autolycus;

namespace {

struct ExplainerFlags {
  int num_perturbations = 1000;
  std::optional<double> kernel_width;
  std::optional<int> top_k;
  double ridge_lambda = 1.0;

  void add(CLI::App* app) {
    app->add_option("--num-perturbations", num_perturbations, "Explainer perturbation count");
    app->add_option("--kernel-width", kernel_width, "Explainer kernel width");
    app->add_option("--top-k", top_k, "Features kept per explanation");
    app->add_option("--ridge-lambda", ridge_lambda, "Ridge penalty of the local fit");
  }

  ExplainerConfig config(std::uint64_t seed) const {
    ExplainerConfig c;
    c.num_perturbations = num_perturbations;
    c.kernel_width = kernel_width;
    c.top_k = top_k;
    c.ridge_lambda = ridge_lambda;
    c.rng_seed = seed;
    return c;
  }
};

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path))
    throw ArgumentError("cannot open file '" + path + "'");
}

DecisionTree load_model(const std::string& path, const DatasetSchema& schema) {
  require_file(path);
  return deserialize(read_file(path), schema);
}

std::vector<LabeledSample> load_rows(const std::string& path, const DatasetSchema& schema,
                                     bool require_label, bool allow_missing) {
  require_file(path);
  std::ifstream in(path);
  return parse_samples(in, schema, require_label, allow_missing);
}

Discretizer discretizer_for(const std::string& data_path, const std::string& schema_path) {
  require_file(data_path);
  require_file(schema_path);
  auto ds = load_dataset(data_path, schema_path);
  return build_discretizer(ds.samples, ds.schema);
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data, schema, out;
  int max_depth = 32;
  int min_samples_split = 2;
  std::optional<double> train_fraction;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  require_file(a.schema);
  require_file(a.data);
  auto ds = load_dataset(a.data, a.schema);
  TreeParams params{a.max_depth, a.min_samples_split, a.seed};
  std::vector<LabeledSample> train = ds.samples;
  std::vector<LabeledSample> test;
  if (a.train_fraction) {
    auto parts = split(ds.samples, *a.train_fraction, a.seed);
    train = std::move(parts.train);
    test = std::move(parts.test);
  }
  auto tree = fit(train, ds.schema, params);
  write_file(a.out, serialize(tree));
  auto shape = tree.describe();
  std::cout << "depth " << shape.depth << " leaves " << shape.leaf_count << " nodes "
            << shape.node_count << " train_accuracy " << format_double(accuracy(tree, train));
  if (!test.empty()) std::cout << " test_accuracy " << format_double(accuracy(tree, test));
  std::cout << '\n';
  return 0;
}

// --- serve ---------------------------------------------------------------

struct ServeArgs {
  std::string model, schema, data, host = "127.0.0.1", pricing = "per_call";
  int port = 8080;
  std::uint64_t seed = 0;
  ExplainerFlags explainer;
};

int run_serve(const ServeArgs& a) {
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  // block before any thread starts so only sigwait sees them
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  require_file(a.schema);
  auto schema = load_schema(a.schema);
  auto model = load_model(a.model, schema);
  auto disc = discretizer_for(a.data, a.schema);
  ServiceConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  cfg.pricing = pricing_from_string(a.pricing);
  cfg.explainer = a.explainer.config(a.seed);
  cfg.model_path = a.model;
  auto handle = serve(std::move(model), std::move(disc), cfg);
  std::cout << "listening on " << handle->base_url() << std::endl;

  int sig = 0;
  sigwait(&sigs, &sig);
  handle->stop();
  std::cout << "stopped after " << handle->queries() << " queries" << std::endl;
  return 0;
}

// --- attack --------------------------------------------------------------

struct AttackArgs {
  std::string target_url, target_model, data, schema, seeds, pricing = "per_call";
  std::string out_surrogate, out_trace;
  int lb = 0, ub = 100, max_depth = 32, min_samples_split = 2, integer_step = 1;
  std::uint64_t max_queries = 1000;
  std::optional<double> epsilon;
  std::string discipline = "lifo";
  std::uint64_t seed = 0;
  ExplainerFlags explainer;
};

int run_attack(const AttackArgs& a) {
  require_file(a.schema);
  auto schema = load_schema(a.schema);
  AttackConfig cfg;
  cfg.lower_bound = a.lb;
  cfg.upper_bound = a.ub;
  cfg.epsilon = a.epsilon;
  cfg.integer_step = a.integer_step;
  cfg.discipline = discipline_from_string(a.discipline);
  cfg.max_queries = a.max_queries;
  cfg.rng_seed = a.seed;
  cfg.validate();

  std::vector<Sample> seeds;
  if (!a.seeds.empty()) {
    for (auto& row : load_rows(a.seeds, schema, false, true)) seeds.push_back(std::move(row.sample));
  }

  std::unique_ptr<QueryOracle> oracle;
  if (!a.target_url.empty()) {
    oracle = remote_oracle(a.target_url);
  } else {
    auto model = load_model(a.target_model, schema);
    if (a.data.empty()) throw ArgumentError("--target-model needs --data to build the explainer");
    oracle = local_oracle(std::move(model), discretizer_for(a.data, a.schema),
                          a.explainer.config(a.seed), pricing_from_string(a.pricing));
  }

  TreeParams params{a.max_depth, a.min_samples_split, a.seed};
  auto result = extract(*oracle, seeds, schema, params, cfg);
  if (!a.out_surrogate.empty()) write_file(a.out_surrogate, serialize(result.surrogate));
  if (!a.out_trace.empty()) write_file(a.out_trace, format_trace_csv(result.trace, schema));

  json summary = {{"queries", result.trace.queries},
                  {"seed_queries", result.trace.seed_queries},
                  {"visited", result.trace.visited.size()},
                  {"n_visits", result.trace.n_visits},
                  {"stop_reason", to_string(result.trace.stop_reason)},
                  {"constant_surrogate", result.constant_surrogate}};
  if (!result.trace.error.empty()) summary["error"] = result.trace.error;
  std::cout << summary.dump() << '\n';
  return result.trace.stop_reason == StopReason::oracle_error ? 1 : 0;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string target, surrogate, test, schema;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  require_file(a.schema);
  auto schema = load_schema(a.schema);
  auto target = load_model(a.target, schema);
  auto surrogate = load_model(a.surrogate, schema);
  auto test = load_rows(a.test, schema, true, false);
  auto report = evaluate(target, surrogate, test);
  report.repetition_seed = a.seed;
  std::cout << report.to_json().dump() << '\n';
  return 0;
}

// --- experiment ----------------------------------------------------------

struct ExperimentArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

int run_experiment_cmd(const ExperimentArgs& a) {
  require_file(a.config);
  json doc;
  try {
    doc = json::parse(read_file(a.config));
  } catch (const json::exception& e) {
    throw FormatError("config '" + a.config + "': " + e.what());
  }
  auto cfg = SweepConfig::from_json(doc, std::filesystem::path(a.config).parent_path());
  if (a.seed) cfg.base_seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  auto result = run_experiment(cfg);
  auto csv = format_results_csv(result);
  if (a.out.empty())
    std::cout << csv;
  else
    write_file(a.out, csv);
  int failed = 0;
  for (const auto& row : result.cells)
    if (row.stop_reason.rfind("error", 0) == 0) ++failed;
  if (failed) std::cerr << failed << " cell(s) failed\n";
  return 0;
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  int depth = 3, features = 2, domain = 16, classes = 2;
  std::uint64_t seed = 0;
  std::string out_model, out_data, out_schema;
};

int run_synth(const SynthArgs& a) {
  auto s = synth_tree_dataset(a.depth, a.features, a.domain, a.seed, a.classes);
  std::string schema_path = a.out_schema;
  if (schema_path.empty() && !a.out_data.empty())
    schema_path = std::filesystem::path(a.out_data).replace_extension(".schema.json").string();
  if (!a.out_model.empty()) write_file(a.out_model, serialize(s.tree));
  if (!a.out_data.empty()) write_file(a.out_data, format_csv(s.schema, s.samples));
  if (!schema_path.empty()) write_file(schema_path, schema_to_json(s.schema).dump(2) + "\n");
  auto shape = s.tree.describe();
  std::cout << "depth " << shape.depth << " leaves " << shape.leaf_count << " samples "
            << s.samples.size() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-tree extraction through explanation queries"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Fit a target tree");
  t->add_option("--data", train.data)->required();
  t->add_option("--schema", train.schema)->required();
  t->add_option("--out", train.out)->required();
  t->add_option("--max-depth", train.max_depth);
  t->add_option("--min-samples-split", train.min_samples_split);
  t->add_option("--train-fraction", train.train_fraction, "Hold out the rest (default: use all rows)");
  t->add_option("--seed", train.seed);

  ServeArgs srv;
  auto* s = app.add_subcommand("serve", "Expose a model and its explainer over HTTP");
  s->add_option("--model", srv.model)->required();
  s->add_option("--schema", srv.schema)->required();
  s->add_option("--data", srv.data, "Training rows for the explainer's discretizer")->required();
  s->add_option("--host", srv.host);
  s->add_option("--port", srv.port);
  s->add_option("--pricing", srv.pricing)->check(CLI::IsMember({"per_call", "per_internal"}));
  s->add_option("--seed", srv.seed);
  srv.explainer.add(s);

  AttackArgs atk;
  auto* k = app.add_subcommand("attack", "Run the extraction attack");
  auto* url = k->add_option("--target-url", atk.target_url);
  auto* mdl = k->add_option("--target-model", atk.target_model);
  url->excludes(mdl);
  mdl->excludes(url);
  k->add_option("--data", atk.data, "Training rows for an in-process explainer");
  k->add_option("--schema", atk.schema)->required();
  k->add_option("--seeds", atk.seeds);
  k->add_option("--lb", atk.lb);
  k->add_option("--ub", atk.ub);
  k->add_option("--max-queries", atk.max_queries);
  k->add_option("--epsilon", atk.epsilon);
  k->add_option("--integer-step", atk.integer_step);
  k->add_option("--discipline", atk.discipline)->check(CLI::IsMember({"lifo", "fifo"}));
  k->add_option("--max-depth", atk.max_depth, "Surrogate depth limit");
  k->add_option("--min-samples-split", atk.min_samples_split);
  k->add_option("--pricing", atk.pricing)->check(CLI::IsMember({"per_call", "per_internal"}));
  k->add_option("--seed", atk.seed);
  k->add_option("--out-surrogate", atk.out_surrogate);
  k->add_option("--out-trace", atk.out_trace);
  atk.explainer.add(k);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compare a surrogate with its target");
  e->add_option("--target", ev.target)->required();
  e->add_option("--surrogate", ev.surrogate)->required();
  e->add_option("--test", ev.test)->required();
  e->add_option("--schema", ev.schema)->required();
  e->add_option("--seed", ev.seed);

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Run a seed-count by budget sweep");
  x->add_option("--config", ex.config)->required();
  x->add_option("--out", ex.out);
  x->add_option("--seed", ex.seed, "Overrides base_seed");
  x->add_option("--threads", ex.threads);

  SynthArgs sy;
  auto* y = app.add_subcommand("synth", "Generate a random integer-domain tree and its domain");
  y->add_option("--depth", sy.depth);
  y->add_option("--features", sy.features);
  y->add_option("--domain", sy.domain);
  y->add_option("--classes", sy.classes);
  y->add_option("--seed", sy.seed);
  y->add_option("--out-model", sy.out_model);
  y->add_option("--out-data", sy.out_data);
  y->add_option("--out-schema", sy.out_schema);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*t) return run_train(train);
    if (*s) return run_serve(srv);
    if (*k) {
      if (atk.target_url.empty() && atk.target_model.empty())
        throw ArgumentError("one of --target-url or --target-model is required");
      return run_attack(atk);
    }
    if (*e) return run_eval(ev);
    if (*x) return run_experiment_cmd(ex);
    if (*y) return run_synth(sy);
  } catch (const InputError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 2;
}

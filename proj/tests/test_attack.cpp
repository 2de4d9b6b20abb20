#include <set>

#include <gtest/gtest.h>

#include "autolycus/attack.hpp"
#include "autolycus/synth.hpp"
#include "test_util.hpp"

namespace autolycus {
namespace {

using testing::data_path;

DatasetSchema int_line() {
  DatasetSchema s;
  FeatureSpec f;
  f.name = "f";
  f.kind = FeatureKind::integer;
  f.lower = 0;
  f.upper = 10;
  s.features = {f};
  s.label_names = {"A", "B"};
  s.label_column = "y";
  return s;
}

DecisionTree stump(const DatasetSchema& s, double t) {
  std::vector<TreeNode> nodes(3);
  nodes[0].feature = 0;
  nodes[0].threshold = t;
  nodes[0].left = 1;
  nodes[0].right = 2;
  nodes[1].counts = {1, 0};
  nodes[2].counts = {0, 1};
  return DecisionTree(s, {}, nodes);
}

Discretizer line_disc(const DatasetSchema& s) {
  std::vector<LabeledSample> rows;
  for (int i = 0; i <= 10; ++i) rows.push_back({Sample{double(i)}, 0});
  return build_discretizer(rows, s);  // cuts at 2, 5, 7
}

ExplainerConfig small_explainer() {
  ExplainerConfig c;
  c.num_perturbations = 300;
  return c;
}

// Wraps an oracle and fails every explain after the first `ok` calls.
class FlakyOracle final : public QueryOracle {
 public:
  FlakyOracle(QueryOracle& inner, int ok) : inner_(inner), ok_(ok) {}
  int predict(const Sample& s) override { return inner_.predict(s); }
  Explanation explain(const Sample& s) override {
    if (ok_-- <= 0) throw TransportError("connection reset");
    return inner_.explain(s);
  }
  std::uint64_t queries_used() const override { return inner_.queries_used(); }

 private:
  QueryOracle& inner_;
  int ok_;
};

TEST(TravA, HandSimulatedStump) {
  auto s = int_line();
  auto disc = line_disc(s);
  ASSERT_EQ(disc.feature(0).cuts, (std::vector<double>{2, 5, 7}));
  LocalOracle oracle(stump(s, 5), disc, small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.lower_bound = 1;
  cfg.upper_bound = 10;
  auto trace = trav_a({Sample{0}}, oracle, s, cfg);
  std::vector<double> order;
  for (const auto& r : trace.log) order.push_back(r.sample[0]);
  // 0 -> 3 crosses the (-inf, 2] edge, 3 -> 6 crosses (2, 5], then 6 -> 8
  EXPECT_EQ(order, (std::vector<double>{0, 3, 6, 8}));
  EXPECT_EQ(trace.log[2].label, 1);
  EXPECT_EQ(trace.log[2].parent, 1);
  EXPECT_EQ(trace.log[2].changed_feature, 0);
  EXPECT_EQ(trace.queries, 4u);
  EXPECT_EQ(trace.seed_queries, 1u);
  EXPECT_EQ(trace.n_visits, (std::vector<int>{2, 2}));
  EXPECT_EQ(trace.stop_reason, StopReason::bounds_satisfied);
  EXPECT_LE(trace.queries, 10u);
}

TEST(TravA, ConstantTargetStopsAfterOneQuery) {
  auto s = int_line();
  auto disc = line_disc(s);
  auto constant = DecisionTree::constant(s, {}, 0);
  LocalOracle oracle(constant, disc, small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.lower_bound = 0;
  auto trace = trav_a({Sample{4}}, oracle, s, cfg);
  EXPECT_EQ(trace.queries, 1u);
  // class B is never seen and the zero-weight explanation yields no candidates
  EXPECT_EQ(trace.stop_reason, StopReason::frontier_empty);
  auto ex = extract(oracle, {Sample{4}}, s, {}, cfg);
  EXPECT_TRUE(ex.constant_surrogate);
  EXPECT_EQ(ex.surrogate.predict(Sample{9}), 0);
}

TEST(TravA, QueriesEqualOracleDeltaAndBudgetHolds) {
  auto ds = load_dataset(data_path("iris.csv"), data_path("iris.schema.json"));
  auto disc = build_discretizer(ds.samples, ds.schema);
  TreeParams p;
  p.max_depth = 3;
  LocalOracle oracle(fit(ds.samples, ds.schema, p), disc, small_explainer(), Pricing::per_call);
  oracle.predict(ds.samples[0].sample);  // pre-existing usage is not attributed to the run
  AttackConfig cfg;
  cfg.lower_bound = 1000;
  cfg.upper_bound = 1000;
  cfg.max_queries = 37;
  auto trace = trav_a({ds.samples[0].sample}, oracle, ds.schema, cfg);
  EXPECT_EQ(trace.queries, 37u);
  EXPECT_EQ(oracle.queries_used(), 38u);
  EXPECT_EQ(trace.log.size(), 37u);
  EXPECT_EQ(trace.stop_reason, StopReason::budget_exhausted);
}

TEST(TravA, PerInternalBudgetCountsInternalPredictions) {
  auto s = int_line();
  LocalOracle oracle(stump(s, 5), line_disc(s), small_explainer(), Pricing::per_internal_prediction);
  AttackConfig cfg;
  cfg.lower_bound = 5;
  cfg.max_queries = 700;
  auto trace = trav_a({Sample{0}}, oracle, s, cfg);
  EXPECT_EQ(trace.log.size(), 3u);  // the third call starts under budget and overshoots it
  EXPECT_EQ(trace.queries, 903u);
}

TEST(TravA, NeverRequeriesAndLogIsUnique) {
  auto ds = load_dataset(data_path("german_credit.csv"), data_path("german_credit.schema.json"));
  auto parts = split(ds.samples, 0.4, 3);
  auto disc = build_discretizer(parts.train, ds.schema);
  TreeParams p;
  p.max_depth = 8;
  LocalOracle oracle(fit(parts.train, ds.schema, p), disc, small_explainer(), Pricing::per_call);
  auto seeds = sample_seeds(parts.train, 3, 2, 3).seeds;
  seeds.push_back(seeds.front());  // duplicate seed
  AttackConfig cfg;
  cfg.lower_bound = 60;
  cfg.upper_bound = 60;
  cfg.max_queries = 150;
  cfg.discipline = Discipline::fifo;
  auto trace = trav_a(seeds, oracle, ds.schema, cfg);
  std::set<std::vector<double>> seen;
  for (const auto& r : trace.log) EXPECT_TRUE(seen.insert(r.sample.values).second);
  EXPECT_EQ(trace.seed_queries, 6u);
  for (std::size_t i = 0; i < trace.log.size(); ++i) {
    const auto& r = trace.log[i];
    validate_sample(ds.schema, r.sample);
    if (r.parent < 0) continue;
    ASSERT_LT(static_cast<std::size_t>(r.parent), i);
    const auto& parent = trace.log[static_cast<std::size_t>(r.parent)].sample;
    int diffs = 0;
    for (std::size_t f = 0; f < parent.size(); ++f) diffs += parent[f] != r.sample[f];
    EXPECT_EQ(diffs, 1);
    EXPECT_NE(parent[static_cast<std::size_t>(r.changed_feature)],
              r.sample[static_cast<std::size_t>(r.changed_feature)]);
  }
}

TEST(TravA, SmallerBudgetGivesPrefix) {
  auto ds = load_dataset(data_path("iris.csv"), data_path("iris.schema.json"));
  auto disc = build_discretizer(ds.samples, ds.schema);
  TreeParams p;
  p.max_depth = 2;
  auto tree = fit(ds.samples, ds.schema, p);
  AttackConfig cfg;
  cfg.lower_bound = 500;
  cfg.upper_bound = 500;
  auto run = [&](std::uint64_t budget) {
    LocalOracle oracle(tree, disc, small_explainer(), Pricing::per_call);
    auto c = cfg;
    c.max_queries = budget;
    return trav_a({ds.samples[0].sample, ds.samples[100].sample}, oracle, ds.schema, c);
  };
  auto a = run(20), b = run(60);
  ASSERT_EQ(a.log.size(), 20u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i], b.log[i]);
  EXPECT_EQ(run(60), b);
}

TEST(TravA, UpperBoundStopsExpansion) {
  auto s = int_line();
  LocalOracle oracle(stump(s, 5), line_disc(s), small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.lower_bound = 1;
  cfg.upper_bound = 1;
  auto trace = trav_a({Sample{0}}, oracle, s, cfg);
  EXPECT_LE(trace.n_visits[0], 1);
  EXPECT_LE(trace.n_visits[1], 1);
  EXPECT_EQ(trace.visited.size(), 1u);  // class B never reached once A stops expanding
  EXPECT_EQ(trace.stop_reason, StopReason::frontier_empty);
}

TEST(TravA, OracleErrorKeepsPartialTrace) {
  auto s = int_line();
  LocalOracle inner(stump(s, 5), line_disc(s), small_explainer(), Pricing::per_call);
  FlakyOracle flaky(inner, 2);
  AttackConfig cfg;
  cfg.lower_bound = 3;
  auto trace = trav_a({Sample{0}}, flaky, s, cfg);
  EXPECT_EQ(trace.stop_reason, StopReason::oracle_error);
  EXPECT_EQ(trace.log.size(), 2u);
  EXPECT_EQ(trace.queries, 2u);
  EXPECT_NE(trace.error.find("connection reset"), std::string::npos);
  EXPECT_FALSE(trace.frontier_residue.empty());
}

TEST(TravA, MissingSeedValuesImputedWithMeans) {
  auto ds = load_dataset(data_path("iris.csv"), data_path("iris.schema.json"));
  auto disc = build_discretizer(ds.samples, ds.schema);
  LocalOracle oracle(fit(ds.samples, ds.schema, {}), disc, small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.max_queries = 1;
  auto trace = trav_a({Sample{kMissing, 3.0, kMissing, 1.0}}, oracle, ds.schema, cfg);
  ASSERT_EQ(trace.log.size(), 1u);
  EXPECT_DOUBLE_EQ(trace.log[0].sample[0], *ds.schema.features[0].mean);
  EXPECT_DOUBLE_EQ(trace.log[0].sample[1], 3.0);
}

TEST(TravA, NoSeedsStartsFromRandomSample) {
  auto s = int_line();
  LocalOracle oracle(stump(s, 5), line_disc(s), small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.lower_bound = 1;
  cfg.rng_seed = 4;
  auto trace = trav_a({}, oracle, s, cfg);
  ASSERT_FALSE(trace.log.empty());
  EXPECT_EQ(trace.log[0].parent, -1);
  EXPECT_EQ(trace.stop_reason, StopReason::bounds_satisfied);
}

TEST(GenerateSmp, ContinuousCrossesByEpsilon) {
  DatasetSchema s;
  FeatureSpec f;
  f.name = "x";
  f.kind = FeatureKind::continuous;
  f.lower = 0;
  f.upper = 10;
  s.features = {f};
  s.label_names = {"A", "B"};
  AttackConfig cfg;
  cfg.epsilon = 0.01;
  auto c = generate_smp(Sample{3.0}, {{0, Interval{2.5, 4.0}, std::nullopt}}, s, cfg);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_DOUBLE_EQ(c[0].sample[0], 2.49);
  EXPECT_DOUBLE_EQ(c[1].sample[0], 4.01);
  // unset epsilon is 1% of the range; the edge at the domain top is skipped
  cfg.epsilon.reset();
  c = generate_smp(Sample{9.95}, {{0, Interval{9.5, 10.0}, std::nullopt}}, s, cfg);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c[0].sample[0], 9.4);
  c = generate_smp(Sample{1.0}, {{0, Interval{}, std::nullopt}}, s, cfg);
  EXPECT_TRUE(c.empty());
}

TEST(GenerateSmp, IntegerStep) {
  auto s = int_line();
  AttackConfig cfg;
  auto c = generate_smp(Sample{4}, {{0, Interval{2, 5}, std::nullopt}}, s, cfg);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].sample[0], 2);
  EXPECT_EQ(c[1].sample[0], 6);
  cfg.integer_step = 2;
  c = generate_smp(Sample{4}, {{0, Interval{2, 5}, std::nullopt}}, s, cfg);
  EXPECT_EQ(c[0].sample[0], 1);
  EXPECT_EQ(c[1].sample[0], 7);
}

TEST(GenerateSmp, CategoricalTriesEveryOtherCategory) {
  DatasetSchema s;
  FeatureSpec f;
  f.name = "c";
  f.kind = FeatureKind::categorical;
  f.categories = {"a", "b", "c", "d"};
  s.features = {f};
  s.label_names = {"A", "B"};
  auto c = generate_smp(Sample{2}, {{0, Interval{}, 2}}, s, AttackConfig{});
  std::vector<double> got;
  for (const auto& x : c) got.push_back(x.sample[0]);
  EXPECT_EQ(got, (std::vector<double>{0, 1, 3}));
}

TEST(ParseExp, OrdersByMagnitudeAndDropsZeros) {
  auto s = int_line();
  s.features.push_back(s.features[0]);
  s.features[1].name = "g";
  Explanation e{0, {{0, 0.1, Interval{1, 2}, std::nullopt},
                    {1, -0.7, Interval{3, 4}, std::nullopt},
                    {0, 0.0, Interval{5, 6}, std::nullopt}}};
  auto p = parse_exp(e, s);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0].feature, 1u);
  EXPECT_EQ(p[0].interval.lower, 3);
  EXPECT_EQ(p[1].feature, 0u);
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  c.lower_bound = 5;
  c.upper_bound = 4;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.max_queries = 0;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_EQ(discipline_from_string("fifo"), Discipline::fifo);
  EXPECT_THROW(discipline_from_string("random"), ArgumentError);
}

TEST(TraceCsv, Columns) {
  auto s = int_line();
  LocalOracle oracle(stump(s, 5), line_disc(s), small_explainer(), Pricing::per_call);
  AttackConfig cfg;
  cfg.lower_bound = 1;
  cfg.upper_bound = 10;
  auto csv = format_trace_csv(trav_a({Sample{0}}, oracle, s, cfg), s);
  EXPECT_EQ(csv,
            "query_index,f,predicted_label,parent_index,changed_feature\n"
            "0,0,A,-1,-1\n"
            "1,3,A,0,0\n"
            "2,6,B,1,0\n"
            "3,8,B,2,0\n");
}

TEST(Extract, SaturatingSynthRecoversTarget) {
  auto syn = synth_tree_dataset(2, 2, 4, 3);
  auto disc = build_discretizer(syn.samples, syn.schema);
  LocalOracle oracle(syn.tree, disc, small_explainer(), Pricing::per_call);
  std::vector<Sample> seeds;
  for (const auto& r : syn.samples) seeds.push_back(r.sample);  // every domain point
  AttackConfig cfg;
  cfg.lower_bound = 100;
  cfg.upper_bound = 100;
  auto ex = extract(oracle, seeds, syn.schema, TreeParams{}, cfg);
  for (const auto& r : syn.samples) EXPECT_EQ(ex.surrogate.predict(r.sample), r.label);
}

}  // namespace
}  // namespace autolycus

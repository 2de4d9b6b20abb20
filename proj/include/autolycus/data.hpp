#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "autolycus/error.hpp"
#include "autolycus/util.hpp"

namespace autolycus {

using json = nlohmann::json;

enum class FeatureKind { continuous, integer, categorical };

inline const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::integer: return "integer";
    case FeatureKind::categorical: return "categorical";
  }
  return "?";
}

inline FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "continuous") return FeatureKind::continuous;
  if (s == "integer") return FeatureKind::integer;
  if (s == "categorical") return FeatureKind::categorical;
  throw SchemaError("unknown feature kind '" + s + "'");
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  double lower = 0.0;
  double upper = 0.0;
  std::vector<std::string> categories;
  // Imputation value. For categorical features this is the modal category index.
  std::optional<double> mean;

  bool is_categorical() const { return kind == FeatureKind::categorical; }

  // Numeric range of the stored value; categoricals store an index.
  double min_value() const { return is_categorical() ? 0.0 : lower; }
  double max_value() const {
    return is_categorical() ? static_cast<double>(categories.size()) - 1.0 : upper;
  }

  bool admits(double v) const {
    if (!std::isfinite(v)) return false;
    if (v < min_value() || v > max_value()) return false;
    if (kind != FeatureKind::continuous && v != std::floor(v)) return false;
    return true;
  }

  void validate() const {
    if (is_categorical()) {
      if (categories.empty()) throw SchemaError("feature '" + name + "': no categories");
      std::unordered_set<std::string> seen(categories.begin(), categories.end());
      if (seen.size() != categories.size())
        throw SchemaError("feature '" + name + "': duplicate categories");
    } else if (!(lower < upper)) {
      throw SchemaError("feature '" + name + "': lower must be < upper");
    }
    if (mean && (*mean < min_value() || *mean > max_value()))
      throw SchemaError("feature '" + name + "': mean outside bounds");
  }
};

struct DatasetSchema {
  std::vector<FeatureSpec> features;
  std::vector<std::string> label_names;
  std::string label_column = "label";

  std::size_t feature_count() const { return features.size(); }
  std::size_t class_count() const { return label_names.size(); }

  void validate() const {
    if (features.empty()) throw SchemaError("schema has no features");
    if (label_names.size() < 2) throw SchemaError("schema needs at least two classes");
    std::unordered_set<std::string> seen(label_names.begin(), label_names.end());
    if (seen.size() != label_names.size()) throw SchemaError("duplicate class names");
    for (const auto& f : features) f.validate();
  }

  int label_index(const std::string& name) const {
    auto it = std::find(label_names.begin(), label_names.end(), name);
    if (it == label_names.end()) throw SchemaError("unknown label '" + name + "'");
    return static_cast<int>(it - label_names.begin());
  }

  // Identity of the feature/label layout, independent of imputation means.
  std::string fingerprint() const {
    std::uint64_t h = fnv1a(label_column);
    for (const auto& f : features) {
      h = fnv1a(f.name + '\x1f' + to_string(f.kind) + '\x1f', h);
      if (f.is_categorical()) {
        for (const auto& c : f.categories) h = fnv1a(c + '\x1f', h);
      } else {
        h = fnv1a(format_double(f.lower) + ':' + format_double(f.upper), h);
      }
    }
    for (const auto& l : label_names) h = fnv1a(l + '\x1e', h);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

struct Sample {
  std::vector<double> values;

  Sample() = default;
  explicit Sample(std::vector<double> v) : values(std::move(v)) {}
  Sample(std::initializer_list<double> v) : values(v) {}

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct LabeledSample {
  Sample sample;
  int label = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

struct Dataset {
  DatasetSchema schema;
  std::vector<LabeledSample> samples;
};

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// ---------------------------------------------------------------------------
// Schema JSON

inline DatasetSchema schema_from_json(const json& doc) {
  DatasetSchema schema;
  try {
    schema.label_column = doc.at("label_column").get<std::string>();
    schema.label_names = doc.at("classes").get<std::vector<std::string>>();
    for (const auto& jf : doc.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = feature_kind_from_string(jf.at("kind").get<std::string>());
      if (f.is_categorical()) {
        f.categories = jf.at("categories").get<std::vector<std::string>>();
      } else {
        f.lower = jf.at("lower").get<double>();
        f.upper = jf.at("upper").get<double>();
      }
      if (jf.contains("mean") && !jf["mean"].is_null()) f.mean = jf["mean"].get<double>();
      schema.features.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed schema document: ") + e.what());
  }
  schema.validate();
  return schema;
}

inline json schema_to_json(const DatasetSchema& schema) {
  json features = json::array();
  for (const auto& f : schema.features) {
    json jf = {{"name", f.name}, {"kind", to_string(f.kind)}};
    if (f.is_categorical()) {
      jf["categories"] = f.categories;
    } else {
      jf["lower"] = f.lower;
      jf["upper"] = f.upper;
    }
    if (f.mean) jf["mean"] = *f.mean;
    features.push_back(std::move(jf));
  }
  return {{"label_column", schema.label_column},
          {"classes", schema.label_names},
          {"features", std::move(features)}};
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write file '" + path + "'");
  out << content;
  if (!out) throw ArgumentError("failed writing file '" + path + "'");
}

inline DatasetSchema load_schema(const std::string& path) {
  auto text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("schema '" + path + "': " + e.what());
  }
  return schema_from_json(doc);
}

// ---------------------------------------------------------------------------
// Sample validation and means

inline void validate_sample(const DatasetSchema& schema, const Sample& s) {
  if (s.size() != schema.feature_count())
    throw ValidationError("expected " + std::to_string(schema.feature_count()) +
                          " features, got " + std::to_string(s.size()));
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& f = schema.features[i];
    if (!f.admits(s[i]))
      throw ValidationError("feature '" + f.name + "' value " + format_double(s[i]) +
                            " outside its domain");
  }
}

inline void compute_means(DatasetSchema& schema, const std::vector<Sample>& rows) {
  for (std::size_t i = 0; i < schema.feature_count(); ++i) {
    auto& f = schema.features[i];
    if (f.is_categorical()) {
      std::vector<std::size_t> counts(f.categories.size(), 0);
      for (const auto& r : rows)
        if (!is_missing(r[i])) ++counts[static_cast<std::size_t>(r[i])];
      if (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) == 0) continue;
      f.mean = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    } else {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& r : rows)
        if (!is_missing(r[i])) {
          sum += r[i];
          ++n;
        }
      if (n == 0) continue;
      f.mean = std::clamp(sum / static_cast<double>(n), f.lower, f.upper);
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline double parse_cell(const FeatureSpec& f, const std::string& cell, std::size_t row,
                         bool allow_missing) {
  std::string_view v = cell;
  if (v.empty()) {
    if (allow_missing) return kMissing;
    throw ParseError("row " + std::to_string(row) + ", column '" + f.name + "': missing value");
  }
  if (f.is_categorical()) {
    auto it = std::find(f.categories.begin(), f.categories.end(), cell);
    if (it == f.categories.end())
      throw ValidationError("row " + std::to_string(row) + ", column '" + f.name +
                            "': unknown category '" + cell + "'");
    return static_cast<double>(it - f.categories.begin());
  }
  auto d = parse_double(v);
  if (!d)
    throw ParseError("row " + std::to_string(row) + ", column '" + f.name + "': cannot parse '" +
                     cell + "'");
  if (!f.admits(*d))
    throw ValidationError("row " + std::to_string(row) + ", column '" + f.name + "': value " +
                          cell + " outside declared domain");
  return *d;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      t.header = split_csv_line(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    t.rows.push_back(split_csv_line(line));
  }
  if (first) throw ParseError("CSV has no header row");
  return t;
}

}  // namespace detail

// Reads samples laid out per `schema`. The label column is optional when
// `require_label` is false; labels in the result are then -1.
inline std::vector<LabeledSample> parse_samples(std::istream& in, const DatasetSchema& schema,
                                                bool require_label, bool allow_missing) {
  auto table = detail::read_csv(in);
  std::vector<std::ptrdiff_t> column_of(schema.feature_count(), -1);
  std::ptrdiff_t label_col = -1;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& name = table.header[c];
    if (name == schema.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
      continue;
    }
    for (std::size_t f = 0; f < schema.feature_count(); ++f)
      if (schema.features[f].name == name) column_of[f] = static_cast<std::ptrdiff_t>(c);
  }
  for (std::size_t f = 0; f < schema.feature_count(); ++f)
    if (column_of[f] < 0)
      throw SchemaError("CSV header lacks feature column '" + schema.features[f].name + "'");
  if (require_label && label_col < 0)
    throw SchemaError("CSV header lacks label column '" + schema.label_column + "'");

  std::vector<LabeledSample> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& cells = table.rows[r];
    const std::size_t row = r + 1;
    if (cells.size() != table.header.size())
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(table.header.size()) + " columns, got " +
                       std::to_string(cells.size()));
    LabeledSample ls;
    ls.sample.values.resize(schema.feature_count());
    for (std::size_t f = 0; f < schema.feature_count(); ++f)
      ls.sample[f] = detail::parse_cell(schema.features[f], cells[column_of[f]], row, allow_missing);
    ls.label = -1;
    if (label_col >= 0) {
      const auto& name = cells[label_col];
      auto it = std::find(schema.label_names.begin(), schema.label_names.end(), name);
      if (it == schema.label_names.end())
        throw SchemaError("row " + std::to_string(row) + ": unknown label '" + name + "'");
      ls.label = static_cast<int>(it - schema.label_names.begin());
    }
    out.push_back(std::move(ls));
  }
  return out;
}

// Loads a labelled dataset; fills the schema's imputation means from the rows.
inline Dataset load_dataset(const std::string& csv_path, const std::string& schema_path) {
  Dataset ds{load_schema(schema_path), {}};
  std::ifstream in(csv_path);
  if (!in) throw ArgumentError("cannot open file '" + csv_path + "'");
  ds.samples = parse_samples(in, ds.schema, /*require_label=*/true, /*allow_missing=*/false);
  std::vector<Sample> rows;
  rows.reserve(ds.samples.size());
  for (const auto& s : ds.samples) rows.push_back(s.sample);
  compute_means(ds.schema, rows);
  return ds;
}

inline std::string format_value(const FeatureSpec& f, double v) {
  if (is_missing(v)) return "";
  if (f.is_categorical()) return f.categories.at(static_cast<std::size_t>(v));
  return format_double(v);
}

inline std::string format_csv(const DatasetSchema& schema, const std::vector<LabeledSample>& rows) {
  std::string out;
  for (const auto& f : schema.features) out += f.name + ',';
  out += schema.label_column + '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < schema.feature_count(); ++i)
      out += format_value(schema.features[i], r.sample[i]) + ',';
    out += schema.label_names.at(static_cast<std::size_t>(r.label)) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imputation, splitting, seeding

enum class ImputeMode { mean, random };

inline Sample impute_missing(const Sample& partial, const DatasetSchema& schema, ImputeMode mode,
                             std::uint64_t rng_seed) {
  if (partial.size() != schema.feature_count())
    throw ValidationError("expected " + std::to_string(schema.feature_count()) +
                          " features, got " + std::to_string(partial.size()));
  Sample out = partial;
  auto rng = make_rng(rng_seed);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!is_missing(out[i])) continue;
    const auto& f = schema.features[i];
    if (mode == ImputeMode::mean) {
      if (!f.mean) throw SchemaError("feature '" + f.name + "' has no mean for imputation");
      double m = std::clamp(*f.mean, f.min_value(), f.max_value());
      // round-half-up for integer kinds; categorical means are already the mode index
      if (f.kind != FeatureKind::continuous) m = std::floor(m + 0.5);
      out[i] = m;
    } else if (f.kind == FeatureKind::continuous) {
      out[i] = std::uniform_real_distribution<double>(f.lower, f.upper)(rng);
    } else {
      auto lo = static_cast<long long>(std::ceil(f.min_value()));
      auto hi = static_cast<long long>(std::floor(f.max_value()));
      out[i] = static_cast<double>(std::uniform_int_distribution<long long>(lo, hi)(rng));
    }
  }
  return out;
}

struct Split {
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> test;
};

inline Split split(const std::vector<LabeledSample>& data, double train_fraction,
                   std::uint64_t rng_seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ArgumentError("train fraction must lie in (0, 1)");
  if (data.empty()) throw ArgumentError("cannot split an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(rng_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train =
      static_cast<std::size_t>(std::floor(static_cast<double>(data.size()) * train_fraction));
  Split out;
  out.train.reserve(n_train);
  out.test.reserve(data.size() - n_train);
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? out.train : out.test).push_back(data[order[i]]);
  return out;
}

struct SeedSelection {
  std::vector<Sample> seeds;
  std::vector<std::string> warnings;
};

// Up to `per_class` samples per class, drawn without replacement; labels are
// dropped because the attacker relabels seeds through the oracle.
inline SeedSelection sample_seeds(const std::vector<LabeledSample>& data, int per_class,
                                  std::size_t class_count, std::uint64_t rng_seed) {
  if (per_class < 0) throw ArgumentError("per_class must be >= 0");
  SeedSelection out;
  if (per_class == 0) return out;
  auto rng = make_rng(rng_seed);
  for (std::size_t c = 0; c < class_count; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].label == static_cast<int>(c)) members.push_back(i);
    if (members.size() < static_cast<std::size_t>(per_class))
      out.warnings.push_back("class " + std::to_string(c) + ": only " +
                             std::to_string(members.size()) + " samples available");
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(std::min(members.size(), static_cast<std::size_t>(per_class)));
    for (auto i : members) out.seeds.push_back(data[i].sample);
  }
  return out;
}

}  // namespace autolycus

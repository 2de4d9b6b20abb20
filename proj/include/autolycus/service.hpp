#pragma once

#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

// Eigen (via explain.hpp) must precede httplib: <resolv.h> defines a `_res`
// macro that collides with Eigen parameter names.
#include "autolycus/data.hpp"
#include "autolycus/error.hpp"
#include "autolycus/explain.hpp"
#include "autolycus/tree.hpp"

#include <httplib.h>

namespace autolycus {

// How an explain call is billed. per_call: one query per attacker request.
// per_internal_prediction: every model evaluation behind the answer counts.
enum class Pricing { per_call, per_internal_prediction };

inline Pricing pricing_from_string(const std::string& s) {
  if (s == "per_call") return Pricing::per_call;
  if (s == "per_internal" || s == "per_internal_prediction") return Pricing::per_internal_prediction;
  throw ArgumentError("unknown pricing '" + s + "'");
}

inline const char* to_string(Pricing p) {
  return p == Pricing::per_call ? "per_call" : "per_internal";
}

class QueryOracle {
 public:
  virtual ~QueryOracle() = default;
  virtual int predict(const Sample& s) = 0;
  virtual Explanation explain(const Sample& s) = 0;
  virtual std::uint64_t queries_used() const = 0;
};

// Seed for the explanation of `s`: base seed mixed with a content hash, so a
// repeated query gets the same explanation from any server instance.
inline std::uint64_t explanation_seed(std::uint64_t base_seed, const Sample& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : s.values) {
    if (v == 0.0) v = 0.0;  // fold -0.0
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    std::memcpy(bytes, &bits, sizeof(bytes));
    h = fnv1a(std::span<const unsigned char>(bytes, 8), h);
  }
  // splitmix64 finaliser over base ^ hash
  std::uint64_t z = base_seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
struct Billed {
  T value;
  std::uint64_t queries_used;
};

// In-process oracle. Thread-safe: the model and discretizer are immutable and
// the counter is atomic.
class LocalOracle final : public QueryOracle {
 public:
  LocalOracle(DecisionTree model, Discretizer disc, ExplainerConfig config, Pricing pricing)
      : model_(std::move(model)), disc_(std::move(disc)), config_(config), pricing_(pricing) {
    config_.validate(model_.schema().feature_count());
    if (model_.schema().fingerprint() != disc_.schema().fingerprint())
      throw SchemaError("model and discretizer disagree on schema");
  }

  int predict(const Sample& s) override { return predict_billed(s).value; }
  Explanation explain(const Sample& s) override { return explain_billed(s).value; }
  std::uint64_t queries_used() const override { return counter_.load(); }

  Billed<int> predict_billed(const Sample& s) {
    validate_sample(model_.schema(), s);
    const int label = model_.predict(s);
    return {label, counter_.fetch_add(1) + 1};
  }

  Billed<Explanation> explain_billed(const Sample& s) {
    validate_sample(model_.schema(), s);
    ExplainerConfig cfg = config_;
    cfg.rng_seed = explanation_seed(config_.rng_seed, s);
    auto exp = autolycus::explain([this](const Sample& x) { return model_.predict(x); }, s, disc_, cfg);
    const std::uint64_t cost = explain_cost();
    return {std::move(exp), counter_.fetch_add(cost) + cost};
  }

  // The explained label is billed as one prediction on top of the explainer's
  // num_perturbations internal predictions.
  std::uint64_t explain_cost() const {
    return pricing_ == Pricing::per_call
               ? 1
               : static_cast<std::uint64_t>(config_.num_perturbations) + 1;
  }

  const DecisionTree& model() const { return model_; }
  const Discretizer& discretizer() const { return disc_; }
  const ExplainerConfig& explainer_config() const { return config_; }

 private:
  DecisionTree model_;
  Discretizer disc_;
  ExplainerConfig config_;
  Pricing pricing_;
  std::atomic<std::uint64_t> counter_{0};
};

inline std::unique_ptr<LocalOracle> local_oracle(DecisionTree model, Discretizer disc,
                                                 ExplainerConfig config, Pricing pricing) {
  return std::make_unique<LocalOracle>(std::move(model), std::move(disc), config, pricing);
}

// ---------------------------------------------------------------------------
// HTTP service

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  Pricing pricing = Pricing::per_call;
  ExplainerConfig explainer;
  std::string model_path;
};

namespace detail {

inline Sample parse_features(const std::string& body, std::size_t expected) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error&) {
    throw ValidationError("request body is not valid JSON");
  }
  if (!doc.is_object() || !doc.contains("features") || !doc["features"].is_array())
    throw ValidationError("request body must be {\"features\": [number...]}");
  const auto& f = doc["features"];
  if (f.size() != expected)
    throw ValidationError("expected " + std::to_string(expected) + " features, got " +
                          std::to_string(f.size()));
  Sample s;
  s.values.reserve(expected);
  for (const auto& v : f) {
    if (!v.is_number()) throw ValidationError("features must be numbers");
    s.values.push_back(v.get<double>());
  }
  return s;
}

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace detail

class ServiceHandle {
 public:
  ServiceHandle(DecisionTree model, Discretizer disc, ServiceConfig config)
      : config_(std::move(config)),
        oracle_(std::move(model), std::move(disc), config_.explainer, config_.pricing) {
    if (config_.port < 0 || config_.port > 65535) throw ArgumentError("port must be in [1, 65535]");
    // httplib's default adds SO_REUSEPORT, which would let a second server
    // share the port silently
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    install_routes();
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port(config_.host);
      if (port_ < 0) throw Error("cannot bind an ephemeral port on " + config_.host);
    } else {
      if (!server_.bind_to_port(config_.host, config_.port))
        throw Error("cannot bind " + config_.host + ":" + std::to_string(config_.port) +
                    " (port in use?)");
      port_ = config_.port;
    }
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ServiceHandle(const ServiceHandle&) = delete;
  ServiceHandle& operator=(const ServiceHandle&) = delete;

  ~ServiceHandle() { stop(); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://" + config_.host + ":" + std::to_string(port_); }
  std::uint64_t queries() const { return oracle_.queries_used(); }

 private:
  void install_routes() {
    const std::size_t fn = oracle_.model().schema().feature_count();
    auto guarded = [](auto&& body) {
      return [body](const httplib::Request& req, httplib::Response& res) {
        try {
          body(req, res);
        } catch (const InputError& e) {
          detail::reply(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
          detail::reply(res, 500, {{"error", e.what()}});
        }
      };
    };
    server_.Post("/predict", guarded([this, fn](const httplib::Request& req, httplib::Response& res) {
      auto billed = oracle_.predict_billed(detail::parse_features(req.body, fn));
      detail::reply(res, 200, {{"label", billed.value}, {"queries_used", billed.queries_used}});
    }));
    server_.Post("/explain", guarded([this, fn](const httplib::Request& req, httplib::Response& res) {
      auto billed = oracle_.explain_billed(detail::parse_features(req.body, fn));
      json body = explanation_to_json(billed.value);
      body["queries_used"] = billed.queries_used;
      detail::reply(res, 200, body);
    }));
    server_.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
      detail::reply(res, 200, {{"queries", oracle_.queries_used()}});
    });
  }

  ServiceConfig config_;
  LocalOracle oracle_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

inline std::unique_ptr<ServiceHandle> serve(DecisionTree model, Discretizer disc,
                                            ServiceConfig config) {
  return std::make_unique<ServiceHandle>(std::move(model), std::move(disc), std::move(config));
}

// ---------------------------------------------------------------------------
// Client

class RemoteOracle final : public QueryOracle {
 public:
  explicit RemoteOracle(std::string base_url) : base_url_(std::move(base_url)), client_(base_url_) {
    client_.set_connection_timeout(5);
    client_.set_read_timeout(60);
  }

  int predict(const Sample& s) override {
    auto doc = post("/predict", s);
    try {
      return doc.at("label").get<int>();
    } catch (const json::exception& e) {
      throw ProtocolError(std::string("bad /predict response: ") + e.what());
    }
  }

  Explanation explain(const Sample& s) override {
    auto doc = post("/explain", s);
    try {
      return explanation_from_json(doc);
    } catch (const FormatError& e) {
      throw ProtocolError(e.what());
    }
  }

  // Mirrors the server's /stats counter. GET is idempotent, so it is retried.
  std::uint64_t queries_used() const override {
    std::lock_guard lock(mutex_);
    std::string last_error;
    for (int attempt = 0; attempt < 3; ++attempt) {
      auto res = client_.Get("/stats");
      if (!res) {
        last_error = httplib::to_string(res.error());
        std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
        continue;
      }
      if (res->status != 200) throw ProtocolError(res->status, res->body);
      try {
        return json::parse(res->body).at("queries").get<std::uint64_t>();
      } catch (const json::exception& e) {
        throw ProtocolError(std::string("bad /stats response: ") + e.what());
      }
    }
    throw TransportError(base_url_ + "/stats: " + last_error);
  }

  const std::string& base_url() const { return base_url_; }

 private:
  json post(const std::string& path, const Sample& s) {
    std::lock_guard lock(mutex_);
    json body = {{"features", s.values}};
    auto res = client_.Post(path, body.dump(), "application/json");
    if (!res) throw TransportError(base_url_ + path + ": " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) throw ProtocolError(res->status, res->body);
    try {
      return json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
  }

  std::string base_url_;
  mutable httplib::Client client_;
  mutable std::mutex mutex_;
};

inline std::unique_ptr<RemoteOracle> remote_oracle(std::string base_url) {
  return std::make_unique<RemoteOracle>(std::move(base_url));
}

}  // namespace autolycus

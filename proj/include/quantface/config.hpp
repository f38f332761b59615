#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "quantface/error.hpp"
#include "quantface/metric.hpp"
#include "quantface/train.hpp"

namespace quantface {

// Full run configuration.  Parsing is strict: unknown keys anywhere in the
// document are rejected so sweep typos fail loudly instead of silently
// running defaults.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t image_size = 32;

  std::size_t calib_size = 4;
  std::size_t heldout_size = 4;

  int weight_bits = 4;
  int act_bits = 4;            // uniform fallback / naive baseline
  bool mixed_activations = true;
  double target_avg_bits = 4.0;
  std::vector<int> candidate_bits{3, 4, 5, 6};

  bool balance_enabled = true;
  double alpha = 0.5;

  TrainConfig train;

  double epsilon_frac = 0.02;  // desk epsilon: fraction of FP mean sq output
  int b_max = 8;
  int probe_bits = 4;

  MetricKind metric = MetricKind::Mse;
  std::size_t timestep = 1000;
  std::size_t schedule_steps = 1000;

  void validate() const {
    if (image_size < 8 || image_size % 4 != 0) {
      throw Error(ErrorKind::Config, "image_size must be a multiple of 4");
    }
    if (calib_size == 0 || heldout_size == 0) {
      throw Error(ErrorKind::Config, "dataset sizes must be >= 1");
    }
    if (weight_bits < 0 || weight_bits > 16 || act_bits < 0 ||
        act_bits > 16) {
      throw Error(ErrorKind::Config, "bit widths must be in [0, 16]");
    }
    if (candidate_bits.empty()) {
      throw Error(ErrorKind::Config, "candidate bit list is empty");
    }
    for (std::size_t i = 0; i < candidate_bits.size(); ++i) {
      if (candidate_bits[i] < 2 || candidate_bits[i] > 16 ||
          (i > 0 && candidate_bits[i] <= candidate_bits[i - 1])) {
        throw Error(ErrorKind::Config,
                    "candidate bits must be ascending and in [2, 16]");
      }
    }
    if (!(target_avg_bits > 0.0)) {
      throw Error(ErrorKind::Config, "target_avg_bits must be positive");
    }
    if (alpha < 0.0 || alpha > 1.0) {
      throw Error(ErrorKind::Config, "alpha must be in [0, 1]");
    }
    if (!(epsilon_frac > 0.0)) {
      throw Error(ErrorKind::Config, "epsilon_frac must be positive");
    }
    if (b_max < 2 || b_max > 8) {
      throw Error(ErrorKind::Config, "b_max must be in [2, 8]");
    }
    if (probe_bits < 2 || probe_bits > 16) {
      throw Error(ErrorKind::Config, "probe_bits must be in [2, 16]");
    }
    if (timestep < 1 || timestep > schedule_steps) {
      throw Error(ErrorKind::Config, "timestep out of schedule range");
    }
    try {
      train.validate();
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, e.what());
    }
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (known.find(it.key()) == known.end()) {
      throw Error(ErrorKind::Config,
                  "unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& obj, const char* key, T& out,
              const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::Config,
                std::string("bad value for \"") + key + "\" in " + where);
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorKind::Config, "config root must be a JSON object");
  }
  detail::reject_unknown_keys(
      j,
      {"seed", "image_size", "dataset", "bits", "balance", "train", "alloc",
       "metric", "timestep", "schedule_steps"},
      "config root");
  RunConfig cfg;
  detail::read_key(j, "seed", cfg.seed, "config root");
  detail::read_key(j, "image_size", cfg.image_size, "config root");
  detail::read_key(j, "timestep", cfg.timestep, "config root");
  detail::read_key(j, "schedule_steps", cfg.schedule_steps, "config root");
  if (j.contains("metric")) {
    cfg.metric = parse_metric(j.at("metric").get<std::string>());
  }
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::reject_unknown_keys(d, {"calib_size", "heldout_size"}, "dataset");
    detail::read_key(d, "calib_size", cfg.calib_size, "dataset");
    detail::read_key(d, "heldout_size", cfg.heldout_size, "dataset");
  }
  if (j.contains("bits")) {
    const auto& b = j.at("bits");
    detail::reject_unknown_keys(
        b, {"weights", "activations", "mixed", "target_avg_bits",
            "candidates"},
        "bits");
    detail::read_key(b, "weights", cfg.weight_bits, "bits");
    detail::read_key(b, "activations", cfg.act_bits, "bits");
    detail::read_key(b, "mixed", cfg.mixed_activations, "bits");
    detail::read_key(b, "target_avg_bits", cfg.target_avg_bits, "bits");
    detail::read_key(b, "candidates", cfg.candidate_bits, "bits");
  }
  if (j.contains("balance")) {
    const auto& b = j.at("balance");
    detail::reject_unknown_keys(b, {"enabled", "alpha"}, "balance");
    detail::read_key(b, "enabled", cfg.balance_enabled, "balance");
    detail::read_key(b, "alpha", cfg.alpha, "balance");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::reject_unknown_keys(
        t,
        {"learning_rate", "iterations", "lambda1", "lambda2", "mu", "rank"},
        "train");
    detail::read_key(t, "learning_rate", cfg.train.learning_rate, "train");
    detail::read_key(t, "iterations", cfg.train.iterations, "train");
    detail::read_key(t, "lambda1", cfg.train.lambda1, "train");
    detail::read_key(t, "lambda2", cfg.train.lambda2, "train");
    detail::read_key(t, "mu", cfg.train.mu, "train");
    detail::read_key(t, "rank", cfg.train.rank, "train");
  }
  if (j.contains("alloc")) {
    const auto& a = j.at("alloc");
    detail::reject_unknown_keys(a, {"epsilon_frac", "b_max", "probe_bits"},
                                "alloc");
    detail::read_key(a, "epsilon_frac", cfg.epsilon_frac, "alloc");
    detail::read_key(a, "b_max", cfg.b_max, "alloc");
    detail::read_key(a, "probe_bits", cfg.probe_bits, "alloc");
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Config, "cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config,
                "config parse error in " + path + ": " + e.what());
  }
  return parse_run_config(j);
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["image_size"] = cfg.image_size;
  j["dataset"] = {{"calib_size", cfg.calib_size},
                  {"heldout_size", cfg.heldout_size}};
  j["bits"] = {{"weights", cfg.weight_bits},
               {"activations", cfg.act_bits},
               {"mixed", cfg.mixed_activations},
               {"target_avg_bits", cfg.target_avg_bits},
               {"candidates", cfg.candidate_bits}};
  j["balance"] = {{"enabled", cfg.balance_enabled}, {"alpha", cfg.alpha}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"iterations", cfg.train.iterations},
                {"lambda1", cfg.train.lambda1},
                {"lambda2", cfg.train.lambda2},
                {"mu", cfg.train.mu},
                {"rank", cfg.train.rank}};
  j["alloc"] = {{"epsilon_frac", cfg.epsilon_frac},
                {"b_max", cfg.b_max},
                {"probe_bits", cfg.probe_bits}};
  j["metric"] = metric_name(cfg.metric);
  j["timestep"] = cfg.timestep;
  j["schedule_steps"] = cfg.schedule_steps;
  return j;
}

}  // namespace quantface

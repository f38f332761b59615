#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "quantface/error.hpp"
#include "quantface/model.hpp"
#include "quantface/qtz1.hpp"

namespace quantface {

namespace detail {

inline nlohmann::json qparams_to_json(const QuantParams& p) {
  return {{"scale", p.scale}, {"zero", p.zero},           {"lo", p.lo},
          {"hi", p.hi},       {"bits", p.bits},           {"symmetric", p.symmetric}};
}

inline QuantParams qparams_from_json(const nlohmann::json& j) {
  QuantParams p;
  p.scale = j.at("scale").get<double>();
  p.zero = j.at("zero").get<double>();
  p.lo = j.at("lo").get<double>();
  p.hi = j.at("hi").get<double>();
  p.bits = j.at("bits").get<int>();
  p.symmetric = j.at("symmetric").get<bool>();
  return p;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  f << text;
  if (!f) throw Error(ErrorKind::Io, "short write to " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "JSON parse error in " + path + ": " +
                                   e.what());
  }
  return j;
}

}  // namespace detail

// Writes the complete model state into a directory: one QTZ1 file per
// tensor plus manifest.json describing sites, quantizers, balance state,
// and branch shapes.
inline void save_model(const ToyUNet& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["image_size"] = model.image_size();
  nlohmann::json sites = nlohmann::json::array();
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    const QuantSite& s = model.site(i);
    nlohmann::json js;
    js["name"] = s.name;
    js["kind"] = site_kind_name(s.kind);
    js["act_bits"] = s.act_bits;
    js["act_calibrated"] = s.act_calibrated;
    if (s.act_calibrated) {
      js["act_qparams"] = detail::qparams_to_json(s.act_qparams);
    }
    if (s.has_weights()) {
      js["weight_bits"] = s.weight_bits;
      nlohmann::json wq = nlohmann::json::array();
      for (const QuantParams& p : s.weight_qparams) {
        wq.push_back(detail::qparams_to_json(p));
      }
      js["weight_qparams"] = wq;
      js["balance"] = {{"scaled", s.layer.scaled},
                       {"folded", s.layer.balance.folded},
                       {"alpha", s.layer.balance.alpha},
                       {"scales", s.layer.balance.scales},
                       {"hadamard_seed", s.layer.balance.hadamard_seed},
                       {"hadamard_size", s.layer.balance.hadamard_size}};
      qtz1_save(dir + "/" + s.name + ".kernel.qtz", s.layer.kernel);
      qtz1_save(dir + "/" + s.name + ".kernel_t.qtz", s.layer.kernel_t);
      js["use_branches"] = s.use_branches;
      if (s.use_branches) {
        js["rank"] = s.branches.rank;
        nlohmann::json rq = nlohmann::json::array();
        for (const QuantParams& p : s.branches.r_qparams) {
          rq.push_back(detail::qparams_to_json(p));
        }
        js["r_qparams"] = rq;
        qtz1_save(dir + "/" + s.name + ".l1.qtz", s.branches.l1);
        qtz1_save(dir + "/" + s.name + ".l2.qtz", s.branches.l2);
        qtz1_save(dir + "/" + s.name + ".a.qtz", s.branches.a);
        qtz1_save(dir + "/" + s.name + ".b.qtz", s.branches.b);
        qtz1_save(dir + "/" + s.name + ".r_q.qtz", s.branches.r_q);
        qtz1_save(dir + "/" + s.name + ".svd_init.qtz",
                  s.branches.svd_init_prod);
      }
    }
    sites.push_back(std::move(js));
  }
  manifest["sites"] = std::move(sites);
  detail::write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

// Rebuilds a model from save_model output.  The fixed topology must match;
// everything else (weights, quantizers, balance, branches) is restored.
inline ToyUNet load_model(const std::string& dir) {
  const nlohmann::json manifest = detail::read_json(dir + "/manifest.json");
  if (manifest.at("schema_version").get<int>() != 1) {
    throw Error(ErrorKind::Io, "unsupported checkpoint schema version");
  }
  ToyUNet model(0, manifest.at("image_size").get<std::size_t>());
  const auto& sites = manifest.at("sites");
  if (sites.size() != model.site_count()) {
    throw Error(ErrorKind::Io, "checkpoint site count mismatch");
  }
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    QuantSite& s = model.site(i);
    const auto& js = sites.at(i);
    if (js.at("name").get<std::string>() != s.name ||
        js.at("kind").get<std::string>() != site_kind_name(s.kind)) {
      throw Error(ErrorKind::Io, "checkpoint topology mismatch at site " +
                                     s.name);
    }
    s.act_bits = js.at("act_bits").get<int>();
    s.act_calibrated = js.at("act_calibrated").get<bool>();
    if (s.act_calibrated) {
      s.act_qparams = detail::qparams_from_json(js.at("act_qparams"));
    }
    if (!s.has_weights()) continue;

    s.weight_bits = js.at("weight_bits").get<int>();
    s.weight_qparams.clear();
    for (const auto& p : js.at("weight_qparams")) {
      s.weight_qparams.push_back(detail::qparams_from_json(p));
    }
    const auto& jb = js.at("balance");
    s.layer.scaled = jb.at("scaled").get<bool>();
    s.layer.balance.folded = jb.at("folded").get<bool>();
    s.layer.balance.alpha = jb.at("alpha").get<double>();
    s.layer.balance.scales = jb.at("scales").get<std::vector<double>>();
    s.layer.balance.hadamard_seed =
        jb.at("hadamard_seed").get<std::uint64_t>();
    s.layer.balance.hadamard_size =
        jb.at("hadamard_size").get<std::size_t>();
    if (s.layer.balance.folded) {
      s.layer.balance.signs = random_signs(s.layer.balance.hadamard_seed,
                                           s.layer.balance.hadamard_size);
    }
    s.layer.kernel = qtz1_load(dir + "/" + s.name + ".kernel.qtz");
    s.layer.kernel_t = qtz1_load(dir + "/" + s.name + ".kernel_t.qtz");

    s.use_branches = js.at("use_branches").get<bool>();
    if (s.use_branches) {
      s.branches.rank = js.at("rank").get<std::size_t>();
      s.branches.r_qparams.clear();
      for (const auto& p : js.at("r_qparams")) {
        s.branches.r_qparams.push_back(detail::qparams_from_json(p));
      }
      s.branches.l1 = qtz1_load(dir + "/" + s.name + ".l1.qtz");
      s.branches.l2 = qtz1_load(dir + "/" + s.name + ".l2.qtz");
      s.branches.a = qtz1_load(dir + "/" + s.name + ".a.qtz");
      s.branches.b = qtz1_load(dir + "/" + s.name + ".b.qtz");
      s.branches.r_q = qtz1_load(dir + "/" + s.name + ".r_q.qtz");
      s.branches.svd_init_prod =
          qtz1_load(dir + "/" + s.name + ".svd_init.qtz");
    }
  }
  return model;
}

}  // namespace quantface

// quantface CLI: drives the quantization pipeline stage by stage and writes
// machine-readable artifacts (JSON + CSV) under the output directory.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "quantface/checkpoint.hpp"
#include "quantface/config.hpp"
#include "quantface/error.hpp"
#include "quantface/hadamard.hpp"
#include "quantface/pipeline.hpp"

namespace {

using quantface::Error;
using quantface::ErrorKind;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Infeasible: return 3;
    case ErrorKind::Numerical:
    case ErrorKind::Training: return 4;
    default: return 1;
  }
}

struct CliOptions {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> metric;
};

quantface::RunConfig resolve_config(const CliOptions& opt) {
  quantface::RunConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = quantface::load_run_config(opt.config_path);
  }
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.train.seed = quantface::derive_seed(cfg.seed, "train");
  }
  if (opt.metric) cfg.metric = quantface::parse_metric(*opt.metric);
  cfg.validate();
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  }
  out << body;
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::filesystem::path ensure_out_dir(const CliOptions& opt) {
  std::filesystem::path dir(opt.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorKind::Io, "cannot create output dir: " + dir.string());
  }
  return dir;
}

// Returns the mixed-precision activation bits, reusing a previously written
// allocate.json when its config echo matches (stage restartability).
std::vector<int> resolve_act_bits(const quantface::PipelineContext& ctx,
                                  const std::filesystem::path& dir,
                                  nlohmann::json* alloc_artifact) {
  std::vector<int> act_bits(ctx.fp_model.site_count(), ctx.cfg.act_bits);
  if (!ctx.cfg.mixed_activations) return act_bits;

  const std::filesystem::path cached = dir / "allocate.json";
  if (std::filesystem::exists(cached)) {
    std::ifstream in(cached);
    nlohmann::json j;
    in >> j;
    if (in && j.contains("layers") &&
        j.at("layers").size() == act_bits.size()) {
      for (std::size_t i = 0; i < act_bits.size(); ++i) {
        act_bits[i] = j.at("layers").at(i).at("assigned_bits").get<int>();
      }
      if (alloc_artifact) *alloc_artifact = std::move(j);
      return act_bits;
    }
  }
  quantface::AllocateStageResult alloc = quantface::stage_allocate(ctx);
  for (std::size_t i = 0; i < alloc.solution.bits.size(); ++i) {
    act_bits[i] = alloc.solution.bits[i];
  }
  if (alloc_artifact) *alloc_artifact = std::move(alloc.artifact);
  return act_bits;
}

int cmd_profile(const CliOptions& opt) {
  const quantface::PipelineContext ctx(resolve_config(opt));
  const auto dir = ensure_out_dir(opt);
  const quantface::ProfileStageResult r = quantface::stage_profile(ctx);
  write_json(dir / "profile.json", r.artifact);
  write_file(dir / "profile.csv", r.csv);
  std::cout << "profile: wrote " << (dir / "profile.json").string() << "\n";
  return 0;
}

int cmd_allocate(const CliOptions& opt) {
  const quantface::PipelineContext ctx(resolve_config(opt));
  const auto dir = ensure_out_dir(opt);
  const quantface::AllocateStageResult r = quantface::stage_allocate(ctx);
  write_json(dir / "allocate.json", r.artifact);
  std::cout << "allocate: average bits " << r.solution.average_bits << ", "
            << "objective " << r.solution.objective << "\n";
  return 0;
}

int cmd_balance(const CliOptions& opt) {
  const quantface::PipelineContext ctx(resolve_config(opt));
  const auto dir = ensure_out_dir(opt);
  quantface::ToyUNet scratch = ctx.fp_model;
  const quantface::BalanceStageResult r = quantface::stage_balance(ctx, scratch);
  write_json(dir / "balance.json", r.artifact);
  std::cout << "balance: wrote " << (dir / "balance.json").string() << "\n";
  return 0;
}

int cmd_train(const CliOptions& opt) {
  const quantface::PipelineContext ctx(resolve_config(opt));
  const auto dir = ensure_out_dir(opt);
  nlohmann::json alloc_artifact;
  const std::vector<int> act_bits = resolve_act_bits(ctx, dir, &alloc_artifact);
  if (!alloc_artifact.is_null()) write_json(dir / "allocate.json", alloc_artifact);

  quantface::ToyUNet model = ctx.fp_model;
  const quantface::TrainStageResult r =
      quantface::stage_train(ctx, model, act_bits);
  write_json(dir / "train.json", r.artifact);
  write_file(dir / "trace.csv", r.trace_csv);
  quantface::save_model(model, (dir / "checkpoint").string());
  std::cout << "train: initial loss " << r.train.initial_loss
            << ", final loss " << r.train.final_loss << "\n";
  return 0;
}

int cmd_eval(const CliOptions& opt) {
  const quantface::PipelineContext ctx(resolve_config(opt));
  const auto dir = ensure_out_dir(opt);
  quantface::ToyUNet model(0, ctx.cfg.image_size);
  const std::filesystem::path ckpt = dir / "checkpoint";
  if (std::filesystem::exists(ckpt / "manifest.json")) {
    model = quantface::load_model(ckpt.string());
  } else {
    const std::vector<int> act_bits = resolve_act_bits(ctx, dir, nullptr);
    model = ctx.fp_model;
    quantface::stage_train(ctx, model, act_bits);
  }
  const quantface::EvalStageResult r = quantface::stage_eval(ctx, model);
  write_json(dir / "eval.json", r.artifact);
  std::cout << "eval: pipeline MSE " << r.pipeline_mse << ", naive MSE "
            << r.naive_mse << "\n";
  return 0;
}

int cmd_report(const CliOptions& opt) {
  const quantface::RunConfig cfg = resolve_config(opt);
  const auto dir = ensure_out_dir(opt);
  const quantface::PipelineResult r = quantface::run_pipeline(cfg);
  quantface::validate_report_schema(r.report);
  write_json(dir / "profile.json", r.profile_artifact);
  write_file(dir / "profile.csv", r.profile_csv);
  if (!r.allocate_artifact.is_null()) {
    write_json(dir / "allocate.json", r.allocate_artifact);
  }
  if (!r.balance_artifact.is_null()) {
    write_json(dir / "balance.json", r.balance_artifact);
  }
  write_json(dir / "train.json", r.train_artifact);
  write_file(dir / "trace.csv", r.trace_csv);
  write_json(dir / "eval.json", r.eval_artifact);
  write_json(dir / "report.json", r.report);
  write_file(dir / "report.csv", r.report_csv);
  quantface::save_model(r.quantized, (dir / "checkpoint").string());
  std::cout << "report: wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

// Brute-force crosschecks: DP allocation vs enumeration on seeded instances,
// and Hadamard-transform orthogonality across supported sizes.
int cmd_oracle(const CliOptions& opt) {
  const quantface::RunConfig cfg = resolve_config(opt);
  quantface::SplitMix64 rng(quantface::derive_seed(cfg.seed, "oracle"));
  constexpr std::size_t kInstances = 50;
  std::size_t mismatches = 0;
  for (std::size_t trial = 0; trial < kInstances; ++trial) {
    quantface::AllocProblem p;
    p.candidate_bits = {3, 4, 5, 6};
    const std::size_t n = 8;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t elems = 64 * (1 + rng.next() % 8);
      p.elements.push_back(elems);
      total += static_cast<double>(elems);
      std::vector<double> row;
      double loss = 1000.0 + static_cast<double>(rng.next() % 4096);
      for (std::size_t j = 0; j < p.candidate_bits.size(); ++j) {
        row.push_back(loss);
        loss = std::floor(loss * 0.5);
      }
      p.loss.push_back(row);
    }
    p.budget = (3.0 + 0.25 * static_cast<double>(trial % 13)) * total;
    try {
      const quantface::AllocSolution dp = quantface::solve_allocation(p);
      const quantface::AllocSolution bf =
          quantface::brute_force_allocation(p);
      if (dp.objective != bf.objective) ++mismatches;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Infeasible) throw;
    }
  }

  double had_err = 0.0;
  for (std::size_t n : {2, 4, 8, 16, 32, 64}) {
    const quantface::Tensor h = quantface::rht_matrix(
        n, quantface::random_signs(
               quantface::derive_seed(cfg.seed, "oracle-h", n), n));
    const quantface::Tensor g = quantface::matmul(quantface::transpose(h), h);
    const quantface::Tensor eye = quantface::Tensor::identity(n);
    for (std::size_t i = 0; i < g.size(); ++i) {
      had_err = std::max(had_err, std::fabs(g[i] - eye[i]));
    }
  }

  std::cout << "oracle: allocation mismatches " << mismatches << "/"
            << kInstances << ", max |H^T H - I| " << had_err << "\n";
  if (mismatches != 0 || !(had_err < 1e-12)) {
    throw Error(ErrorKind::State, "oracle crosscheck failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantface: low-bit quantization pipeline for the toy "
               "one-step restoration network"};
  app.require_subcommand(1);

  CliOptions opt;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run config path");
    sub->add_option("--seed", opt.seed, "root seed override");
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--metric", opt.metric,
                    "evaluation metric (mse|downsampled-mse)");
  };

  CLI::App* profile = app.add_subcommand("profile", "layer sensitivity scan");
  CLI::App* allocate =
      app.add_subcommand("allocate", "mixed-precision bit allocation");
  CLI::App* balance =
      app.add_subcommand("balance", "rotation-scaling diagnostics");
  CLI::App* train = app.add_subcommand("train", "QD-LoRA distillation");
  CLI::App* eval = app.add_subcommand("eval", "held-out A/B evaluation");
  CLI::App* report = app.add_subcommand("report", "full pipeline + report");
  CLI::App* oracle = app.add_subcommand("oracle", "brute-force crosschecks");
  for (CLI::App* sub :
       {profile, allocate, balance, train, eval, report, oracle}) {
    add_common(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // malformed invocation is a configuration error
  }

  try {
    if (profile->parsed()) return cmd_profile(opt);
    if (allocate->parsed()) return cmd_allocate(opt);
    if (balance->parsed()) return cmd_balance(opt);
    if (train->parsed()) return cmd_train(opt);
    if (eval->parsed()) return cmd_eval(opt);
    if (report->parsed()) return cmd_report(opt);
    if (oracle->parsed()) return cmd_oracle(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

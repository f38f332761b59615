#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "oracles.hpp"
#include "quantface/checkpoint.hpp"
#include "quantface/pipeline.hpp"

using namespace quantface;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

RunConfig small_cfg() {
  RunConfig cfg;
  cfg.seed = 31;
  cfg.image_size = 8;
  cfg.calib_size = 2;
  cfg.heldout_size = 1;
  cfg.train.rank = 2;
  cfg.train.iterations = 2;
  cfg.mixed_activations = false;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint roundtrip preserves the forward bitwise",
          "[checkpoint]") {
  const RunConfig cfg = small_cfg();
  const PipelineContext ctx(cfg);
  ToyUNet model = ctx.fp_model;
  std::vector<int> act_bits(model.site_count(), 4);
  assemble_quantized(ctx, model, act_bits);
  distill_train(model, ctx.fp_model, ctx.calib, ctx.schedule, cfg.timestep,
                cfg.train);

  TempDir dir("qf_ckpt_roundtrip");
  save_model(model, dir.path.string());
  const ToyUNet back = load_model(dir.path.string());

  const Tensor x = ctx.heldout[0].lq;
  REQUIRE(oracle::max_abs_diff(back.forward(x), model.forward(x)) == 0.0);

  // Balance diagnostics and quantizers made the trip too.
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    const QuantSite& a = model.site(i);
    const QuantSite& b = back.site(i);
    REQUIRE(a.act_bits == b.act_bits);
    REQUIRE(a.weight_bits == b.weight_bits);
    REQUIRE(a.use_branches == b.use_branches);
    REQUIRE(a.layer.scaled == b.layer.scaled);
    REQUIRE(a.layer.balance.folded == b.layer.balance.folded);
    if (a.layer.balance.folded) {
      REQUIRE(a.layer.balance.signs == b.layer.balance.signs);
    }
  }
}

TEST_CASE("a plain FP model roundtrips too", "[checkpoint]") {
  const ToyUNet model(55, 8);
  TempDir dir("qf_ckpt_fp");
  save_model(model, dir.path.string());
  const ToyUNet back = load_model(dir.path.string());
  Tensor x({3, 8, 8});
  SplitMix64 rng(7);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.next_uniform();
  REQUIRE(oracle::max_abs_diff(back.forward(x), model.forward(x)) == 0.0);
}

TEST_CASE("tampered manifests are rejected", "[checkpoint]") {
  const ToyUNet model(56, 8);
  TempDir dir("qf_ckpt_tamper");
  save_model(model, dir.path.string());

  const auto manifest_path = dir.path / "manifest.json";
  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  manifest["sites"][0]["name"] = "not_a_site";
  std::ofstream(manifest_path) << manifest.dump(2);

  try {
    load_model(dir.path.string());
    FAIL("expected an Io error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("loading from a missing directory fails cleanly", "[checkpoint]") {
  REQUIRE_THROWS_AS(load_model("/nonexistent/checkpoint"), Error);
}

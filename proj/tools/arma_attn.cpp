// SPDX-License-Identifier: Apache-2.0
//
// arma-attn: train/evaluate ARMA-attention forecasters and run the MA
// analysis toolkit. Exit codes: 0 ok, 1 invalid input or config, 2 numerical
// failure (divergence, non-finite values, failed gradient check).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "armattn/diagnostics.hpp"
#include "armattn/ma_analysis.hpp"
#include "armattn/run_config.hpp"

namespace fs = std::filesystem;
using namespace armattn;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string output_dir;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON run config (sections data, model, arma, train, output_dir)");
  sub->add_option("--seed", c.seed, "root seed for every random stream (default 2024)");
  sub->add_option("--threads", c.threads, "worker threads; computation is single-threaded, so only 1 is useful")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--output-dir", c.output_dir, "output directory (default from config, else runs)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(c.config_path);
  if (c.seed) cfg.train.seed = *c.seed;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  return cfg;
}

fs::path ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("output_dir", "cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string fmt_alpha(double a) {
  std::ostringstream s;
  s << a;
  return s.str();
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string variant;
  bool no_ma = false, ma = false;
  int epochs = 0;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (!a.variant.empty()) {
    const auto kind = parse_attn_kind(a.variant);
    if (!kind) throw ConfigError("--variant", "unknown attention variant '" + a.variant + "'");
    cfg.model.kind = *kind;
  }
  if (a.no_ma) cfg.model.ma_enabled = false;
  if (a.ma) cfg.model.ma_enabled = true;
  if (a.epochs > 0) {
    cfg.train.max_epochs = a.epochs;
    if (cfg.train.warmup_epochs >= a.epochs) cfg.train.warmup_epochs = a.epochs - 1;
  }
  cfg.train.validate();
  const data::SeriesDataset ds = load_dataset(cfg);
  const fs::path dir = ensure_dir(cfg.output_dir);
  write_json(cfg.to_json(), dir / "config.json");
  ForecastModel model = build_model(cfg.model, cfg.train.seed);
  spdlog::info("training {}{} d={} m={} params={}", to_string(cfg.model.kind), cfg.model.ma_enabled ? "+ARMA" : "",
               cfg.model.dim(), cfg.model.num_layers, model.param_count());
  const TrainResult result = train(model, ds, cfg.data.input_len, cfg.train);
  write_json(result.checkpoint, dir / "checkpoint.json");
  write_json(result.metrics.to_json(), dir / "metrics.json");
  std::printf("%s%s  epochs %d  best %d  test mse %.6f  mae %.6f\n", std::string(to_string(cfg.model.kind)).c_str(),
              cfg.model.ma_enabled ? "+ARMA" : "", result.metrics.epochs_run, result.metrics.best_epoch,
              result.metrics.mse, result.metrics.mae);
  return 0;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string dump;
};

ModelConfig model_config_from(const nlohmann::json& j) {
  nlohmann::json run = {{"model", nlohmann::json::object()}, {"arma", nlohmann::json::object()}};
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "alpha" || k == "leaky_slope" || k == "share_wq" || k == "wv_identity") {
      run["arma"][k] = *it;
    } else if (k != "patch_len") {
      run["model"][k] = *it;
    }
  }
  ModelConfig m = parse_run_config(run).model;
  m.patch_len = j.at("patch_len").get<int>();
  return m;
}

int run_eval(const EvalArgs& a) {
  RunConfig cfg = resolve(a.common);
  std::ifstream in(a.checkpoint);
  if (!in) throw ConfigError("--checkpoint", "cannot open " + a.checkpoint);
  nlohmann::json ckpt;
  try {
    ckpt = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("--checkpoint", e.what());
  }
  const ModelConfig mc = model_config_from(ckpt.at("config"));
  if (mc.patch_len != cfg.data.patch_len) {
    throw ConfigError("data.L_P", "is " + std::to_string(cfg.data.patch_len) + " but the checkpoint uses " +
                                      std::to_string(mc.patch_len));
  }
  cfg.model = mc;
  cfg.channels_given = true;
  const data::SeriesDataset ds = load_dataset(cfg);
  ForecastModel model = build_model(mc, 0);
  load_weights(model, ckpt);
  const ForecastMetrics m = evaluate(model, ds, ds.test, cfg.data.input_len, 1);
  const fs::path dir = ensure_dir(cfg.output_dir);
  nlohmann::json j = {{"variant", std::string(to_string(mc.kind))},
                      {"ma_enabled", mc.ma_enabled},
                      {"L_I", cfg.data.input_len},
                      {"L_P", cfg.data.patch_len},
                      {"seed", cfg.train.seed},
                      {"mse", m.mse},
                      {"mae", m.mae},
                      {"windows", m.windows}};
  write_json(j, dir / "eval_metrics.json");
  if (!a.dump.empty()) {
    const auto starts = data::window_starts(ds.test, static_cast<std::size_t>(cfg.data.input_len + cfg.data.patch_len));
    const auto preds = predict_windows(model, ds, starts, cfg.data.input_len);
    std::FILE* f = std::fopen(a.dump.c_str(), "w");
    if (f == nullptr) throw std::runtime_error("cannot write " + a.dump);
    std::fprintf(f, "window,channel,step,prediction,truth\n");
    for (std::size_t w = 0; w < starts.size(); ++w) {
      for (Eigen::Index c = 0; c < preds[w].rows(); ++c) {
        for (Eigen::Index h = 0; h < preds[w].cols(); ++h) {
          const double truth = ds.values(static_cast<Eigen::Index>(starts[w]) + cfg.data.input_len + h, c);
          std::fprintf(f, "%zu,%ld,%ld,%.17g,%.17g\n", w, static_cast<long>(c), static_cast<long>(h), preds[w](c, h), truth);
        }
      }
    }
    std::fclose(f);
  }
  std::printf("test mse %.6f  mae %.6f  windows %zu\n", m.mse, m.mae, m.windows);
  return 0;
}

// analyze-ma ----------------------------------------------------------------

struct AnalyzeArgs {
  Common common;
  int n = 64, d = 32, heads = 1, seeds = 1;
  std::vector<double> alphas = {0.05};
  std::string phi_q = "neg-leaky-relu";
  bool alpha_sweep = false, all_phi = false;
};

int run_analyze(const AnalyzeArgs& a) {
  const std::uint64_t seed0 = a.common.seed.value_or(2024);
  const std::string out = a.common.output_dir.empty() ? "runs/ma_analysis" : a.common.output_dir;
  if (a.n < 2) throw ConfigError("--n", "must be >= 2");
  if (a.d < 1) throw ConfigError("--d", "must be >= 1");
  if (a.heads < 1 || a.d % a.heads != 0) throw ConfigError("--heads", "must divide --d");
  if (a.seeds < 1) throw ConfigError("--seeds", "must be >= 1");
  const fs::path dir = ensure_dir(out);
  const std::vector<double> alphas = a.alpha_sweep ? std::vector<double>{0.05, 0.5, 2.0, 10.0} : a.alphas;
  const std::vector<std::string> phis = a.all_phi ? ma::query_phi_names() : std::vector<std::string>{a.phi_q};
  std::printf("%-16s %8s %6s %10s %8s %12s %12s\n", "phi_q", "alpha", "seed", "neg_frac", "argmax", "|theta|_1",
              "|theta|_2");
  for (const std::string& phi_name : phis) {
    for (double alpha : alphas) {
      ma::PhiPair phi;
      phi.q_name = phi_name;
      phi.alpha = alpha;
      try {
        phi.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(phi_name == a.phi_q ? "--phi-q" : "--alpha", e.what());
      }
      for (int s = 0; s < a.seeds; ++s) {
        const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(s);
        const ma::Analysis res = ma::simulate(a.n, a.d, a.heads, phi, seed);
        const std::string stem = (dir / ("ma_" + phi_name + "_a" + fmt_alpha(alpha) + "_s" + std::to_string(seed))).string();
        if (a.heads == 1) {
          ma::export_weight_maps(res.averaged, stem);
        } else {
          for (std::size_t h = 0; h < res.per_head.size(); ++h) {
            ma::export_weight_maps(res.per_head[h], stem + "_h" + std::to_string(h));
          }
          ma::export_weight_maps(res.averaged, stem + "_avg");
        }
        const auto& prof = res.averaged.diag_profile;
        std::printf("%-16s %8s %6llu %10.4f %8d %12.6f %12.6f\n", phi_name.c_str(), fmt_alpha(alpha).c_str(),
                    static_cast<unsigned long long>(seed), res.averaged.negativity_fraction, argmax(prof) + 1, prof[0],
                    prof.size() > 1 ? prof[1] : 0.0);
      }
    }
  }
  return 0;
}

// gradcheck -----------------------------------------------------------------

int run_gradcheck(const Common& c) {
  const auto rows = gradcheck_all(c.seed.value_or(2024));
  bool ok = true;
  std::printf("%-7s %-13s %-4s %8s %12s %s\n", "target", "variant", "ma", "entries", "max_rel_err", "result");
  for (const auto& r : rows) {
    ok = ok && r.report.pass;
    std::printf("%-7s %-13s %-4s %8zu %12.3e %s\n", r.target.c_str(), std::string(to_string(r.kind)).c_str(),
                r.ma_enabled ? "on" : "off", r.report.checked, r.report.max_rel_err, r.report.pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 2;
}

// paramcount ----------------------------------------------------------------

int run_paramcount(const Common& c) {
  RunConfig cfg = resolve(c);
  if (!cfg.channels_given) {
    if (cfg.data.source.empty()) {
      cfg.model.channels = cfg.data.synthetic.channels;
    } else {
      cfg.model.channels = data::load_csv(cfg.data.source).channels();
    }
  }
  cfg.model.patch_len = cfg.data.patch_len;
  try {
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
  std::printf("C=%d d=%d m=%d L_P=%d N_max=%d\n", cfg.model.channels, cfg.model.dim(), cfg.model.num_layers,
              cfg.model.patch_len, cfg.model.max_tokens);
  std::printf("%-13s %12s %12s %12s\n", "variant", "AR", "ARMA", "difference");
  for (const ParamRow& r : param_table(cfg.model)) {
    std::printf("%-13s %12zu %12zu %12lld\n", std::string(to_string(r.kind)).c_str(), r.ar, r.arma,
                static_cast<long long>(r.arma) - static_cast<long long>(r.ar));
  }
  return 0;
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  Common common;
  data::SyntheticSpec spec;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const std::uint64_t seed = a.common.seed.value_or(2024);
  const data::SeriesDataset ds = data::gen_synthetic(a.spec, seed);
  std::string path = a.out;
  if (path.empty()) {
    const fs::path dir = ensure_dir(a.common.output_dir.empty() ? "runs" : a.common.output_dir);
    path = (dir / ("synthetic_" + a.spec.kind + ".csv")).string();
  }
  data::write_csv(ds, path);
  std::printf("wrote %s (%zu rows, %d channels)\n", path.c_str(), ds.length(), ds.channels());
  return 0;
}

// bench-equivalence ---------------------------------------------------------

struct BenchArgs {
  Common common;
  int cases = 100, n = 64, d = 32, heads = 4;
};

int run_bench(const BenchArgs& a) {
  if (a.cases < 1) throw ConfigError("--cases", "must be >= 1");
  if (a.n < 1) throw ConfigError("--n", "must be >= 1");
  if (a.heads < 1 || a.d % a.heads != 0) throw ConfigError("--heads", "must divide --d");
  const auto rows = bench_equivalence(a.cases, a.n, a.d, a.heads, a.common.seed.value_or(2024));
  std::printf("%-13s %6s %14s %8s %14s %14s\n", "variant", "cases", "max_rel_err", "causal", "recurrent_ms",
              "parallel_ms");
  for (const auto& r : rows) {
    std::printf("%-13s %6d %14.3e %8s %14.3f %14.3f\n", std::string(to_string(r.kind)).c_str(), r.cases,
                r.max_rel_err, r.causal ? "yes" : "NO", r.recurrent_ms, r.parallel_ms);
  }
  return 0;
}

void setup_logging() {
  const char* env = std::getenv("ARMA_ATTN_LOG");
  const std::string level = env == nullptr ? "info" : env;
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw ConfigError("ARMA_ATTN_LOG", "must be error, info or debug, got '" + level + "'");
  }
  spdlog::set_pattern("[%l] %v");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ARMA attention forecaster and MA analysis toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint.json, metrics.json, config.json");
  add_common(train_cmd, train_args.common);
  train_cmd->add_option("--variant", train_args.variant, "std_softmax | linear | elementwise | gated_linear | fixed");
  train_cmd->add_flag("--no-ma", train_args.no_ma, "disable the MA term (AR baseline)");
  train_cmd->add_flag("--ma", train_args.ma, "enable the MA term (default)");
  train_cmd->add_option("--epochs", train_args.epochs, "override train.max_epochs (default 100)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split; writes eval_metrics.json");
  add_common(eval_cmd, eval_args.common);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint.json from train")->required();
  eval_cmd->add_option("--dump", eval_args.dump, "also write per-window predictions to this CSV");

  AnalyzeArgs an;
  auto* analyze_cmd = app.add_subcommand("analyze-ma", "simulate B and Theta = B(I-B)^-1 maps; writes CSV + JSON");
  add_common(analyze_cmd, an.common);
  analyze_cmd->add_option("--n", an.n, "sequence length N")->capture_default_str();
  analyze_cmd->add_option("--d", an.d, "feature width d")->capture_default_str();
  analyze_cmd->add_option("--heads", an.heads, "heads; >1 also writes per-head maps")->capture_default_str();
  analyze_cmd->add_option("--alpha", an.alphas, "key activation scale(s)")->capture_default_str();
  analyze_cmd->add_option("--phi-q", an.phi_q, "query activation: {neg,pos}-{leaky-relu,relu,sigmoid,swish}")
      ->capture_default_str();
  analyze_cmd->add_flag("--alpha-sweep", an.alpha_sweep, "use alpha in {0.05, 0.5, 2, 10}");
  analyze_cmd->add_flag("--all-phi", an.all_phi, "run every query activation");
  analyze_cmd->add_option("--seeds", an.seeds, "number of consecutive seeds starting at --seed")->capture_default_str();

  Common gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every variant (h=1e-5, rel tol 1e-4)");
  add_common(grad_cmd, gc);

  Common pc;
  auto* param_cmd = app.add_subcommand("paramcount", "AR vs ARMA trainable parameter counts per variant");
  add_common(param_cmd, pc);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic series as CSV");
  add_common(gen_cmd, gen.common);
  gen_cmd->add_option("--kind", gen.spec.kind, "seasonal | arma11 | seasonal-plus-shocks")->capture_default_str();
  gen_cmd->add_option("--length", gen.spec.length, "rows")->capture_default_str();
  gen_cmd->add_option("--channels", gen.spec.channels, "columns")->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise, "noise std for the seasonal kinds")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output CSV (default <output-dir>/synthetic_<kind>.csv)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench-equivalence", "recurrent vs parallel kernels: max error and timing");
  add_common(bench_cmd, bench.common);
  bench_cmd->add_option("--cases", bench.cases, "random cases per variant")->capture_default_str();
  bench_cmd->add_option("--n", bench.n, "maximum sequence length")->capture_default_str();
  bench_cmd->add_option("--d", bench.d, "model width")->capture_default_str();
  bench_cmd->add_option("--heads", bench.heads, "heads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    setup_logging();
    if (train_cmd->parsed()) return run_train(train_args);
    if (eval_cmd->parsed()) return run_eval(eval_args);
    if (analyze_cmd->parsed()) return run_analyze(an);
    if (grad_cmd->parsed()) return run_gradcheck(gc);
    if (param_cmd->parsed()) return run_paramcount(pc);
    if (gen_cmd->parsed()) return run_gen(gen);
    if (bench_cmd->parsed()) return run_bench(bench);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

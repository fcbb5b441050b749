// sqnt: train, analyze and run quantized stable networks from the shell.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage error, 3 integer/fake-quant
// site mismatch from infer-int --compare.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sqnt/checkpoint.hpp"
#include "sqnt/config.hpp"
#include "sqnt/experiment.hpp"
#include "sqnt/int_inference.hpp"
#include "sqnt/reports.hpp"
#include "sqnt/stability.hpp"
#include "sqnt/training.hpp"

namespace fs = std::filesystem;
using namespace sqnt;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.path, "experiment config (key = value lines)")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override a config key, e.g. --set epochs=5")->allow_extra_args(false);
}

void apply_overrides(ExperimentConfig& cfg, const ConfigArgs& args) {
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (const char* env = std::getenv("SQNT_SEED"); env && *env) cfg.set("seed", env);
  cfg.validate();
}

// Config from --config, else the one embedded in `fallback_text`, else defaults.
ExperimentConfig resolve_config(const ConfigArgs& args, const std::string& fallback_text = {}) {
  ExperimentConfig cfg;
  if (!args.path.empty()) {
    cfg = ExperimentConfig::from_file(args.path);
  } else if (!fallback_text.empty()) {
    cfg.parse(fallback_text);
  }
  apply_overrides(cfg, args);
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  write_file_atomic(path, text);
}

std::string manifest_path_for(const std::string& out) {
  if (out.empty() || out == "-") return "";
  return out + ".manifest.json";
}

void emit_manifest(const std::string& path, const Manifest& m) {
  if (!path.empty()) write_manifest(path, m);
}

Manifest manifest_for(const std::string& command, const ExperimentConfig& cfg) {
  Manifest m;
  m.command = command;
  m.config_hash = cfg.hash();
  m.seed = cfg.train.seed;
  return m;
}

struct LoadedRun {
  ExperimentConfig cfg;
  ExperimentData data;
  LoadedCheckpoint ckpt;
};

LoadedRun load_run(const std::string& checkpoint, const ConfigArgs& args) {
  RecordFile f = RecordFile::load(checkpoint);
  const std::string embedded = f.contains("meta.config") ? f.text("meta.config") : std::string();
  ExperimentConfig cfg = resolve_config(args, embedded);
  ExperimentData data = load_experiment_data(cfg);
  LoadedCheckpoint lc = load_checkpoint(f);
  attach_graph(lc.net, cfg, data);
  return {std::move(cfg), std::move(data), std::move(lc)};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const ConfigArgs& args, const std::string& out, const std::string& edges) {
  const ExperimentConfig cfg = resolve_config(args);
  ExperimentData data = load_experiment_data(cfg);
  Manifest m = manifest_for("gen-data", cfg);
  if (data.images) {
    image_dataset_records(*data.images).save(out);
  } else {
    if (edges.empty()) throw std::invalid_argument("graph data needs --edges for the edge list");
    graph_dataset_records(*data.graph).save(out);
    std::ostringstream os;
    write_edge_list(os, data.graph->graph);
    write_file_atomic(edges, os.str());
    m.outputs["edges"] = edges;
  }
  m.outputs["data"] = out;
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& out_dir, const std::string& storage, bool verbose) {
  const ExperimentConfig cfg = resolve_config(args);
  fs::create_directories(out_dir);
  ExperimentData data = load_experiment_data(cfg);
  Network net = build_network(cfg, data);
  const TrainResult result = run_training(net, data, cfg, [&](const EpochMetrics& e) {
    if (verbose) {
      std::cerr << "epoch " << e.epoch << " bits " << e.bits << " loss " << e.train_loss << " train "
                << e.train_acc << " val " << e.val_acc << "\n";
    }
  });
  const ForwardContext fc = final_context(cfg.train);
  CheckpointMeta meta;
  meta.bits_w = fc.weights_active() ? fc.bits_w : 32;
  meta.bits_a = fc.activations_active() ? fc.bits_a : 32;
  meta.storage = storage == "f32" ? DType::f32 : DType::f64;
  RecordFile ckpt = make_checkpoint(net, meta);
  ckpt.put_text("meta.config", cfg.to_text());
  if (data.graph) ckpt.put_scalar("meta.graph_normalized", cfg.graph_normalized ? 1.0 : 0.0);
  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.sqnt").string();
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  const std::string config_path = (fs::path(out_dir) / "config.txt").string();
  ckpt.save(ckpt_path);
  write_file_atomic(metrics_path, metrics_csv(result.log));
  write_file_atomic(config_path, cfg.to_text());

  Manifest m = manifest_for("train", cfg);
  m.outputs = {{"checkpoint", ckpt_path}, {"metrics", metrics_path}, {"config", config_path}};
  m.extra["test_accuracy"] = format_real(test_accuracy(net, data, cfg));
  m.extra["bits_w"] = std::to_string(meta.bits_w);
  m.extra["bits_a"] = std::to_string(meta.bits_a);
  emit_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  std::cout << metrics_csv(result.log);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const ConfigArgs& args, const std::string& out) {
  LoadedRun run = load_run(checkpoint, args);
  const ForwardContext ctx = final_context(run.cfg.train);
  std::string csv = "split,accuracy\n";
  if (run.data.images) {
    const auto& s = run.data.splits;
    csv += "train," + format_real(evaluate_images(run.ckpt.net, *run.data.images, s.train, ctx)) + "\n";
    csv += "val," + format_real(evaluate_images(run.ckpt.net, *run.data.images, s.val, ctx)) + "\n";
    csv += "test," + format_real(evaluate_images(run.ckpt.net, *run.data.images, s.test, ctx)) + "\n";
  } else {
    const auto& g = *run.data.graph;
    csv += "train," + format_real(evaluate_graph(run.ckpt.net, g, g.train_mask, ctx)) + "\n";
    csv += "val," + format_real(evaluate_graph(run.ckpt.net, g, g.val_mask, ctx)) + "\n";
    csv += "test," + format_real(evaluate_graph(run.ckpt.net, g, g.test_mask, ctx)) + "\n";
  }
  write_text(out, csv);
  Manifest m = manifest_for("eval", run.cfg);
  m.inputs["checkpoint"] = checkpoint;
  m.outputs["accuracy"] = out;
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

int cmd_analyze(const std::string& checkpoint, const ConfigArgs& args, const std::string& out,
                std::int64_t max_inputs) {
  LoadedRun run = load_run(checkpoint, args);
  const DivergenceReport report = analyze_divergence(run.ckpt.net, run.data, run.cfg, max_inputs);
  write_text(out, divergence_csv(report));
  Manifest m = manifest_for("analyze", run.cfg);
  m.inputs["checkpoint"] = checkpoint;
  m.outputs["divergence"] = out;
  m.extra = report.meta;
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

int cmd_stability(const std::string& checkpoint, const ConfigArgs& args, const std::string& out,
                  const std::string& growth_out, double eta, double lipschitz) {
  LoadedRun run = load_run(checkpoint, args);
  const Tensor probe = probe_input(run.data);
  const ForwardContext ctx = final_context(run.cfg.train);
  PowerIterationOptions opt;
  opt.seed = run.cfg.train.seed;
  const auto rows = check_step_bound(run.ckpt.net, probe.shape(), ctx, lipschitz, opt);
  write_text(out, step_bound_csv(rows));

  Manifest m = manifest_for("stability", run.cfg);
  m.inputs["checkpoint"] = checkpoint;
  m.outputs["table"] = out;
  if (!growth_out.empty()) {
    // Perturbation on the trunk input, scaled to relative size `eta`.
    ForwardContext fp;
    fp.quantize_weights = fp.quantize_activations = false;
    Shape trunk_shape = run.ckpt.net.block_input_shapes(probe.shape()).at(1);
    Tensor eta0(trunk_shape);
    std::mt19937_64 rng(run.cfg.train.seed);
    std::normal_distribution<double> gauss;
    for (auto& v : eta0.values()) v = gauss(rng);
    const double n = norm2(eta0);
    for (auto& v : eta0.values()) v *= eta / n;
    write_text(growth_out, growth_csv(perturbation_growth(run.ckpt.net, probe, eta0, fp)));
    m.outputs["growth"] = growth_out;
  }
  bool all_ok = true;
  for (const auto& r : rows) all_ok = all_ok && (!r.applicable || r.ok);
  m.extra["all_ok"] = all_ok ? "true" : "false";
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

int cmd_export_int(const std::string& checkpoint, const std::string& out, std::optional<int> bits_w,
                   std::optional<int> bits_a) {
  const RecordFile f = RecordFile::load(checkpoint);
  const IntModel model = IntModel::from_checkpoint(f, bits_w, bits_a);
  model.save(out);
  ExperimentConfig cfg;
  if (!model.config_text().empty()) cfg.parse(model.config_text());
  Manifest m = manifest_for("export-int", cfg);
  m.inputs["checkpoint"] = checkpoint;
  m.outputs["model"] = out;
  m.extra["bits_w"] = std::to_string(model.bits_w());
  m.extra["bits_a"] = std::to_string(model.bits_a());
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

int cmd_infer_int(const std::string& model_path, const ConfigArgs& args, const std::string& out,
                  const std::string& compare, std::int64_t max_inputs) {
  const IntModel model = IntModel::load(model_path);
  const ExperimentConfig cfg = resolve_config(args, model.config_text());
  const ExperimentData data = load_experiment_data(cfg);
  Tensor input;
  std::unique_ptr<GraphOperator> graph;
  if (data.images) {
    auto idx = data.splits.test;
    if (static_cast<std::int64_t>(idx.size()) > max_inputs) idx.resize(static_cast<std::size_t>(max_inputs));
    input = data.images->gather(idx);
  } else {
    input = data.graph->features;
    graph = std::make_unique<GraphOperator>(data.graph->graph, model.graph_normalized().value_or(cfg.graph_normalized));
  }
  QuantSiteLog int_sites;
  const Tensor logits = model.forward(input, graph.get(), &int_sites);
  std::string csv = "row,prediction\n";
  for (std::int64_t i = 0; i < logits.dim(0); ++i) {
    const double* row = logits.data() + i * logits.dim(1);
    const auto best = std::max_element(row, row + logits.dim(1)) - row;
    csv += std::to_string(i) + "," + std::to_string(best) + "\n";
  }
  write_text(out, csv);

  Manifest m = manifest_for("infer-int", cfg);
  m.inputs["model"] = model_path;
  m.outputs["predictions"] = out;
  int status = 0;
  if (!compare.empty()) {
    LoadedCheckpoint lc = load_checkpoint(compare);
    if (graph) lc.net.set_graph(std::make_shared<GraphOperator>(*graph));
    QuantSiteLog float_sites;
    ForwardContext ctx;
    ctx.bits_w = model.bits_w();
    ctx.bits_a = model.bits_a();
    ctx.sites = &float_sites;
    lc.net.forward(Var::constant(input), ctx);
    const auto bad = count_site_mismatches(int_sites, float_sites);
    m.inputs["compare"] = compare;
    m.extra["site_mismatches"] = std::to_string(bad);
    std::cerr << "site_mismatches," << bad << "\n";
    if (bad != 0) status = 3;
  }
  emit_manifest(manifest_path_for(out), m);
  return status;
}

int cmd_report(const std::string& nonsym, const std::string& sym, const std::string& out) {
  const MseSeries a = parse_divergence_csv(read_file(nonsym), nonsym);
  const MseSeries b = parse_divergence_csv(read_file(sym), sym);
  write_text(out, comparison_csv(a, nonsym, b, sym));
  Manifest m;
  m.command = "report";
  m.inputs = {{"nonsym", nonsym}, {"sym", sym}};
  m.outputs["comparison"] = out;
  emit_manifest(manifest_path_for(out), m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqnt: quantization-aware training and integer inference for stable networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", library_version());

  ConfigArgs cfg_args;
  std::string out, out_dir, checkpoint, edges, growth, model, compare, nonsym, sym;
  std::string storage = "f64";
  std::optional<int> bits_w, bits_a;
  std::int64_t inputs = 256;
  double eta = 1e-3, lipschitz = 1.0;
  bool verbose = false;

  auto* gen = app.add_subcommand("gen-data", "generate the configured synthetic dataset");
  add_config_options(gen, cfg_args);
  gen->add_option("-o,--out", out, "dataset container")->required();
  gen->add_option("--edges", edges, "edge list output (graph tasks)");

  auto* train = app.add_subcommand("train", "train a network; writes checkpoint, metrics and manifest");
  add_config_options(train, cfg_args);
  train->add_option("-o,--out-dir", out_dir, "output directory")->required();
  train->add_option("--storage", storage, "checkpoint parameter dtype")->check(CLI::IsMember({"f32", "f64"}));
  train->add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on train/val/test");
  add_config_options(eval, cfg_args);
  eval->add_option("-k,--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", out, "CSV output (default stdout)");

  auto* analyze = app.add_subcommand("analyze", "paired quantized/full-precision trace; layer,mse CSV");
  add_config_options(analyze, cfg_args);
  analyze->add_option("-k,--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  analyze->add_option("-o,--out", out, "CSV output (default stdout)");
  analyze->add_option("-n,--inputs", inputs, "held-out inputs to trace")->check(CLI::PositiveNumber);

  auto* stability = app.add_subcommand("stability", "step-bound table and perturbation growth");
  add_config_options(stability, cfg_args);
  stability->add_option("-k,--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  stability->add_option("-o,--out", out, "step-bound CSV (default stdout)");
  stability->add_option("--growth", growth, "perturbation growth CSV");
  stability->add_option("--eta", eta, "norm of the injected perturbation")->check(CLI::PositiveNumber);
  stability->add_option("--lipschitz", lipschitz, "activation Lipschitz constant")->check(CLI::PositiveNumber);

  auto* exp = app.add_subcommand("export-int", "convert a checkpoint to an integer model");
  exp->add_option("-k,--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", out, "integer model file")->required();
  exp->add_option("--bits-w", bits_w, "weight bits (default: as trained)");
  exp->add_option("--bits-a", bits_a, "activation bits (default: as trained)");

  auto* infer = app.add_subcommand("infer-int", "integer-only inference on held-out data");
  add_config_options(infer, cfg_args);
  infer->add_option("-m,--model", model, "integer model file")->required()->check(CLI::ExistingFile);
  infer->add_option("-o,--out", out, "predictions CSV (default stdout)");
  infer->add_option("--compare", compare, "checkpoint to compare quantized activations against")
      ->check(CLI::ExistingFile);
  infer->add_option("-n,--inputs", inputs, "held-out inputs")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "merge two layer,mse CSVs into layer,nonsym,sym");
  report->add_option("--nonsym", nonsym, "divergence CSV of the non-symmetric run")->required()->check(CLI::ExistingFile);
  report->add_option("--sym", sym, "divergence CSV of the symmetric run")->required()->check(CLI::ExistingFile);
  report->add_option("-o,--out", out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;  // --help
    std::cerr << "\n" << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(cfg_args, out, edges);
    if (*train) return cmd_train(cfg_args, out_dir, storage, verbose);
    if (*eval) return cmd_eval(checkpoint, cfg_args, out);
    if (*analyze) return cmd_analyze(checkpoint, cfg_args, out, inputs);
    if (*stability) return cmd_stability(checkpoint, cfg_args, out, growth, eta, lipschitz);
    if (*exp) return cmd_export_int(checkpoint, out, bits_w, bits_a);
    if (*infer) return cmd_infer_int(model, cfg_args, out, compare, inputs);
    if (*report) return cmd_report(nonsym, sym, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

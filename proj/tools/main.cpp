// twins: self-supervised speech representation training and evaluation.
//
// Exit codes: 0 success, 1 usage or data errors, 2 numeric failures,
// 3 verification (gradient check) failures.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "twins/config.hpp"
#include "twins/eval.hpp"
#include "twins/fixture.hpp"
#include "twins/gradcheck.hpp"
#include "twins/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitVerification = 3;

twins::RunConfig load_config_or_default(const std::string& path) {
  twins::RunConfig config;
  if (!path.empty()) config = twins::load_run_config(path);
  twins::apply_seed_override(config);
  return config;
}

twins::Dataset load_data(const std::string& manifest_path, const twins::DspConfig& dsp,
                         bool require_labels) {
  const auto manifest = twins::DatasetManifest::load(manifest_path);
  return twins::load_dataset(manifest, dsp, require_labels);
}

int cmd_synth(const std::string& out_dir, int clips, uint64_t seed) {
  twins::FixtureOptions options;
  options.clips = clips;
  options.seed = seed;
  const auto manifest = twins::write_fixture(out_dir, options);
  std::cout << "wrote " << clips << " clips, manifest " << manifest.string() << "\n";
  return kExitOk;
}

int cmd_featurize(const std::string& manifest_path, const std::string& out_dir,
                  const std::string& config_path, bool force) {
  const twins::RunConfig config = load_config_or_default(config_path);
  const auto manifest = twins::DatasetManifest::load(manifest_path);
  const twins::FeaturizeResult result =
      twins::featurize_manifest(manifest, out_dir, config.dsp, force);
  std::cout << "featurized " << result.written << " clips, reused " << result.reused
            << ", index " << result.index_path.string() << "\n";
  if (!result.failures.empty()) {
    for (const std::string& f : result.failures) std::cerr << "failed: " << f << "\n";
    std::cerr << result.failures.size() << " entries failed\n";
    return kExitUsage;
  }
  return kExitOk;
}

int cmd_pretrain(const std::string& manifest_path, const std::string& out_path,
                 const std::string& config_path, const std::string& log_path,
                 const std::string& variant, std::optional<int> epochs,
                 std::optional<uint64_t> seed, std::optional<int> batch_size,
                 std::optional<int> latent_dim) {
  twins::RunConfig config = load_config_or_default(config_path);
  if (!variant.empty()) config.train.variant = twins::variant_from_name(variant);
  if (epochs) config.train.epochs = *epochs;
  if (seed) config.train.seed = *seed;
  if (batch_size) config.train.batch_size = *batch_size;
  if (latent_dim) {
    config.train.arch.latent_dim = *latent_dim;
    config.train.arch.projector_hidden = *latent_dim;
  }
  config.validate();

  const twins::Dataset data = load_data(manifest_path, config.dsp, false);
  std::ofstream log_stream;
  if (!log_path.empty()) {
    log_stream.open(log_path);
    if (!log_stream) throw twins::DataError("cannot open log file " + log_path);
  }
  twins::PretrainResult result =
      twins::pretrain(config.train, data, log_path.empty() ? nullptr : &log_stream);
  for (size_t e = 0; e < result.checkpoint.loss_history.size(); ++e) {
    const auto& l = result.checkpoint.loss_history[e];
    std::printf("epoch %zu: total %.6f (invariance %.6f, redundancy %.6f)\n", e, l.total,
                l.invariance, l.redundancy);
  }
  twins::save_checkpoint(result.checkpoint, out_path);
  std::cout << "saved checkpoint " << out_path << "\n";
  return kExitOk;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& out_path, const std::string& config_path,
                 std::optional<double> fraction, std::optional<uint64_t> seed,
                 const std::string& mode) {
  twins::RunConfig config = load_config_or_default(config_path);
  if (fraction) config.finetune.fraction = *fraction;
  if (seed) config.finetune.seed = *seed;
  if (!mode.empty()) config.finetune.mode = twins::finetune_mode_from_name(mode);
  config.finetune.validate();

  const twins::Checkpoint ckpt = twins::load_checkpoint(ckpt_path);
  const twins::Dataset data = load_data(manifest_path, config.dsp, true);
  const twins::FinetuneResult result =
      twins::finetune(ckpt.params, data, config.finetune);
  const double accuracy = twins::top1_accuracy(result.encoder, result.head_weight,
                                               result.head_bias, data.test);
  std::printf("test top-1 accuracy: %.2f%%\n", accuracy);

  if (!out_path.empty()) {
    twins::Checkpoint out;
    out.params = result.encoder;
    out.extra = {result.head_weight, result.head_bias};
    out.config = {{"kind", "finetune"},
                  {"classes", result.class_names},
                  {"finetune", config.finetune.to_json()},
                  {"dataset_id", data.manifest.id},
                  {"upstream", ckpt.config}};
    twins::save_checkpoint(out, out_path);
    std::cout << "saved model " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& manifest_path,
             const std::string& config_path) {
  const twins::RunConfig config = load_config_or_default(config_path);
  const twins::Checkpoint ckpt = twins::load_checkpoint(model_path);
  if (ckpt.extra.size() < 2)
    throw twins::FormatError("model has no classification head; fine-tune it first");
  const twins::Dataset data = load_data(manifest_path, config.dsp, true);
  if (ckpt.config.contains("classes")) {
    const auto classes = ckpt.config.at("classes").get<std::vector<std::string>>();
    if (classes != data.class_names)
      throw twins::DataError("model classes do not match the manifest's label set");
  }
  const double accuracy =
      twins::top1_accuracy(ckpt.params, ckpt.extra[0], ckpt.extra[1], data.test);
  std::printf("test top-1 accuracy: %.2f%%\n", accuracy);
  return kExitOk;
}

int cmd_grid(const std::string& manifest_path, const std::string& out_prefix,
             const std::vector<std::string>& ckpt_args, std::vector<double> fractions,
             std::vector<uint64_t> seeds, const std::string& config_path,
             bool no_baseline, const std::string& mode) {
  twins::RunConfig config = load_config_or_default(config_path);
  if (!mode.empty()) config.finetune.mode = twins::finetune_mode_from_name(mode);

  twins::GridJob job;
  job.finetune = config.finetune;
  job.include_baseline = !no_baseline;
  job.baseline_arch = config.train.arch;
  if (!fractions.empty()) job.fractions = std::move(fractions);
  if (!seeds.empty()) job.seeds = std::move(seeds);
  for (const std::string& arg : ckpt_args) {
    const size_t eq = arg.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size())
      throw twins::InvalidInputError("--ckpt wants LABEL=PATH, got '" + arg + "'");
    job.checkpoints.push_back(
        {arg.substr(0, eq), twins::load_checkpoint(arg.substr(eq + 1))});
  }

  const twins::Dataset data = load_data(manifest_path, config.dsp, true);
  const twins::GridReport report = twins::run_grid(job, data);

  const std::string csv_path = out_prefix + ".csv";
  const std::string md_path = out_prefix + ".md";
  std::ofstream csv(csv_path);
  if (!csv) throw twins::DataError("cannot write " + csv_path);
  csv << report.to_csv();
  std::ofstream md(md_path);
  if (!md) throw twins::DataError("cannot write " + md_path);
  md << report.to_markdown();
  std::cout << report.to_markdown() << "wrote " << csv_path << " and " << md_path << "\n";

  bool any_failed = false;
  for (const twins::GridCell& cell : report.cells) {
    if (cell.error.empty()) continue;
    any_failed = true;
    std::cerr << "cell " << cell.upstream << "/" << cell.fraction << "/" << cell.seed
              << " failed: " << cell.error << "\n";
  }
  return any_failed ? kExitUsage : kExitOk;
}

int cmd_gradcheck(const std::string& variant, int n, int m, int instances, uint64_t seed,
                  double objective_tol, double encoder_tol, bool verbose) {
  using twins::Reduction;
  using twins::Variant;
  if (n < 1) throw twins::InvalidInputError("gradcheck: n must be >= 1");
  if (m < 2) throw twins::InvalidInputError("gradcheck: m must be >= 2");
  std::vector<Variant> variants = {Variant::kBT, Variant::kMBT};
  if (!variant.empty()) variants = {twins::variant_from_name(variant)};

  struct Combo {
    Reduction reduction;
    bool center;
    const char* suffix;
  };
  const Combo combos[] = {
      {Reduction::kSum, false, "/sum"},
      {Reduction::kSum, true, "/sum+center"},
      {Reduction::kMean, false, "/mean"},
      {Reduction::kMean, true, "/mean+center"},
  };

  bool ok = true;
  for (const Variant v : variants) {
    for (const Combo& combo : combos) {
      // BT has no batch reduction to vary.
      if (v == Variant::kBT && combo.reduction == Reduction::kMean) continue;
      double worst = 0.0;
      std::string worst_offender;
      for (int i = 0; i < instances; ++i) {
        twins::ObjectiveGradcheckSpec spec;
        spec.variant = v;
        spec.n = n;
        spec.m = m;
        spec.corr.reduction = combo.reduction;
        spec.corr.center = combo.center;
        spec.seed = seed + static_cast<uint64_t>(i);
        std::string offender;
        const double err = twins::objective_gradcheck(spec, &offender);
        if (err > worst) {
          worst = err;
          worst_offender = offender;
        }
      }
      const bool pass = worst <= objective_tol;
      ok = ok && pass;
      const std::string label = twins::variant_name(v) + combo.suffix;
      if (verbose || !pass)
        std::printf("objective %-16s max rel err %.3e (tol %.1e) %s%s%s\n", label.c_str(),
                    worst, objective_tol, pass ? "ok" : "FAIL",
                    pass ? "" : " in ", pass ? "" : worst_offender.c_str());
    }
  }

  for (const Variant v : variants) {
    twins::EncoderGradcheckSpec spec;
    spec.arch = twins::tiny_arch();
    spec.variant = v;
    spec.seed = seed;
    std::string offender;
    const double err = twins::encoder_gradcheck(spec, &offender);
    const bool pass = err <= encoder_tol;
    ok = ok && pass;
    if (verbose || !pass)
      std::printf("encoder %-18s max rel err %.3e (tol %.1e) %s%s%s\n",
                  twins::variant_name(v).c_str(), err, encoder_tol,
                  pass ? "ok" : "FAIL", pass ? "" : " in ",
                  pass ? "" : offender.c_str());
  }

  std::printf("gradcheck %s\n", ok ? "passed" : "FAILED");
  return ok ? kExitOk : kExitVerification;
}

int cmd_config_dump(const std::string& config_path) {
  const twins::RunConfig config = load_config_or_default(config_path);
  std::cout << twins::dump_run_config(config);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Barlow Twins / Modified Barlow Twins speech representation toolkit"};
  app.require_subcommand(1);

  std::string manifest_path, out_path, config_path, log_path, ckpt_path, model_path;
  std::string variant, mode, out_dir, out_prefix;
  std::vector<std::string> ckpt_args;
  std::vector<double> fractions;
  std::vector<uint64_t> seeds;
  std::optional<int> epochs, batch_size, latent_dim;
  std::optional<double> fraction;
  std::optional<uint64_t> seed_opt;
  int clips = 400, instances = 100, gc_n = 4, gc_m = 8;
  uint64_t seed = 7;
  double objective_tol = 1e-5, encoder_tol = 1e-4;
  bool force = false, no_baseline = false, verbose = false;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic 4-class audio fixture");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--clips", clips, "Total clip count");
  synth->add_option("--seed", seed, "Fixture seed");

  auto* featurize =
      app.add_subcommand("featurize", "Extract log-mel features for a manifest");
  featurize->add_option("--manifest", manifest_path, "Dataset manifest (CSV or JSON)")
      ->required();
  featurize->add_option("--out", out_dir, "Output directory")->required();
  featurize->add_option("--config", config_path, "Run config (TOML)");
  featurize->add_flag("--force", force, "Recompute even when cached");

  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised pre-training");
  pretrain->add_option("--manifest", manifest_path, "Upstream manifest")->required();
  pretrain->add_option("--out", out_path, "Checkpoint output path")->required();
  pretrain->add_option("--config", config_path, "Run config (TOML)");
  pretrain->add_option("--log", log_path, "Step log output (JSON lines)");
  pretrain->add_option("--variant", variant, "Objective variant (bt or mbt)");
  pretrain->add_option("--epochs", epochs, "Override train.epochs");
  pretrain->add_option("--seed", seed_opt, "Override train.seed");
  pretrain->add_option("--batch", batch_size, "Override train.batch_size");
  pretrain->add_option("--latent", latent_dim, "Override latent width (and hidden)");

  auto* finetune = app.add_subcommand("finetune", "Supervised fine-tuning from a checkpoint");
  finetune->add_option("--ckpt", ckpt_path, "Pretrained checkpoint")->required();
  finetune->add_option("--manifest", manifest_path, "Labeled manifest")->required();
  finetune->add_option("--out", out_path, "Fine-tuned model output path");
  finetune->add_option("--config", config_path, "Run config (TOML)");
  finetune->add_option("--fraction", fraction, "Labeled fraction in (0, 1]");
  finetune->add_option("--seed", seed_opt, "Subsample / head seed");
  finetune->add_option("--mode", mode, "full or probe");

  auto* eval = app.add_subcommand("eval", "Evaluate a fine-tuned model");
  eval->add_option("--model", model_path, "Fine-tuned model checkpoint")->required();
  eval->add_option("--manifest", manifest_path, "Labeled manifest")->required();
  eval->add_option("--config", config_path, "Run config (TOML)");

  auto* grid = app.add_subcommand("grid", "Fraction x seed evaluation sweep");
  grid->add_option("--manifest", manifest_path, "Labeled manifest")->required();
  grid->add_option("--out", out_prefix, "Report path prefix")->required();
  grid->add_option("--ckpt", ckpt_args, "Checkpoint as LABEL=PATH (repeatable)");
  grid->add_option("--fractions", fractions, "Labeled fractions");
  grid->add_option("--seeds", seeds, "Fine-tune seeds");
  grid->add_option("--config", config_path, "Run config (TOML)");
  grid->add_option("--mode", mode, "full or probe");
  grid->add_flag("--no-baseline", no_baseline, "Skip the scratch baseline");

  auto* gradcheck = app.add_subcommand("gradcheck", "Verify analytic gradients");
  gradcheck->add_option("--variant", variant, "Check one variant only (bt or mbt)");
  gradcheck->add_option("--n", gc_n, "Latent batch size");
  gradcheck->add_option("--m", gc_m, "Latent dimensionality (>= 2)");
  gradcheck->add_option("--instances", instances, "Random instances per configuration");
  gradcheck->add_option("--seed", seed, "Base seed");
  gradcheck->add_option("--objective-tol", objective_tol, "Objective tolerance");
  gradcheck->add_option("--encoder-tol", encoder_tol, "End-to-end tolerance");
  gradcheck->add_flag("--verbose", verbose, "Print every configuration");

  auto* config_cmd = app.add_subcommand("config", "Configuration utilities");
  auto* config_dump = config_cmd->add_subcommand("dump", "Print the effective config");
  config_dump->add_option("--config", config_path, "Run config (TOML)");
  config_cmd->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(out_dir, clips, seed);
    if (featurize->parsed()) return cmd_featurize(manifest_path, out_dir, config_path, force);
    if (pretrain->parsed())
      return cmd_pretrain(manifest_path, out_path, config_path, log_path, variant, epochs,
                          seed_opt, batch_size, latent_dim);
    if (finetune->parsed())
      return cmd_finetune(ckpt_path, manifest_path, out_path, config_path, fraction,
                          seed_opt, mode);
    if (eval->parsed()) return cmd_eval(model_path, manifest_path, config_path);
    if (grid->parsed())
      return cmd_grid(manifest_path, out_prefix, ckpt_args, fractions, seeds, config_path,
                      no_baseline, mode);
    if (gradcheck->parsed())
      return cmd_gradcheck(variant, gc_n, gc_m, instances, seed, objective_tol,
                           encoder_tol, verbose);
    if (config_cmd->parsed()) return cmd_config_dump(config_path);
  } catch (const twins::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const twins::TwinsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

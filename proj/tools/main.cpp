// mepsnet: dataset generation, training, evaluation, restoration and
// inspection from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numeric>

#include "meps/checkpoint.hpp"
#include "meps/metrics.hpp"
#include "meps/model.hpp"
#include "meps/shdd.hpp"
#include "meps/train.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace meps;
using cli::RunConfig;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset = "desk";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts, const std::string& default_preset = "desk") {
  opts.preset = default_preset;
  cmd->add_option("--config", opts.config_path, "JSON config file with model/train/generate sections")
      ->check(CLI::ExistingFile);
  cmd->add_option("--preset", opts.preset, "built-in base config: desk, desk-tiny or paper")
      ->capture_default_str();
  cmd->add_option("--set", opts.overrides, "override, e.g. --set model.width=32 (repeatable)");
}

RunConfig resolve(const CommonOptions& opts) {
  return cli::load_run_config(cli::preset(opts.preset), opts.config_path, opts.overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<fs::path> list_inputs(const fs::path& input) {
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(input)) {
    if (de.is_regular_file() && de.path().extension() == ".png") files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  if (end <= begin) return 0.0;
  return std::accumulate(v.begin() + long(begin), v.begin() + long(end), 0.0) / double(end - begin);
}

void print_census_row(const char* label, const ParameterCensus& c) {
  std::printf("%-22s %12zu %14zu %12zu %12zu\n", label, c.shared_templates, c.coefficients, c.unshared, c.total);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixture of parameter-shared experts image restoration"};
  app.name("mepsnet");
  app.require_subcommand(1);
  app.fallthrough(false);

  // generate
  CommonOptions gen_opts;
  std::string gen_clean, gen_out, gen_level, gen_split;
  std::optional<std::uint64_t> gen_seed;
  std::optional<std::size_t> gen_variants;
  std::size_t gen_threads = 1;
  auto* gen = app.add_subcommand("generate", "synthesize a spatially heterogeneous distortion dataset");
  add_common(gen, gen_opts);
  gen->add_option("--clean", gen_clean, "directory of clean PNG images")->required();
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen->add_option("--level", gen_level, "easy, moderate or difficult")
      ->check(CLI::IsMember({"easy", "moderate", "difficult"}));
  gen->add_option("--split", gen_split, "train, val, test or holdout (first half val, rest test)")
      ->check(CLI::IsMember({"train", "val", "test", "holdout"}));
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--variants", gen_variants, "variants per image (default 12 for train, 1 otherwise)");
  gen->add_option("--threads", gen_threads, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  // train
  CommonOptions train_opts;
  std::string train_data, train_out, train_split = "train";
  std::optional<std::uint64_t> train_seed;
  bool train_resume = false;
  auto* tr = app.add_subcommand("train", "train a model on a generated dataset");
  add_common(tr, train_opts);
  tr->add_option("--data", train_data, "dataset root")->required();
  tr->add_option("--split", train_split, "split to train on")->capture_default_str();
  tr->add_option("--out", train_out, "run directory (log, checkpoints, config echo)")->required();
  tr->add_option("--seed", train_seed, "initialization and batch seed");
  tr->add_flag("--resume", train_resume, "continue from <out>/model.meps and <out>/optim.meps");

  // eval
  CommonOptions eval_opts;
  std::string eval_data, eval_split = "test", eval_ckpt, eval_out;
  bool eval_identity = false;
  auto* ev = app.add_subcommand("eval", "score restorations of a split with PSNR and SSIM");
  add_common(ev, eval_opts);
  ev->add_option("--data", eval_data, "dataset root")->required();
  ev->add_option("--split", eval_split, "split to evaluate")->capture_default_str();
  auto* ev_ckpt = ev->add_option("--checkpoint", eval_ckpt, "model checkpoint")->check(CLI::ExistingFile);
  auto* ev_id = ev->add_flag("--identity", eval_identity, "score the distorted inputs unchanged");
  ev_ckpt->excludes(ev_id);
  ev->add_option("--out", eval_out, "directory for report.json and config.json")->required();

  // restore
  CommonOptions restore_opts;
  std::string restore_ckpt, restore_input, restore_out;
  auto* rs = app.add_subcommand("restore", "restore one image or a directory of PNGs");
  add_common(rs, restore_opts);
  rs->add_option("--checkpoint", restore_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  rs->add_option("--input", restore_input, "PNG file or directory")->required()->check(CLI::ExistingPath);
  rs->add_option("--out", restore_out, "output directory")->required();

  // inspect
  auto* insp = app.add_subcommand("inspect", "diagnostics");
  insp->require_subcommand(1);

  CommonOptions gc_opts;
  std::optional<std::uint64_t> gc_seed;
  std::size_t gc_side = 8;
  double gc_eps = 1e-5, gc_tol = 1e-6;
  auto* gc = insp->add_subcommand("grad-check", "whole-model finite-difference gradient audit in 64-bit");
  add_common(gc, gc_opts, "desk-tiny");
  gc->add_option("--seed", gc_seed, "parameter and data seed");
  gc->add_option("--side", gc_side, "input side in pixels")->capture_default_str();
  gc->add_option("--eps", gc_eps, "central difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "maximum accepted relative error")->capture_default_str();

  CommonOptions pc_opts;
  auto* pc = insp->add_subcommand("param-count", "parameter census, configured N against N=1");
  add_common(pc, pc_opts);

  CommonOptions ft_opts;
  std::string ft_ckpt, ft_input, ft_out;
  std::optional<std::uint64_t> ft_seed;
  auto* ft = insp->add_subcommand("features", "write per-expert mean activation maps");
  add_common(ft, ft_opts);
  ft->add_option("--checkpoint", ft_ckpt, "model checkpoint (fresh initialization when omitted)")
      ->check(CLI::ExistingFile);
  ft->add_option("--input", ft_input, "input PNG")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "output directory")->required();
  ft->add_option("--seed", ft_seed, "initialization seed when no checkpoint is given");

  std::size_t sp_side = 256, sp_lo = 4, sp_hi = 64;
  std::uint64_t sp_seed = 0;
  auto* sp = insp->add_subcommand("spectrum", "radial power-spectrum slope of a pink-noise field");
  sp->add_option("--side", sp_side, "field side")->capture_default_str()->check(CLI::Range(8, 4096));
  sp->add_option("--seed", sp_seed, "field seed")->capture_default_str();
  sp->add_option("--f-lo", sp_lo, "lowest radial frequency in the fit")->capture_default_str();
  sp->add_option("--f-hi", sp_hi, "highest radial frequency in the fit")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve(gen_opts);
      if (!gen_level.empty()) cfg.generate.level = level_from_name(gen_level);
      if (!gen_split.empty()) cfg.generate.split = gen_split;
      if (gen_seed) cfg.generate.seed = *gen_seed;
      if (gen_variants) cfg.generate.variants = *gen_variants;
      GenerateConfig g;
      g.clean_dir = gen_clean;
      g.out_dir = gen_out;
      g.level = cfg.generate.level;
      g.seed = cfg.generate.seed;
      g.split = cfg.generate.split;
      g.variants = cfg.generate.variants;
      g.threads = gen_threads;
      const GenerateReport report = generate_dataset(g);
      for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      write_text(fs::path(gen_out) / ("config_" + cfg.generate.split + ".json"), cli::run_config_to_json(cfg));
      std::printf("sources=%zu images=%zu warnings=%zu level=%s seed=%llu\n", report.sources,
                  report.images_written, report.warnings.size(), std::string(level_name(g.level)).c_str(),
                  static_cast<unsigned long long>(g.seed));
    } else if (tr->parsed()) {
      RunConfig cfg = resolve(train_opts);
      if (train_seed) cfg.train.seed = *train_seed;
      const LoadedSplit split = load_split(train_data, train_split);
      for (const auto& s : split.skipped) std::fprintf(stderr, "warning: skipping %s\n", s.c_str());
      if (split.pairs.empty()) throw std::runtime_error("split '" + train_split + "' has no readable images");
      fs::create_directories(train_out);
      write_text(fs::path(train_out) / "config.json", cli::run_config_to_json(cfg));
      MepsNet<float> model(cfg.model);
      init_parameters(model, cfg.train.seed);
      const TrainResult result = train(model, split.pairs, cfg.train, train_out, train_resume);
      const auto& l = result.losses;
      const std::size_t window = std::min<std::size_t>(100, l.size());
      std::printf("iters=%zu..%zu images=%zu params=%zu\n", result.first_iter, result.first_iter + l.size(),
                  split.pairs.size(), count_parameters(model).total);
      if (!l.empty()) {
        std::printf("first%zu_mean_loss=%.6g last%zu_mean_loss=%.6g\n", window, mean_of(l, 0, window), window,
                    mean_of(l, l.size() - window, l.size()));
      }
    } else if (ev->parsed()) {
      if (eval_ckpt.empty() && !eval_identity) {
        std::fprintf(stderr, "eval: pass --checkpoint or --identity\n");
        return 2;
      }
      RunConfig cfg = resolve(eval_opts);
      std::optional<MepsNet<float>> model;
      Restorer restore = identity_restorer();
      if (!eval_ckpt.empty()) {
        model.emplace(load_model<float>(eval_ckpt));
        cfg.model = model->config();
        restore = model_restorer(*model);
      }
      const EvalReport report = evaluate_dataset(restore, eval_data, eval_split);
      write_text(fs::path(eval_out) / "report.json", report_to_json(report));
      write_text(fs::path(eval_out) / "config.json", cli::run_config_to_json(cfg));
      for (const auto& s : report.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
      std::printf("split=%s n=%zu psnr=%.4f ssim=%.4f baseline_psnr=%.4f baseline_ssim=%.4f skipped=%zu\n",
                  report.split.c_str(), report.per_image.size(), report.mean_psnr, report.mean_ssim,
                  report.baseline_psnr, report.baseline_ssim, report.skipped.size());
    } else if (rs->parsed()) {
      RunConfig cfg = resolve(restore_opts);
      const MepsNet<float> model = load_model<float>(restore_ckpt);
      cfg.model = model.config();
      const Restorer restore = model_restorer(model);
      fs::create_directories(restore_out);
      const auto inputs = list_inputs(restore_input);
      if (inputs.empty()) throw std::runtime_error("no PNG images in " + restore_input);
      for (const auto& in : inputs) {
        write_png(fs::path(restore_out) / in.filename(), restore(read_png(in)));
        std::printf("%s\n", (fs::path(restore_out) / in.filename()).string().c_str());
      }
      write_text(fs::path(restore_out) / "config.json", cli::run_config_to_json(cfg));
    } else if (gc->parsed()) {
      RunConfig cfg = resolve(gc_opts);
      const std::uint64_t seed = gc_seed.value_or(cfg.train.seed);
      const GradAuditReport report = audit_gradients(cfg.model, seed, gc_side, gc_eps);
      std::printf("%-40s %8s %14s %14s\n", "parameter", "size", "rel_error", "grad_norm");
      for (const auto& e : report.entries) {
        std::printf("%-40s %8zu %14.3e %14.3e\n", e.name.c_str(), e.size, e.relative_error, e.grad_norm);
      }
      const bool ok = report.max_relative_error < gc_tol;
      std::printf("max_relative_error=%.3e tolerance=%.1e seconds=%.2f %s\n", report.max_relative_error, gc_tol,
                  report.seconds, ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    } else if (pc->parsed()) {
      const RunConfig cfg = resolve(pc_opts);
      MepsNetConfig one = cfg.model;
      one.experts = 1;
      MepsNetConfig unshared = one;
      unshared.share_parameters = false;
      // N=1 must still satisfy the fusion divisibility rule
      if (one.fused_channels() % one.fusion_reduction != 0) one.fusion_reduction = 1, unshared.fusion_reduction = 1;
      const auto c_n = count_parameters(cfg.model);
      const auto c_1 = count_parameters(one);
      const auto c_u = count_parameters(unshared);
      std::printf("model %s\n", config_to_json(cfg.model).c_str());
      std::printf("%-22s %12s %14s %12s %12s\n", "variant", "templates", "coefficients", "unshared", "total");
      const std::string label = "N=" + std::to_string(cfg.model.experts) + (cfg.model.share_parameters ? "" : " no-share");
      print_census_row(label.c_str(), c_n);
      print_census_row(cfg.model.share_parameters ? "N=1" : "N=1 no-share", c_1);
      print_census_row("N=1 no-share", c_u);
      std::printf("ratio_total_N%zu_over_N1=%.4f\n", cfg.model.experts, double(c_n.total) / double(c_1.total));
      if (cfg.model.share_parameters) {
        std::printf("ratio_noshare_over_shared_N1=%.4f\n", double(c_u.total) / double(c_1.total));
      }
    } else if (ft->parsed()) {
      RunConfig cfg = resolve(ft_opts);
      MepsNet<float> model = ft_ckpt.empty() ? MepsNet<float>(cfg.model) : load_model<float>(ft_ckpt);
      if (ft_ckpt.empty()) init_parameters(model, ft_seed.value_or(cfg.train.seed));
      cfg.model = model.config();
      for (const auto& p : dump_expert_features(model, read_png(ft_input), ft_out)) {
        std::printf("%s\n", p.string().c_str());
      }
      write_text(fs::path(ft_out) / "config.json", cli::run_config_to_json(cfg));
    } else if (sp->parsed()) {
      if (sp_lo < 1 || sp_hi <= sp_lo || sp_hi > sp_side / 2) {
        std::fprintf(stderr, "spectrum: need 1 <= f-lo < f-hi <= side/2\n");
        return 2;
      }
      Rng rng(sp_seed);
      const auto field = pink_noise_field(sp_side, sp_side, rng);
      const double slope = radial_spectrum_slope(field, sp_side, sp_side, sp_lo, sp_hi);
      std::printf("side=%zu seed=%llu band=[%zu,%zu] slope=%.4f expected=-2.0\n", sp_side,
                  static_cast<unsigned long long>(sp_seed), sp_lo, sp_hi, slope);
    }
  } catch (const cli::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

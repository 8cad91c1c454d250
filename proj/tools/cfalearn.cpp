// cfalearn: train, evaluate and inspect jointly learned colour filter arrays.

#include <malloc.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "cfa/config.hpp"
#include "cfa/errors.hpp"
#include "cfa/evaluator.hpp"
#include "cfa/patterns.hpp"
#include "cfa/trainer.hpp"

namespace fs = std::filesystem;
using namespace cfa;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;
  unsigned threads = 0;
  std::string out_dir;
};

void add_config_options(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "Config file of 'key = value' lines");
  cmd->add_option("--set", opt.overrides, "Override a config key: key=value (repeatable)");
  cmd->add_option("--seed", opt.seed, "Random seed (overrides the config)");
  cmd->add_option("--threads", opt.threads, "Maximum worker threads");
}

RunConfig resolve_config(const CommonOptions& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig() : RunConfig::load(opt.config_path);
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  if (opt.seed >= 0) cfg.set("seed", std::to_string(opt.seed));
  if (opt.threads > 0) cfg.set("threads", std::to_string(opt.threads));
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
}

fs::path prepare_out_dir(const std::string& dir, const RunConfig& cfg) {
  if (dir.empty()) throw ContractError("--out is required");
  fs::create_directories(dir);
  write_text(fs::path(dir) / "resolved.cfg", cfg.to_text());
  std::cerr << "resolved config:\n" << cfg.to_text();
  return dir;
}

struct Dataset {
  ImageSet set;
  DatasetSplit split;
};

Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  d.set = load_image_set(cfg);
  d.split = split_dataset(d.set.ids, static_cast<std::size_t>(cfg.get_int("n_test")),
                          static_cast<std::size_t>(cfg.get_int("n_val")),
                          static_cast<std::uint64_t>(cfg.get_int("split_seed")));
  return d;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ContractError(std::string("missing ") + what);
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

Trainer::Observer progress_printer() {
  return [](const LogEntry& e) {
    const auto c = e.pattern.census();
    std::fprintf(stderr, "iter %lld  train %.6g  val %.6g  entropy %.4f  R/G/B/W %d/%d/%d/%d\n",
                 static_cast<long long>(e.iteration), e.train_loss, e.val_loss, e.mean_entropy, c[0], c[1], c[2], c[3]);
  };
}

int run_training(const CommonOptions& opt, const std::string& resume, const std::string& pattern_path, bool joint,
                 long long stop_at) {
  const RunConfig cfg = resolve_config(opt);
  TrainConfig tc = cfg.train_config();
  const fs::path out = prepare_out_dir(opt.out_dir, cfg);
  tc.checkpoint_path = out / "checkpoint.bin";

  const Dataset d = load_dataset(cfg);
  write_split_manifest(d.split, out / "split.txt");
  const TrainData data{d.set.select(d.split.train), d.set.select(d.split.val)};

  TrainState initial;
  if (!resume.empty()) {
    require_file(resume, "checkpoint");
    initial = load_checkpoint(resume);
    if ((initial.mode == TrainMode::joint) != joint) throw ContractError("checkpoint was written by the other training mode");
  } else if (joint) {
    initial = initial_joint_state(tc);
  } else {
    require_file(pattern_path, "pattern file");
    initial = initial_fixed_state(tc, read_pattern(pattern_path));
  }

  Trainer trainer(tc, data, std::move(initial));
  trainer.set_observer(progress_printer());
  trainer.run_until(stop_at > 0 ? stop_at : tc.total_iters());
  const auto& st = trainer.state();
  save_checkpoint(st, tc.checkpoint_path);
  write_text(out / "train_log.txt", st.log.to_text());
  write_pattern(st.pattern(), out / "pattern.cfa");
  export_pattern_image(st.pattern(), out / "pattern.png", 16);
  if (joint) {
    fs::create_directories(out / "snapshots");
    for (const auto& e : st.log.entries) {
      std::ostringstream name;
      name << "iter_" << std::setw(8) << std::setfill('0') << e.iteration << ".cfa";
      write_pattern(e.pattern, out / "snapshots" / name.str());
    }
  }
  std::cout << "final validation MSE " << st.log.entries.back().val_loss << "\n" << format_pattern(st.pattern());
  return 0;
}

int run_eval(const CommonOptions& opt, const std::vector<std::string>& checkpoints, const std::string& pattern_path,
             bool with_bilinear, const std::string& label) {
  const RunConfig cfg = resolve_config(opt);
  if (checkpoints.empty() && !with_bilinear) throw ContractError("eval needs --checkpoint (or --bilinear)");
  std::vector<TrainState> states;
  for (const auto& c : checkpoints) {
    require_file(c, "checkpoint");
    states.push_back(load_checkpoint(c));
  }
  HardPattern pattern;
  if (!pattern_path.empty()) {
    require_file(pattern_path, "pattern file");
    pattern = read_pattern(pattern_path);
  } else if (!states.empty()) {
    pattern = states.front().pattern();
  } else {
    throw ContractError("eval needs --pattern when no checkpoint is given");
  }
  const auto sigmas = cfg.get_list("noise_levels");
  if (!states.empty() && states.size() != 1 && states.size() != sigmas.size())
    throw ContractError("give one checkpoint per noise level or a single shared one");
  const fs::path out = prepare_out_dir(opt.out_dir, cfg);
  const Dataset d = load_dataset(cfg);
  const auto test = d.set.select(d.split.test);

  EvalOptions eo;
  eo.patch_size = static_cast<std::size_t>(cfg.get_int("patch_size"));
  eo.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  eo.threads = static_cast<unsigned>(cfg.get_int("threads"));
  EvalReport report;
  if (!states.empty()) {
    std::vector<Reconstructor> recon;
    for (const auto& st : states)
      recon.push_back([&st, &pattern](const Tensor& s) { return reconstruct_image(s, pattern, st.params); });
    evaluate(report, label, pattern, recon, test, sigmas, eo);
  }
  if (with_bilinear)
    evaluate(report, "bilinear", pattern, {[&pattern](const Tensor& s) { return bilinear_demosaick(s, pattern); }},
             test, sigmas, eo);
  write_text(out / "report.txt", report.to_table());
  write_text(out / "report.csv", report.to_csv());
  std::cout << report.to_table();
  return 0;
}

int run_demosaick(const std::string& pattern_path, const std::string& input, const std::string& output,
                  const std::string& checkpoint, double noise, long long seed) {
  require_file(input, "input image");
  HardPattern pattern;
  std::optional<TrainState> state;
  if (!checkpoint.empty()) {
    require_file(checkpoint, "checkpoint");
    state = load_checkpoint(checkpoint);
  }
  if (!pattern_path.empty()) {
    require_file(pattern_path, "pattern file");
    pattern = read_pattern(pattern_path);
  } else if (state) {
    pattern = state->pattern();
  } else {
    throw ContractError("demosaick needs --pattern or --checkpoint");
  }
  const RgbImage img = load_image(input);
  const Tensor mosaic = simulate_capture(img, pattern, noise, static_cast<std::uint64_t>(std::max(0LL, seed)));
  const Tensor rgb = state ? reconstruct_image(mosaic, pattern, state->params) : bilinear_demosaick(mosaic, pattern);
  RgbImage result{img.height, img.width, rgb.vector()};
  save_image(result, output);
  std::cout << "PSNR " << psnr(img.tensor(), rgb) << " dB\n";
  return 0;
}

int run_export(const std::string& type, int period, int rate, const std::string& checkpoint, const std::string& out,
               const std::string& image, int scale) {
  HardPattern pattern;
  if (type == "bayer") {
    pattern = bayer_pattern(period);
  } else if (type == "cfz") {
    pattern = cfz_pattern(period, rate);
  } else if (type == "learned") {
    require_file(checkpoint, "checkpoint");
    pattern = load_checkpoint(checkpoint).pattern();
  } else {
    throw ContractError("unknown pattern type '" + type + "' (bayer, cfz, learned)");
  }
  if (out.empty() && image.empty()) throw ContractError("export-pattern needs --out and/or --image");
  if (!out.empty()) write_pattern(pattern, out);
  if (!image.empty()) export_pattern_image(pattern, image, scale);
  const auto c = pattern.census();
  std::cout << format_pattern(pattern) << "census R/G/B/W " << c[0] << '/' << c[1] << '/' << c[2] << '/' << c[3]
            << '\n';
  return 0;
}

int run_inspect(const std::string& checkpoint) {
  require_file(checkpoint, "checkpoint");
  const TrainState st = load_checkpoint(checkpoint);
  const auto& s = st.params.shape;
  std::cout << "mode: " << (st.mode == TrainMode::joint ? "joint" : "fixed") << '\n'
            << "iteration: " << st.iteration << '\n'
            << "seed: " << st.seed << '\n'
            << "network: P=" << s.period << " K=" << s.proposals << " F=" << s.features
            << (s.normalize_gates ? " (normalized gates)" : "") << '\n';
  const auto pattern = st.pattern();
  const auto c = pattern.census();
  std::cout << "pattern census R/G/B/W: " << c[0] << '/' << c[1] << '/' << c[2] << '/' << c[3] << '\n'
            << format_pattern(pattern);
  if (!st.log.entries.empty()) {
    const auto& e = st.log.entries.back();
    std::cout << "last validation: iter " << e.iteration << " val_loss " << e.val_loss << " mean_entropy "
              << e.mean_entropy << '\n';
  }
  std::cout << "config:\n" << st.config_text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees multi-megabyte gradient buffers every step;
  // keep them on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Jointly learned colour filter arrays and demosaicking networks"};
  app.require_subcommand(1);

  CommonOptions joint_opt, fixed_opt, eval_opt;
  std::string resume, fixed_pattern, eval_pattern, label = "network";
  long long stop_at = 0;
  std::vector<std::string> checkpoints;
  bool with_bilinear = false;

  auto* joint = app.add_subcommand("train-joint", "Learn the sensor pattern and network together");
  add_config_options(joint, joint_opt);
  joint->add_option("--out", joint_opt.out_dir, "Output directory")->required();
  joint->add_option("--resume", resume, "Continue from a checkpoint");
  joint->add_option("--stop-at", stop_at, "Stop (and checkpoint) after this many iterations");

  auto* fixed = app.add_subcommand("train-fixed", "Train a network for a fixed pattern");
  add_config_options(fixed, fixed_opt);
  fixed->add_option("--pattern", fixed_pattern, "Pattern file (CFA v1)");
  fixed->add_option("--out", fixed_opt.out_dir, "Output directory")->required();
  fixed->add_option("--resume", resume, "Continue from a checkpoint");
  fixed->add_option("--stop-at", stop_at, "Stop (and checkpoint) after this many iterations");

  auto* eval = app.add_subcommand("eval", "Evaluate reconstruction PSNR on the test split");
  add_config_options(eval, eval_opt);
  eval->add_option("--checkpoint", checkpoints, "Trained network (one per noise level, or one shared)");
  eval->add_option("--pattern", eval_pattern, "Pattern file; defaults to the checkpoint's pattern");
  eval->add_flag("--bilinear", with_bilinear, "Also evaluate the bilinear reference");
  eval->add_option("--label", label, "Row label for the network results");
  eval->add_option("--out", eval_opt.out_dir, "Output directory")->required();

  std::string dm_pattern, dm_input, dm_output, dm_checkpoint;
  double dm_noise = 0.0;
  long long dm_seed = 0;
  auto* dm = app.add_subcommand("demosaick", "Simulate a capture of an image and reconstruct it");
  dm->add_option("--pattern", dm_pattern, "Pattern file; defaults to the checkpoint's pattern");
  dm->add_option("--input", dm_input, "Input RGB image (PNG or PPM)")->required();
  dm->add_option("--output", dm_output, "Output image (PNG or PPM)")->required();
  dm->add_option("--checkpoint", dm_checkpoint, "Network checkpoint; bilinear reference if omitted");
  dm->add_option("--noise", dm_noise, "Noise standard deviation");
  dm->add_option("--seed", dm_seed, "Noise seed");

  std::string ex_type, ex_checkpoint, ex_out, ex_image;
  int ex_period = 8, ex_rate = 4, ex_scale = 16;
  auto* ex = app.add_subcommand("export-pattern", "Write a baseline or learned pattern");
  ex->add_option("--type", ex_type, "bayer, cfz or learned")->required();
  ex->add_option("--period", ex_period, "Pattern period P");
  ex->add_option("--rate", ex_rate, "CFZ colour sampling rate");
  ex->add_option("--checkpoint", ex_checkpoint, "Checkpoint holding a learned pattern");
  ex->add_option("--out", ex_out, "Pattern file to write");
  ex->add_option("--image", ex_image, "Raster rendering to write (PNG or PPM)");
  ex->add_option("--scale", ex_scale, "Raster pixels per pattern cell");

  std::string in_checkpoint;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Summarise a checkpoint");
  inspect->add_option("--checkpoint", in_checkpoint, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return e.get_exit_code() == 0 ? code : 2;
  }

  try {
    if (*joint) return run_training(joint_opt, resume, "", true, stop_at);
    if (*fixed) return run_training(fixed_opt, resume, fixed_pattern, false, stop_at);
    if (*eval) return run_eval(eval_opt, checkpoints, eval_pattern, with_bilinear, label);
    if (*dm) return run_demosaick(dm_pattern, dm_input, dm_output, dm_checkpoint, dm_noise, dm_seed);
    if (*ex) return run_export(ex_type, ex_period, ex_rate, ex_checkpoint, ex_out, ex_image, ex_scale);
    if (*inspect) return run_inspect(in_checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

// despeckle: command-line driver for speckle simulation, patch datasets,
// network training, inference and filter evaluation.
//
// Exit codes: 0 success, 1 usage/config error, 2 I/O or format error,
// 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "despeckle/despeckle.hpp"

namespace fs = std::filesystem;
using namespace despeckle;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

void require_readable(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " '" + p.string() + "' is not a readable file");
}

void require_writable_dir(const fs::path& p) {
  const fs::path dir = p.parent_path().empty() ? fs::path(".") : p.parent_path();
  if (!fs::is_directory(dir)) throw IoError("output directory '" + dir.string() + "' does not exist");
}

ImageFormat output_format(const std::string& flag, const fs::path& path) {
  return flag.empty() ? format_from_extension(path) : parse_image_format(flag);
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".pnm" || ext == ".ppm" || ext == ".img";
}

// ------------------------------------------------------------------ simulate

struct SimulateArgs {
  std::string input, noisy, speckle, format;
  unsigned looks = 1;
  std::uint64_t seed = 0;
};

int run_simulate(const SimulateArgs& a) {
  require_readable(a.input, "input");
  require_writable_dir(a.noisy);
  if (!a.speckle.empty()) require_writable_dir(a.speckle);
  const Image2D clean = read_image(a.input);
  Rng rng(a.seed);
  const Image2D n = sample_speckle(clean.rows(), clean.cols(), Looks(a.looks), rng);
  write_image(corrupt(clean, n), a.noisy, output_format(a.format, a.noisy));
  if (!a.speckle.empty()) write_image(n, a.speckle, output_format(a.format, a.speckle));
  const auto mv = mean_variance(n.data());
  std::cout << "speckle_mean = " << format_number(mv.mean) << '\n'
            << "speckle_variance = " << format_number(mv.variance) << '\n';
  return kOk;
}

// ------------------------------------------------------------------- dataset

struct DatasetArgs {
  std::string corpus, out;
  std::size_t count = 0, patch = 65;
  unsigned looks = 1;
  std::uint64_t seed = 0;
};

std::vector<fs::path> list_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

int run_dataset(const DatasetArgs& a) {
  require_writable_dir(a.out);
  const auto files = list_corpus(a.corpus);
  std::vector<Image2D> images;
  for (const auto& f : files) images.push_back(normalize_unit(read_image(f)).image);
  if (images.empty()) throw EmptyCorpusError("corpus '" + a.corpus + "' contains no .pgm/.pnm/.ppm/.img files");

  Rng rng(a.seed);
  PatchSampler sampler(images, a.patch, Looks(a.looks), rng,
                       [&](std::string_view w) { std::cerr << "warning: " << w << '\n'; });
  DatasetWriter writer(a.count, a.patch, Looks(a.looks), a.seed);
  std::vector<std::size_t> hist(images.size(), 0);
  for (std::size_t i = 0; i < a.count; ++i) {
    auto [patch, source] = sampler.next();
    writer.add(patch);
    ++hist[source];
  }
  writer.save(a.out);
  std::cout << "patches = " << a.count << '\n' << "patch_size = " << a.patch << '\n';
  for (std::size_t i = 0; i < files.size(); ++i)
    std::cout << "source " << files[i].filename().string() << " = " << hist[i] << '\n';
  return kOk;
}

// --------------------------------------------------------------------- train

struct TrainArgs {
  std::string data, val, config, out, log, resume;
  std::map<std::string, std::optional<std::string>> overrides;
};

int run_train(const TrainArgs& a) {
  require_readable(a.data, "dataset");
  if (!a.val.empty()) require_readable(a.val, "validation set");
  if (!a.config.empty()) require_readable(a.config, "config");
  if (!a.resume.empty()) require_readable(a.resume, "resume checkpoint");
  require_writable_dir(a.out);
  if (!a.log.empty()) require_writable_dir(a.log);

  KeyValues kv;
  if (!a.config.empty()) {
    const auto bytes = io::read_file(a.config);
    kv = parse_key_values(std::string(bytes.begin(), bytes.end()));
  }
  for (const auto& [k, v] : a.overrides)
    if (v) kv[k] = *v;
  TrainConfig cfg;
  ArchConfig arch;
  apply_config(kv, cfg, arch);
  cfg.validate();

  const PatchDataset data = load_dataset(a.data);
  const PatchDataset val = a.val.empty() ? PatchDataset{} : load_dataset(a.val);
  cfg.looks = data.looks.value();

  TrainState init;
  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    if (!ck.optimizer) throw FormatError("resume checkpoint has no optimizer block", 0);
    init = TrainState{std::move(ck.params), std::move(ck.optimizer->opt), ck.optimizer->step};
  } else {
    Rng rng(derive_seed(cfg.seed, 0x1417));
    init = fresh_state(arch.build(data, rng));
  }

  auto write_log = [&](const TrainHistory& h) {
    if (!a.log.empty()) io::write_text_atomic(a.log, format_history(h));
  };
  try {
    const TrainResult res = train(std::move(init), data, val, cfg);
    save_checkpoint(res.state.params, a.out, OptimizerSnapshot{res.state.opt, res.state.step});
    write_log(res.history);
    if (!res.history.records.empty()) {
      const auto& first = res.history.records.front();
      const auto& last = res.history.records.back();
      std::cout << "steps = " << res.state.step << '\n'
                << "val_total_start = " << format_number(first.val_total) << '\n'
                << "val_total_end = " << format_number(last.val_total) << '\n';
    }
    if (res.stopped_early) std::cout << "stopped_early = 1\n";
  } catch (const TrainingAborted& e) {
    const fs::path partial = a.out + ".aborted";
    save_checkpoint(e.state().params, partial, OptimizerSnapshot{e.state().opt, e.state().step});
    if (!a.log.empty()) io::write_text_atomic(a.log + ".aborted", format_history(e.history()));
    std::cerr << "partial checkpoint written to " << partial.string() << '\n';
    throw;
  }
  return kOk;
}

// ----------------------------------------------------------------- despeckle

struct DespeckleArgs {
  std::string checkpoint, input, output, ratio, format;
  std::size_t tile = 256, overlap = 16;
};

int run_despeckle(const DespeckleArgs& a) {
  require_readable(a.checkpoint, "checkpoint");
  require_readable(a.input, "input");
  require_writable_dir(a.output);
  if (!a.ratio.empty()) require_writable_dir(a.ratio);
  const NetworkParams net = load_checkpoint(a.checkpoint).params;
  const Image2D noisy = read_image(a.input);
  const Image2D filtered = despeckle_image(net, noisy, a.tile, a.overlap);
  write_image(filtered, a.output, output_format(a.format, a.output));
  const Image2D ratio = ratio_image(noisy, filtered);
  if (!a.ratio.empty()) write_image(ratio, a.ratio, output_format(a.format, a.ratio));
  std::cout << "ratio_mean = " << format_number(mean_variance(ratio.data()).mean) << '\n';
  return kOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string noisy, filtered, clean, report;
  std::vector<std::string> masks;
  unsigned looks = 1;
  std::uint64_t seed = 0;
  std::size_t levels = kDefaultGlcmLevels;
  double threshold = 1e-6;
};

int run_evaluate(const EvaluateArgs& a) {
  require_readable(a.noisy, "noisy image");
  require_readable(a.filtered, "filtered image");
  if (!a.clean.empty()) require_readable(a.clean, "clean image");
  for (const auto& m : a.masks) require_readable(m, "mask");
  if (!a.report.empty()) require_writable_dir(a.report);

  const Image2D noisy = read_image(a.noisy);
  const Image2D filtered = read_image(a.filtered);
  require_same_shape(noisy, filtered, "evaluate");
  std::optional<Image2D> clean;
  if (!a.clean.empty()) {
    clean = read_image(a.clean);
    require_same_shape(noisy, *clean, "evaluate");
  }

  std::vector<RegionMask> masks;
  for (const auto& path : a.masks) {
    const Image2D m = read_image(path);
    require_same_shape(noisy, m, "evaluate mask");
    RegionMask rm(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) rm.set(i, m[i] > 0.0);
    masks.push_back(std::move(rm));
  }
  if (masks.empty() && clean) masks = homogeneous_masks(*clean, a.threshold);
  if (masks.empty())
    throw ConfigError(clean ? "no homogeneous region of at least 100 pixels found in the clean image; "
                              "supply masks with --mask"
                            : "no homogeneous regions: pass --clean to derive them or --mask to supply them");

  Rng rng(a.seed);
  MIndexOptions opt;
  opt.levels = a.levels;
  MetricReport rep = m_index(noisy, filtered, Looks(a.looks), masks, rng, opt);
  if (clean) rep.psnr = psnr(filtered, *clean);
  const std::string text = format_report(rep);
  if (!a.report.empty()) io::write_text_atomic(a.report, text);
  std::cout << text;
  return kOk;
}

// --------------------------------------------------------------------- scene

struct SceneArgs {
  std::string out_dir, format = "f32raw";
  std::size_t rows = 256, cols = 256, count = 1;
  std::uint64_t seed = 0;
};

int run_scene(const SceneArgs& a) {
  if (!fs::is_directory(a.out_dir)) throw IoError("output directory '" + a.out_dir + "' does not exist");
  const ImageFormat fmt = parse_image_format(a.format);
  const char* ext = fmt == ImageFormat::f32raw ? ".img" : ".pgm";
  for (std::size_t i = 0; i < a.count; ++i) {
    Rng rng(derive_seed(a.seed, i));
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu%s", i, ext);
    write_image(synthetic_scene(a.rows, a.cols, rng), fs::path(a.out_dir) / name, fmt);
  }
  std::cout << "scenes = " << a.count << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAR despeckling lab: speckle simulation, CNN training, inference and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Multiply a clean image by simulated Gamma speckle");
  c_sim->add_option("-i,--input", sim.input, "Clean input image (PGM or DSPKIMG1)")->required();
  c_sim->add_option("-o,--noisy", sim.noisy, "Noisy output image")->required();
  c_sim->add_option("--speckle", sim.speckle, "Optional speckle field output");
  c_sim->add_option("-L,--looks", sim.looks, "Number of looks (integer >= 1)")
      ->capture_default_str()->check(CLI::PositiveNumber);
  c_sim->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  c_sim->add_option("--format", sim.format, "Output format: pgm8, pgm16 or f32raw (default: from extension)");

  DatasetArgs ds;
  auto* c_ds = app.add_subcommand("dataset", "Cut random patches from a corpus and speckle them (DSPKDAT1)");
  c_ds->add_option("--corpus", ds.corpus, "Directory of clean .pgm/.pnm/.ppm/.img images")->required();
  c_ds->add_option("-n,--count", ds.count, "Number of patches")->required();
  c_ds->add_option("-p,--patch", ds.patch, "Patch side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  c_ds->add_option("-L,--looks", ds.looks, "Number of looks (integer >= 1)")
      ->capture_default_str()->check(CLI::PositiveNumber);
  c_ds->add_option("--seed", ds.seed, "Random seed")->capture_default_str();
  c_ds->add_option("-o,--out", ds.out, "Output dataset file")->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand(
      "train",
      "Train the network with SGD + momentum.\nDefaults: lambda 1, eta 2e-6, momentum 0.9, batch_size 64, "
      "epochs 1, seed 0, depth 10, features 64, kernel 3, objective composite, output_init data_mean, "
      "output_kernel_scale 0.1, floor_eps 1e-7, div_eps 1e-6, val_every 0 (once per epoch), patience 0 (off).\n"
      "Precedence: flag > config file > default.");
  c_tr->add_option("-d,--data", tr.data, "Training dataset (DSPKDAT1)")->required();
  c_tr->add_option("-v,--val", tr.val, "Validation dataset (DSPKDAT1); monitored only");
  c_tr->add_option("-c,--config", tr.config, "key = value config file");
  c_tr->add_option("-o,--out", tr.out, "Checkpoint output (DSPKNET1 with optimizer block)")->required();
  c_tr->add_option("--log", tr.log, "Training history log");
  c_tr->add_option("--resume", tr.resume, "Continue from a checkpoint that carries an optimizer block");
  for (const char* key : {"lambda", "eta", "momentum", "batch_size", "epochs", "seed", "val_every", "patience",
                          "objective", "depth", "features", "kernel", "output_init", "output_kernel_scale",
                          "floor_eps", "div_eps"}) {
    std::string flag = std::string("--") + key;
    std::replace(flag.begin() + 2, flag.end(), '_', '-');
    c_tr->add_option(flag, tr.overrides[key], std::string("Override config key '") + key + "'");
  }

  DespeckleArgs dp;
  auto* c_dp = app.add_subcommand("despeckle", "Filter an image with a trained checkpoint");
  c_dp->add_option("-m,--checkpoint", dp.checkpoint, "Network checkpoint (DSPKNET1)")->required();
  c_dp->add_option("-i,--input", dp.input, "Noisy input image")->required();
  c_dp->add_option("-o,--output", dp.output, "Filtered output image")->required();
  c_dp->add_option("--ratio", dp.ratio, "Optional ratio image output (noisy / filtered)");
  c_dp->add_option("--tile", dp.tile, "Tile side for inference")->capture_default_str();
  c_dp->add_option("--overlap", dp.overlap, "Overlap between neighbouring tiles")->capture_default_str();
  c_dp->add_option("--format", dp.format, "Output format: pgm8, pgm16 or f32raw (default: from extension)");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Ratio-image quality report (ENL, GLCM homogeneity, M-index)");
  c_ev->add_option("--noisy", ev.noisy, "Noisy image")->required();
  c_ev->add_option("--filtered", ev.filtered, "Filtered image")->required();
  c_ev->add_option("--clean", ev.clean, "Clean image: enables PSNR and automatic homogeneous masks");
  c_ev->add_option("--mask", ev.masks, "Homogeneous-region mask image, nonzero = inside (repeatable)");
  c_ev->add_option("-L,--looks", ev.looks, "Number of looks of the noisy image")
      ->capture_default_str()->check(CLI::PositiveNumber);
  c_ev->add_option("--seed", ev.seed, "Seed for the reference speckle field")->capture_default_str();
  c_ev->add_option("--levels", ev.levels, "GLCM grey levels")->capture_default_str();
  c_ev->add_option("--threshold", ev.threshold, "Local-variance threshold for automatic masks")
      ->capture_default_str();
  c_ev->add_option("-r,--report", ev.report, "Report output (key = value)");

  SceneArgs sc;
  auto* c_sc = app.add_subcommand("scene", "Write synthetic piecewise-smooth clean scenes");
  c_sc->add_option("-o,--out-dir", sc.out_dir, "Output directory")->required();
  c_sc->add_option("-n,--count", sc.count, "Number of scenes")->capture_default_str();
  c_sc->add_option("--rows", sc.rows, "Rows")->capture_default_str()->check(CLI::PositiveNumber);
  c_sc->add_option("--cols", sc.cols, "Columns")->capture_default_str()->check(CLI::PositiveNumber);
  c_sc->add_option("--seed", sc.seed, "Random seed")->capture_default_str();
  c_sc->add_option("--format", sc.format, "pgm8, pgm16 or f32raw")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_ds->parsed()) return run_dataset(ds);
    if (c_tr->parsed()) return run_train(tr);
    if (c_dp->parsed()) return run_despeckle(dp);
    if (c_ev->parsed()) return run_evaluate(ev);
    if (c_sc->parsed()) return run_scene(sc);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const EmptyCorpusError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kUsage;
}

// SPDX-License-Identifier: Apache-2.0
//
// pbsr: command-line entry points for the dataset, training and evaluation
// pipeline plus the curation service.
//
// Exit codes: 0 success, 1 gradient check failure or unexpected error,
// 2 invalid arguments, configuration, paths or input data, 3 numeric failure.

#include <pthread.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "pbsr/dataset.hpp"
#include "pbsr/degradation.hpp"
#include "pbsr/errors.hpp"
#include "pbsr/eval.hpp"
#include "pbsr/fusion.hpp"
#include "pbsr/grad_suite.hpp"
#include "pbsr/image_io.hpp"
#include "pbsr/models.hpp"
#include "pbsr/param_set.hpp"
#include "pbsr/run_config.hpp"
#include "pbsr/service.hpp"
#include "pbsr/trainer.hpp"

namespace fs = std::filesystem;
using namespace pbsr;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

void write_text(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

DegradationConfig degradation_from(const std::string& config) {
  return config.empty() ? DegradationConfig{} : load_degradation_config(config);
}

Tensor crop_to_factor(const Tensor& hr, std::size_t factor) {
  const auto s = hr.shape();
  return crop(hr, 0, 0, s.h - s.h % factor, s.w - s.w % factor);
}

// ---- subcommands ------------------------------------------------------------

struct DegradeArgs {
  std::string manifest, out, config, split;
};

int run_degrade(const DegradeArgs& a) {
  const DatasetManifest m = DatasetManifest::load(a.manifest);
  const DegradationConfig cfg = degradation_from(a.config);
  fs::create_directories(a.out);
  std::size_t n = 0;
  for (const auto& s : m.samples()) {
    if (!a.split.empty() && s.split != a.split) continue;
    const Tensor hr = crop_to_factor(read_rgb(m.hr_file(s)), cfg.factor);
    write_rgb(fs::path(a.out) / (s.id + ".png"), degrade_sample(hr, cfg, s.id));
    ++n;
  }
  write_text(fs::path(a.out) / "degradation.ini", to_ini(cfg));
  std::cout << "degraded " << n << " samples into " << a.out << "\n";
  return 0;
}

struct EstimateArgs {
  std::string manifest;
  double threshold = 0.5;
  std::size_t window = kDefaultEstimateWindow;
  bool all = false;
};

int run_estimate(const EstimateArgs& a) {
  DatasetManifest m = DatasetManifest::load(a.manifest);
  std::size_t updated = 0, skipped = 0;
  for (const BlurSample& snapshot : std::vector<BlurSample>(m.samples())) {
    if (!a.all && snapshot.review_state != ReviewState::automatic) {
      ++skipped;
      continue;
    }
    BlurSample& s = *m.find(snapshot.id);
    write_mask(m.mask_file(s), estimate_blur_map(read_rgb(m.hr_file(s)), a.window, static_cast<float>(a.threshold)));
    s.review_state = ReviewState::automatic;
    ++updated;
  }
  m.save(a.manifest);
  std::cout << "estimated " << updated << " blur maps";
  if (skipped) std::cout << " (" << skipped << " reviewed samples kept; use --all to overwrite)";
  std::cout << "\n";
  return 0;
}

struct PartitionArgs {
  std::string manifest, out;
};

int run_partition(const PartitionArgs& a) {
  const DatasetManifest m = DatasetManifest::load(a.manifest);
  fs::create_directories(a.out);
  std::ostringstream rows;
  rows << "sample_id,split,blur_type,intensity,review_state,blur_fraction,size_category\n";
  std::map<std::string, std::size_t> counts{{"small", 0}, {"medium", 0}, {"large", 0}};
  for (const auto& s : m.samples()) {
    const double f = blur_area_fraction(read_mask(m.mask_file(s)));
    const std::string cat = to_string(size_category(f));
    ++counts[cat];
    rows << s.id << ',' << s.split << ',' << to_string(s.blur_type) << ',' << to_string(s.intensity) << ','
         << to_string(s.review_state) << ',' << fmt(f) << ',' << cat << '\n';
    std::cout << s.id << ' ' << fmt(f) << ' ' << cat << '\n';
  }
  write_text(fs::path(a.out) / "partition.csv", rows.str());

  std::map<std::string, GroupGradient> gradients;
  for (const auto& g : region_gradient_stats(m, Grouping::size)) gradients[g.group] = g;
  std::ostringstream stats;
  stats << "size_category,samples,blur_pixels,mean_blur_gradient\n";
  for (const char* cat : {"small", "medium", "large"}) {
    stats << cat << ',' << counts[cat] << ',';
    auto it = gradients.find(cat);
    if (it != gradients.end()) {
      stats << it->second.blur_pixels << ',' << fmt(it->second.mean_gradient) << '\n';
    } else {
      stats << "0,\n";
    }
  }
  write_text(fs::path(a.out) / "size_stats.csv", stats.str());
  return 0;
}

struct TrainArgs {
  std::string config, out;
};

int run_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config);
  if (rc.general_manifest.empty() || rc.blur_manifest.empty()) {
    throw ConfigError("[data] general_manifest and blur_manifest are required");
  }
  rc.dual.out_dir = a.out;
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.ini", to_ini(rc));

  const auto general = load_training_images(DatasetManifest::load(rc.general_manifest), rc.general_split, false);
  const auto blur = load_training_images(DatasetManifest::load(rc.blur_manifest), rc.blur_split, true);
  const std::size_t total = rc.dual.train.total_iters;
  const std::size_t every = std::max<std::size_t>(1, total / 10);
  const DualResult r = run_dual_branch(rc.dual, general, blur, [&](std::size_t it, const BranchState&, const BranchState&) {
    if (it % every == 0 || it == total) std::cerr << "iteration " << it << "/" << total << "\n";
  });
  if (!r.losses.empty()) {
    const auto& last = r.losses.back().step;
    std::cout << "final g_l1 " << fmt(last.g_l1) << ", fusion events " << r.fusion_logs.size() << "\n";
  }
  std::cout << "outputs written to " << a.out << "\n";
  return 0;
}

struct FuseArgs {
  std::string general, blur, out;
};

int run_fuse(const FuseArgs& a) {
  const ParamSet fused = final_fuse(load(a.general), load(a.blur));
  save(fused, a.out);
  std::cout << "fused checkpoint " << checksum(fused) << " written to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string model, manifest, out, config, split = "test", disc;
  bool nearest = false;
};

void write_disc_maps(const EvalArgs& a, const DatasetManifest& m, const DegradationConfig& cfg, const SuperResolver& sr_model) {
  const ParamSet d = load(a.disc);
  const fs::path dir = fs::path(a.out) / "loss_maps";
  fs::create_directories(dir);
  std::vector<std::pair<std::string, DiscLossMap>> maps;
  for (const auto& s : m.select(a.split)) {
    const Tensor hr = crop_to_factor(read_rgb(m.hr_file(s)), cfg.factor);
    const Tensor mask = crop_to_factor(read_mask(m.mask_file(s)), cfg.factor);
    Tensor sr = sr_model(degrade_sample(hr, cfg, s.id));
    for (float& x : sr.mutable_data()) x = std::clamp(x, 0.0f, 1.0f);
    maps.emplace_back(s.id, disc_loss_map(d, hr, sr, mask));
  }
  double hi = 0.0;
  for (const auto& [id, map] : maps) {
    for (float v : map.image.data()) hi = std::max(hi, static_cast<double>(v));
  }
  if (hi <= 0.0) hi = 1.0;
  std::ostringstream csv;
  csv << "sample_id,blur_mean,focus_mean,all_mean,blur_fraction\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& [id, map] : maps) {
    write_false_color_png(dir / (id + ".png"), map.image, 0.0, hi);
    csv << id << ',' << opt(map.blur_mean) << ',' << opt(map.focus_mean) << ',' << fmt(map.all_mean) << ','
        << fmt(map.blur_fraction) << '\n';
  }
  write_text(fs::path(a.out) / "disc_loss.csv", csv.str());
}

int run_eval(const EvalArgs& a) {
  if (a.model.empty() == !a.nearest) throw ConfigError("pass exactly one of --model or --nearest");
  const DatasetManifest m = DatasetManifest::load(a.manifest);
  const DegradationConfig cfg = degradation_from(a.config);
  const SuperResolver model = a.nearest ? nearest_resolver() : generator_resolver(load(a.model));
  fs::create_directories(a.out);
  const MetricReport report = eval_report(model, m, cfg, a.split);
  write_report_csv(fs::path(a.out) / "report.csv", report);
  write_aggregate_csv(fs::path(a.out) / "aggregate.csv", report);
  write_text(fs::path(a.out) / "degradation.ini", to_ini(cfg));
  if (!a.disc.empty()) write_disc_maps(a, m, cfg, model);
  for (const auto& row : report.aggregates) {
    std::cout << row.blur_type << '/' << row.size_category << '/' << row.intensity << ' ' << row.metric << " all "
              << fmt(row.all_mean) << " (n=" << row.count << ")\n";
  }
  return 0;
}

int run_inspect(const std::string& path) {
  const ParamSet p = load(path);
  for (const auto& [key, value] : p.metadata()) std::cout << "# " << key << " = " << value << "\n";
  for (const auto& [name, array] : p.entries()) {
    std::string shape;
    for (std::size_t i = 0; i < array.extents.size(); ++i) shape += (i ? "x" : "") + std::to_string(array.extents[i]);
    if (shape.empty()) shape = "scalar";
    double sq = 0.0;
    for (float v : array.values) sq += static_cast<double>(v) * v;
    std::cout << name << '\t' << shape << '\t' << array.numel() << "\tnorm " << fmt(std::sqrt(sq)) << "\n";
  }
  std::cout << "entries " << p.size() << ", parameters " << p.parameter_count() << ", norm " << fmt(norm(p))
            << ", checksum " << checksum(p) << "\n";
  return 0;
}

int run_gradcheck(std::size_t seeds) {
  const auto results = run_grad_suite(seeds);
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    std::printf("%-4s %-18s seed %zu  elements %4zu  probed %4zu  excluded %3zu  max_rel_error %.3e\n",
                r.passed ? "ok" : "FAIL", r.op.c_str(), r.seed, r.input_elements, r.probed, r.excluded, r.max_error);
  }
  std::printf("%zu/%zu cases passed (tolerance %.0e)\n", results.size() - failed, results.size(), kGradSuiteTolerance);
  return failed ? kExitFailure : 0;
}

struct ServeArgs {
  std::string manifest, host = "127.0.0.1", static_dir;
  int port = 8080;
};

int run_serve(ServeArgs a) {
  if (const char* env = std::getenv("PBSR_PORT")) {
    try {
      std::size_t pos = 0;
      a.port = std::stoi(env, &pos);
      if (pos != std::string(env).size() || a.port < 0 || a.port > 65535) throw std::out_of_range(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("PBSR_PORT is not a valid port: '") + env + "'");
    }
  }
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  CurationService service({a.manifest, a.static_dir, a.host, a.port});
  const int port = service.bind();
  std::cout << "serving " << a.manifest << " on http://" << a.host << ':' << port << "/" << std::endl;
  std::thread([&service, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
  }).detach();
  service.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PBSR toolkit: blur-aware super-resolution data, training and evaluation"};
  app.require_subcommand(1);

  DegradeArgs degrade;
  auto* c_degrade = app.add_subcommand("degrade", "Synthesize LR images for every sample");
  c_degrade->add_option("--manifest", degrade.manifest, "Dataset manifest (JSON lines)")->required()->check(CLI::ExistingFile);
  c_degrade->add_option("--out", degrade.out, "Output directory")->required();
  c_degrade->add_option("--config", degrade.config, "INI file with a [degradation] section")->check(CLI::ExistingFile);
  c_degrade->add_option("--split", degrade.split, "Only samples of this split");

  EstimateArgs estimate;
  auto* c_estimate = app.add_subcommand("estimate", "Re-estimate blur maps of unreviewed samples");
  c_estimate->add_option("--manifest", estimate.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_estimate->add_option("--threshold", estimate.threshold, "Binarization threshold")->check(CLI::Range(0.0, 1.0));
  c_estimate->add_option("--window", estimate.window, "Sharpness window size")->check(CLI::PositiveNumber);
  c_estimate->add_flag("--all", estimate.all, "Also overwrite reviewed samples");

  PartitionArgs partition;
  auto* c_partition = app.add_subcommand("partition", "Blur-area fractions, size categories and size statistics");
  c_partition->add_option("--manifest", partition.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_partition->add_option("--out", partition.out, "Output directory")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Dual-branch training with cross fusion");
  c_train->add_option("--config", train.config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "Output directory")->required();

  FuseArgs fuse;
  auto* c_fuse = app.add_subcommand("fuse", "Average the two branch generators into one model");
  c_fuse->add_option("--general", fuse.general, "General-branch checkpoint")->required()->check(CLI::ExistingFile);
  c_fuse->add_option("--blur", fuse.blur, "Blur-branch checkpoint")->required()->check(CLI::ExistingFile);
  c_fuse->add_option("--out", fuse.out, "Output checkpoint")->required();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Region-split PSNR / SSIM / GMSD report");
  c_eval->add_option("--model", eval.model, "Generator checkpoint")->check(CLI::ExistingFile);
  c_eval->add_flag("--nearest", eval.nearest, "Evaluate nearest-neighbour upsampling instead of a model");
  c_eval->add_option("--manifest", eval.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", eval.out, "Output directory")->required();
  c_eval->add_option("--config", eval.config, "INI file with a [degradation] section")->check(CLI::ExistingFile);
  c_eval->add_option("--split", eval.split, "Split to evaluate")->capture_default_str();
  c_eval->add_option("--disc", eval.disc, "Discriminator checkpoint for loss maps")->check(CLI::ExistingFile);

  std::string inspect_path;
  auto* c_inspect = app.add_subcommand("inspect", "List checkpoint entries, shapes and norms");
  c_inspect->add_option("--ckpt", inspect_path, "Checkpoint")->required()->check(CLI::ExistingFile);

  std::size_t grad_seeds = 5;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  c_grad->add_option("--seeds", grad_seeds, "Seeds per op")->capture_default_str()->check(CLI::PositiveNumber);

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the curation HTTP service (PBSR_PORT overrides --port)");
  c_serve->add_option("--manifest", serve.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--port", serve.port, "Port, 0 for any free port")->capture_default_str()->check(CLI::Range(0, 65535));
  c_serve->add_option("--host", serve.host, "Bind address")->capture_default_str();
  c_serve->add_option("--static", serve.static_dir, "Directory served at /")->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_degrade) return run_degrade(degrade);
    if (*c_estimate) return run_estimate(estimate);
    if (*c_partition) return run_partition(partition);
    if (*c_train) return run_train(train);
    if (*c_fuse) return run_fuse(fuse);
    if (*c_eval) return run_eval(eval);
    if (*c_inspect) return run_inspect(inspect_path);
    if (*c_grad) return run_gradcheck(grad_seeds);
    if (*c_serve) return run_serve(serve);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "path error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateInputError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

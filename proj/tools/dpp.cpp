// dpp: panoramic domain-adaptation toolbox.
//
// Subcommands: project, backproject, synth, train, eval, ablate, gradcheck.
// Exit codes: 0 ok, 2 usage, 3 I/O, 4 validation. Errors are single lines on
// stderr of the form `error: <message>`. Timing output is prefixed with '#'.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpp/gradcheck.hpp"
#include "dpp/io.hpp"
#include "dpp/trainer.hpp"

namespace fs = std::filesystem;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string patch_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "patch_%02d.ppm", k);
  return buf;
}

std::string split_name(const std::string& prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix.c_str(), i, ext);
  return buf;
}

void cmd_project(const std::string& in, const std::string& out_dir, double fov_deg,
                 int patch_size, const std::string& layout_cfg) {
  double fov = fov_deg * M_PI / 180.0;
  if (!layout_cfg.empty()) {
    const dpp::TrainConfig c = dpp::read_config(layout_cfg);
    fov = c.fov;
    patch_size = c.patch_size;
  }
  const dpp::Tensor erp = dpp::read_ppm(in);
  const dpp::ProjectionGrid grid = dpp::build_grid(
      dpp::default_layout_18(fov, patch_size), erp.dim(0), erp.dim(1));
  const dpp::Tensor patches = dpp::sample_erp(erp, grid);
  fs::create_directories(out_dir);
  const std::size_t per = patches.size() / static_cast<std::size_t>(grid.num_planes());
  for (int k = 0; k < grid.num_planes(); ++k) {
    dpp::Tensor img({patch_size, patch_size, 3});
    std::copy(patches.data() + static_cast<std::size_t>(k) * per,
              patches.data() + static_cast<std::size_t>(k + 1) * per, img.data());
    dpp::write_ppm((fs::path(out_dir) / patch_name(k)).string(), img);
  }
  // Manifest so that backproject can rebuild the same grid.
  std::string manifest = "[layout]\nfov_deg = " + std::to_string(fov * 180.0 / M_PI) +
                         "\npatch_size = " + std::to_string(patch_size) +
                         "\n[data]\nerp_height = " + std::to_string(erp.dim(0)) +
                         "\nerp_width = " + std::to_string(erp.dim(1)) + "\n";
  std::ofstream mf((fs::path(out_dir) / "layout.cfg").string());
  if (!mf) throw dpp::IoError("cannot write manifest in " + out_dir);
  mf << manifest;
  std::printf("wrote %d patches to %s\n", grid.num_planes(), out_dir.c_str());
}

void cmd_backproject(const std::string& in_dir, const std::string& out) {
  const dpp::TrainConfig c = dpp::read_config((fs::path(in_dir) / "layout.cfg").string());
  std::vector<dpp::Tensor> patches;
  for (int k = 0;; ++k) {
    const fs::path p = fs::path(in_dir) / patch_name(k);
    if (!fs::exists(p)) break;
    patches.push_back(dpp::read_ppm(p.string()));
  }
  if (patches.empty()) throw dpp::IoError("no patch_*.ppm files in " + in_dir);
  const dpp::ProjectionGrid grid = dpp::build_grid(
      dpp::default_layout_18(c.fov, c.patch_size), c.erp_height, c.erp_width);
  if (static_cast<int>(patches.size()) != grid.num_planes()) {
    throw dpp::ValidationError("expected " + std::to_string(grid.num_planes()) +
                               " patches, found " + std::to_string(patches.size()));
  }
  dpp::Tensor stack({grid.num_planes(), c.patch_size, c.patch_size, 3});
  for (int k = 0; k < grid.num_planes(); ++k) {
    if (patches[static_cast<std::size_t>(k)].dim(0) != c.patch_size ||
        patches[static_cast<std::size_t>(k)].dim(1) != c.patch_size) {
      throw dpp::ValidationError("patch " + std::to_string(k) + " has wrong size");
    }
    std::copy(patches[static_cast<std::size_t>(k)].data(),
              patches[static_cast<std::size_t>(k)].data() +
                  patches[static_cast<std::size_t>(k)].size(),
              stack.data() + static_cast<std::size_t>(k) *
                                 patches[static_cast<std::size_t>(k)].size());
  }
  const auto [assembled, coverage] = dpp::assemble_t2e(stack, grid);
  dpp::write_ppm(out, assembled);
  std::size_t covered = 0;
  for (std::size_t i = 0; i < coverage.size(); ++i) covered += coverage.data()[i] > 0.0;
  std::printf("assembled %s (%zu/%zu pixels covered)\n", out.c_str(), covered,
              coverage.size());
}

void dump_split(const std::string& dir, const std::string& prefix,
                const std::vector<dpp::SynthImage>& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    dpp::write_ppm((fs::path(dir) / split_name(prefix, static_cast<int>(i), "ppm")).string(),
                   set[i].image);
    dpp::write_tensor_file(
        (fs::path(dir) / split_name(prefix, static_cast<int>(i), "lab.dpt")).string(),
        set[i].labels, dpp::TensorDType::u16);
  }
}

std::vector<dpp::SynthImage> load_split(const std::string& dir, const std::string& prefix) {
  std::vector<dpp::SynthImage> set;
  for (int i = 0;; ++i) {
    const fs::path img = fs::path(dir) / split_name(prefix, i, "ppm");
    const fs::path lab = fs::path(dir) / split_name(prefix, i, "lab.dpt");
    if (!fs::exists(img)) break;
    dpp::SynthImage si;
    si.image = dpp::read_ppm(img.string());
    si.labels = dpp::read_tensor_file(lab.string());
    set.push_back(std::move(si));
  }
  if (set.empty()) throw dpp::IoError("no " + prefix + "_*.ppm files in " + dir);
  return set;
}

void cmd_synth(const std::string& config_path, const std::string& out_dir) {
  const dpp::TrainConfig cfg = dpp::read_config(config_path);
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const dpp::BenchmarkData data = dpp::make_benchmark(cfg);
  fs::create_directories(out_dir);
  dump_split(out_dir, "source", data.source);
  dump_split(out_dir, "target", data.target);
  dump_split(out_dir, "eval", data.eval);
  std::printf("wrote %zu source / %zu target / %zu eval images to %s\n",
              data.source.size(), data.target.size(), data.eval.size(), out_dir.c_str());
  std::printf("# synth_time_s=%.2f\n", seconds_since(t0));
}

void cmd_train(const std::string& config_path, const std::string& out_ckpt) {
  const dpp::TrainConfig cfg = dpp::read_config(config_path);
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const dpp::BenchmarkData data = dpp::make_benchmark(cfg);
  const dpp::TrainState state =
      dpp::run_training(cfg, data.source, data.target, &std::cout, dpp::LossMask{},
                        &data.eval);
  dpp::write_checkpoint(out_ckpt, dpp::checkpoint_records(state));
  const dpp::MiouResult erp_m = dpp::evaluate(state, data.eval, dpp::EvalMode::erp_only);
  const dpp::MiouResult dual_m =
      dpp::evaluate(state, data.eval, dpp::EvalMode::dual_average);
  std::printf("eval mode=erp_only miou=%.4f\n", erp_m.mean);
  std::printf("eval mode=dual_average miou=%.4f\n", dual_m.mean);
  std::printf("checkpoint=%s\n", out_ckpt.c_str());
  std::printf("# train_time_s=%.2f\n", seconds_since(t0));
}

void cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& mode,
              const std::string& config_path, const std::string& split) {
  dpp::TrainConfig cfg;
  if (!config_path.empty()) cfg = dpp::read_config(config_path);
  cfg.validate();
  dpp::TrainState state = dpp::init_train_state(cfg);
  dpp::load_checkpoint_records(state, dpp::read_checkpoint(ckpt));
  const std::vector<dpp::SynthImage> set = load_split(data_dir, split);
  const dpp::EvalMode m =
      mode == "erp_only" ? dpp::EvalMode::erp_only : dpp::EvalMode::dual_average;
  const dpp::MiouResult res = dpp::evaluate(state, set, m);
  std::printf("miou=%.4f\n", res.mean);
  for (std::size_t k = 0; k < res.per_class.size(); ++k) {
    std::printf("iou_class_%zu=%.4f\n", k, res.per_class[k]);
  }
}

void cmd_ablate(const std::string& config_path, const std::string& out_csv) {
  const dpp::TrainConfig cfg = dpp::read_config(config_path);
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<dpp::AblationRow> rows =
      dpp::run_ablation(cfg, dpp::default_ablation_combos(), &std::cout);
  std::ofstream f(out_csv, std::ios::trunc);
  if (!f) throw dpp::IoError("cannot open " + out_csv + " for writing");
  f << "mask,seed,miou";
  for (int k = 0; k < cfg.loss.num_classes; ++k) f << ",per_class_" << k;
  f << "\n";
  char buf[64];
  for (const dpp::AblationRow& r : rows) {
    f << r.mask_name << "," << r.seed;
    std::snprintf(buf, sizeof(buf), ",%.4f", r.miou);
    f << buf;
    for (double v : r.per_class) {
      std::snprintf(buf, sizeof(buf), ",%.4f", v);
      f << buf;
    }
    f << "\n";
  }
  if (!f.good()) throw dpp::IoError("write failed on " + out_csv);
  std::printf("wrote %zu rows to %s\n", rows.size(), out_csv.c_str());
  std::printf("# ablate_time_s=%.2f\n", seconds_since(t0));
}

void cmd_gradcheck(int instances, std::uint64_t seed) {
  const dpp::GradCheckReport rep = dpp::run_gradcheck(instances, seed);
  std::printf("max_rel_err=%.6g\n", rep.overall());
  std::printf("max_rel_err_losses=%.6g\n", rep.max_rel_err_losses);
  std::printf("max_rel_err_model=%.6g\n", rep.max_rel_err_model);
  std::printf("cases=%d\n", rep.cases);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panoramic segmentation domain adaptation toolbox"};
  app.require_subcommand(1);

  auto* project = app.add_subcommand("project", "split an ERP image into tangent patches");
  std::string p_in, p_out_dir, p_layout;
  double p_fov = 80.0;
  int p_patch = 64;
  project->add_option("--in", p_in, "input ERP image (PPM P6)")->required();
  project->add_option("--out-dir", p_out_dir, "output directory")->required();
  project->add_option("--fov-deg", p_fov, "patch field of view in degrees");
  project->add_option("--patch-size", p_patch, "patch resolution in pixels");
  project->add_option("--layout", p_layout, "config file supplying [layout]");

  auto* backproject =
      app.add_subcommand("backproject", "assemble tangent patches back into an ERP image");
  std::string b_in_dir, b_out;
  backproject->add_option("--in-dir", b_in_dir, "directory written by project")->required();
  backproject->add_option("--out", b_out, "output ERP image (PPM P6)")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark datasets");
  std::string s_config, s_out_dir;
  synth->add_option("--config", s_config, "config file")->required();
  synth->add_option("--out-dir", s_out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "run the dual-path training loop");
  std::string t_config, t_out;
  train->add_option("--config", t_config, "config file")->required();
  train->add_option("--out", t_out, "output checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_mode = "erp_only", e_config, e_split = "eval";
  eval->add_option("--ckpt", e_ckpt, "checkpoint path")->required();
  eval->add_option("--data", e_data, "dataset directory (from synth)")->required();
  eval->add_option("--mode", e_mode, "erp_only | dual_average")
      ->check(CLI::IsMember({"erp_only", "dual_average"}));
  eval->add_option("--config", e_config, "config file (defaults used when omitted)");
  eval->add_option("--split", e_split, "dataset split prefix");

  auto* ablate = app.add_subcommand("ablate", "loss-combination ablation study");
  std::string a_config, a_out;
  ablate->add_option("--config", a_config, "config file")->required();
  ablate->add_option("--out", a_out, "output CSV path")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int g_instances = 100;
  std::uint64_t g_seed = 7;
  gradcheck->add_option("--instances", g_instances, "random instances per check");
  gradcheck->add_option("--seed", g_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*project) cmd_project(p_in, p_out_dir, p_fov, p_patch, p_layout);
    else if (*backproject) cmd_backproject(b_in_dir, b_out);
    else if (*synth) cmd_synth(s_config, s_out_dir);
    else if (*train) cmd_train(t_config, t_out);
    else if (*eval) cmd_eval(e_ckpt, e_data, e_mode, e_config, e_split);
    else if (*ablate) cmd_ablate(a_config, a_out);
    else if (*gradcheck) cmd_gradcheck(g_instances, g_seed);
  } catch (const dpp::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const dpp::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const dpp::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}

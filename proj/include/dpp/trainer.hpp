#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dpp/losses.hpp"
#include "dpp/metrics.hpp"
#include "dpp/model.hpp"
#include "dpp/resampler.hpp"
#include "dpp/rng.hpp"
#include "dpp/synthdata.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

// Everything a training run needs; parsed from the config file (degrees at
// that boundary, radians here).
struct TrainConfig {
  // [train]
  int steps = 300;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;
  int batch_source = 1;
  int batch_target = 1;
  int eval_every = 0;  // 0 = only after training
  int log_every = 10;
  bool stop_gradient_erp = false;
  bool supervise_tp = true;
  bool shared_classifier = false;
  int ablate_seeds = 3;

  // [layout]
  double fov = 80.0 * 3.14159265358979323846 / 180.0;
  int patch_size = 64;

  // [loss]
  LossConfig loss;

  // [data]
  int erp_height = 128;
  int erp_width = 256;
  int source_count = 200;
  int target_count = 200;
  int eval_count = 50;
  std::uint64_t data_seed = 1234;
  int num_objects = 7;
  StyleParams source_style{0.12, 1.25, 35.0 * 3.14159265358979323846 / 180.0, 0.06};
  bool polar_bias = true;

  void validate() const;
};

// Which optional loss terms participate. L_s is always on.
struct LossMask {
  bool use_ld = true;
  bool use_pc = true;
  bool use_fc = true;

  std::string name() const;  // e.g. "L_s+L_d+L_pc+L_fc"
};

struct LossReport {
  double l_s = 0.0;
  double l_d = 0.0;
  double l_pc = 0.0;
  double l_fc = 0.0;
  double total = 0.0;
};

// Adam first/second moments for one parameter tensor.
struct MomentPair {
  Tensor m;
  Tensor v;
};

struct ModelOptState {
  std::vector<MomentPair> conv_w;
  std::vector<MomentPair> conv_b;
  MomentPair head_w;
  MomentPair head_b;
  long t = 0;  // Adam timestep
};

struct ClassifierOptState {
  MomentPair conv_w;
  MomentPair conv_b;
  MomentPair lin_w;
  double m_b = 0.0;
  double v_b = 0.0;
  long t = 0;
};

struct TrainState {
  TrainConfig config;
  ModelParams erp_model;
  ModelParams tp_model;
  ClassifierParams erp_classifier;
  ClassifierParams tp_classifier;
  ModelOptState erp_opt;
  ModelOptState tp_opt;
  ClassifierOptState erp_cls_opt;
  ClassifierOptState tp_cls_opt;
  ProjectionGrid grid;  // built once from config
  long step = 0;
  Rng rng{0};  // sole source of stochastic choices (batch order, crop positions)
};

TrainState init_train_state(const TrainConfig& config);

// One optimization step. Executes, in order: tangent projection of the
// target batch and random source crops; the four forward passes; gradient
// accumulation (L_s, then beta*L_pc, then L_fc, then alpha*L_d — fixed for
// reproducibility); the alternating adversarial updates (classifier step,
// then the encoder sees the updated classifier); and the combined parameter
// update of both paths. Masked-out terms are skipped entirely and report 0.
LossReport train_step(TrainState& state, const std::vector<SynthImage>& source_batch,
                      const std::vector<SynthImage>& target_batch,
                      const TrainConfig& config, const LossMask& mask = LossMask{});

enum class EvalMode { erp_only, dual_average };

// Argmax class map for one ERP image. erp_only touches only the ERP path
// (and performs no resampling at all); dual_average averages the ERP softmax
// with the back-projected tangent-path softmax on covered pixels.
Tensor predict_map(const TrainState& state, const Tensor& image, EvalMode mode);

MiouResult evaluate(const TrainState& state, const std::vector<SynthImage>& eval_set,
                    EvalMode mode);

// mIoU of precomputed prediction maps against ground truth.
MiouResult evaluate_maps(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                         int num_classes, int ignore_index = 255);

// Full loop over pre-generated datasets. Logs one line per log_every steps:
// step=<n> L_s=<f> L_d=<f> L_pc=<f> L_fc=<f> total=<f>
// If eval_set is given and eval_every > 0, emits `# eval step=<n> miou=<f>`
// comment lines at that cadence (erp_only mode).
TrainState run_training(const TrainConfig& config, const std::vector<SynthImage>& source,
                        const std::vector<SynthImage>& target, std::ostream* log,
                        const LossMask& mask = LossMask{},
                        const std::vector<SynthImage>* eval_set = nullptr);

// The three datasets every run needs, derived deterministically from
// config.data_seed: style-shifted source, clean polar-biased target, and a
// held-out eval split from the target distribution.
struct BenchmarkData {
  std::vector<SynthImage> source;
  std::vector<SynthImage> target;
  std::vector<SynthImage> eval;
};
BenchmarkData make_benchmark(const TrainConfig& config);

struct AblationRow {
  std::string mask_name;
  std::uint64_t seed;
  double miou = 0.0;
  std::vector<double> per_class;
};

// Trains one model per (mask combination, seed) pair with shared data and
// shared per-seed initialization, evaluating each in erp_only mode.
// Combinations default to: baseline, each single added term, all terms.
std::vector<AblationRow> run_ablation(const TrainConfig& config,
                                      const std::vector<LossMask>& combos,
                                      std::ostream* log = nullptr);

std::vector<LossMask> default_ablation_combos();

// Checkpoint (de)serialization. Loading tolerates missing TP-path records:
// the TP path can be removed after training without affecting erp_only
// evaluation.
struct CheckpointRecord {
  std::string name;
  Tensor tensor;
};
std::vector<CheckpointRecord> checkpoint_records(const TrainState& state);
void load_checkpoint_records(TrainState& state, const std::vector<CheckpointRecord>& recs);

}  // namespace dpp

#pragma once

#include "pam/box2mask.hpp"
#include "pam/checkpoint.hpp"
#include "pam/phantom.hpp"
#include "pam/preprocess.hpp"
#include "pam/propmask.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pam {

struct TrainConfig {
  double lr0 = 1e-3;
  double weight_decay = 1e-4;
  double t_max = 100;  ///< cosine period, epochs
  double eta_min = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 60;
  int samples_per_epoch = 640;  ///< Box2Mask samples or PropMask tasks drawn per epoch
  int batch = 16;               ///< samples, or tasks for PropMask
  int eval_interval = 20;
  bool keep_best = false;  ///< final checkpoint = best validation DSC instead of latest
  std::uint64_t seed = 7;

  static TrainConfig box2mask_desk();
  static TrainConfig propmask_desk();

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig defaults);
};

/// eta_min + (lr0 - eta_min) (1 + cos(pi min(t, T_max) / T_max)) / 2.
double cosine_lr(double epoch, const TrainConfig& cfg);

template <typename Scalar>
struct OptimizerState {
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;
  std::int64_t step = 0;
};

struct AdamWParams {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay, then a bias-corrected Adam update, from the
/// gradients stored on the parameters. Parameters without a gradient are
/// treated as having a zero gradient. Errors: diverged (non-finite gradient).
template <typename Scalar>
void adamw_step(ParameterSet<Scalar>& params, OptimizerState<Scalar>& state, const AdamWParams& hp);

struct MetricsRecord {
  int epoch = 0;
  std::string split;  ///< "train" or "val"
  double loss = 0;
  std::optional<double> dsc;
  double lr = 0;
  double wallclock = 0;  ///< seconds since training started

  nlohmann::ordered_json to_json() const;
};

using LogSink = std::function<void(const MetricsRecord&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRecord> log;
};

// ---------------------------------------------------------------------------
// Data

struct PhantomCase {
  std::string id;
  PhantomSpec spec;
  VolumeF volume;
  Mask3D mask;
};

/// `n` phantoms cycling through `families`, each with its own spec seed.
std::vector<PhantomCase> make_phantom_suite(const std::vector<ShapeFamily>& families, int n,
                                            std::uint64_t seed,
                                            const PhantomGeometry& geometry = {});

/// <dir>/manifest.json plus <id>.pvol (f32) and <id>_mask.pvol (u8) per case.
void save_phantom_suite(const std::vector<PhantomCase>& cases, const std::string& dir);
/// Errors: not_found, plus the volume format errors.
std::vector<PhantomCase> load_phantom_suite(const std::string& dir);

/// `n` ROI samples drawn uniformly over eligible (case, slice) pairs.
std::vector<RoiSample> build_roi_pool(const std::vector<PhantomCase>& cases, int n,
                                      const RoiConfig& cfg, std::uint64_t seed, Axis axis = Axis::kZ);

/// `n` tasks with exactly `cfg.n_adjacent` adjacent slices each.
std::vector<PropagationTask> build_task_pool(const std::vector<PhantomCase>& cases, int n,
                                             const TaskConfig& cfg, std::uint64_t seed,
                                             Axis axis = Axis::kZ);

// ---------------------------------------------------------------------------
// Training

/// Trains from `init` when given (fine-tuning; manifest records the base
/// hash), else from a fresh seeded network. Errors: empty_dataset, diverged,
/// checkpoint_mismatch.
TrainResult train_box2mask(const std::vector<RoiSample>& train, const std::vector<RoiSample>& val,
                           const NetConfig& net, const TrainConfig& cfg,
                           const Checkpoint* init = nullptr, const LogSink& sink = {});

TrainResult train_propmask(const std::vector<PropagationTask>& train,
                           const std::vector<PropagationTask>& val, const NetConfig& net,
                           const TrainConfig& cfg, const Checkpoint* init = nullptr,
                           const LogSink& sink = {});

/// Mean DSC of thresholded predictions against the R x R targets, inputs
/// normalized as in training (no percentile search).
double evaluate_box2mask(Box2MaskNet<float>& net, const std::vector<RoiSample>& samples);
/// Mean DSC over every adjacent slice of every task.
double evaluate_propmask(PropMaskNet<float>& net, const std::vector<PropagationTask>& tasks);

/// Errors: checkpoint_mismatch (wrong model kind).
std::unique_ptr<Box2MaskNet<float>> box2mask_from(const Checkpoint& ckpt);
std::unique_ptr<PropMaskNet<float>> propmask_from(const Checkpoint& ckpt);

Checkpoint make_checkpoint(ModelKind kind, const NetConfig& cfg, const ParameterSet<float>& params);

}  // namespace pam

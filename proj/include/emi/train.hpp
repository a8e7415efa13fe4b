#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "emi/config.hpp"
#include "emi/data.hpp"
#include "emi/metrics.hpp"

namespace emi {

// Adam moments are kept and serialized in double regardless of the model
// scalar, so a save/load/continue run reproduces an uninterrupted one bit
// for bit.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // parallel to the param registry
};

AdamState make_adam_state(BranchModel& model);

// The scalar Adam update, all in double: advances one element's moments in
// place and returns the new weight. bc1/bc2 are the bias corrections
// 1 - beta^step for the step being applied.
inline double adam_apply(double w, double g, double& m, double& v, double lr,
                         double beta1, double beta2, double eps, double bc1,
                         double bc2) {
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g * g;
  return w - lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
}

// One optimizer step over all registered params; consumes (zeroes) grads.
// Throws ContractError naming the parameter if a gradient is non-finite.
void adam_step(AdamState& st, BranchModel& model, double lr);

struct SchedulerState {
  double best = -std::numeric_limits<double>::infinity();
  int since = 0;  // epochs since last strict improvement
};

// Plateau halving on the validation metric (higher is better). Returns the
// learning rate to use next epoch.
double scheduler_update(SchedulerState& st, double val_metric, double lr,
                        int patience, double factor);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mean_rho = 0.0;
  double lr = 0.0;
};

void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_val_rho = -std::numeric_limits<double>::infinity();
  double final_train_loss = 0.0;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string abort_reason;
};

struct ParamBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<Real> data;
};

struct Checkpoint {
  Modality modality = Modality::visual;
  ModelConfig cfg;
  std::vector<ParamBlob> params;
  bool has_train_state = false;
  int next_epoch = 0;
  AdamState adam;
  SchedulerState sched;
  double lr = 0.0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
BranchModel model_from_checkpoint(const Checkpoint& ck);

// Everything the training loop mutates, so it can be frozen to disk and
// thawed mid-run.
struct Trainer {
  Modality modality = Modality::visual;
  TrainConfig tcfg;
  BranchModel model;
  AdamState adam;
  SchedulerState sched;
  double lr = 0.0;
  int next_epoch = 0;
};

Trainer make_trainer(const ModelConfig& mcfg, const TrainConfig& tcfg,
                     Modality modality);
Trainer trainer_from_checkpoint(const Checkpoint& ck, const TrainConfig& tcfg);
Checkpoint make_checkpoint(Trainer& tr, bool include_train_state);

// Mean squared error over every prediction element, composed from the
// differentiable ops.
TensorT<Real> mse_loss(TapeT<Real>& tp, const TensorT<Real>& pred,
                       const TensorT<Real>& target);

// Forward pass for one sample with gradients off.
std::array<double, 6> predict_sample(const BranchModel& model,
                                     const Sample& s);

// Predictions for a whole split in manifest order.
std::vector<std::array<double, 6>> predict_split(
    const BranchModel& model, const Manifest& m, Split split,
    std::vector<std::string>* ids_out = nullptr,
    std::vector<std::array<double, 6>>* labels_out = nullptr);

// Runs epochs next_epoch .. max_epochs-1 (or until an early stop). Saves
// the best-so-far parameter checkpoint to best_path after every improving
// epoch when best_path is non-empty. On non-finite loss or gradients the
// run aborts and the result says why; the best checkpoint on disk stays
// valid.
TrainResult run_training(Trainer& tr, const Manifest& manifest,
                         const std::string& best_path,
                         std::ostream* progress = nullptr);

}  // namespace emi

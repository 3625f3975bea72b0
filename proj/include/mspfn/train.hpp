#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mspfn/dataset.hpp"
#include "mspfn/losses.hpp"
#include "mspfn/model.hpp"
#include "mspfn/rng.hpp"

namespace mspfn {
inline namespace MSPFN_ABI {

/// Optimisation settings. Defaults are desk scale; `paper()` returns the
/// published regime (batch 8, 2e-4 halved every 20000 steps down to 1e-6,
/// 30 epochs).
struct TrainConfig {
  int batch_size = 2;
  double lr_init = 2e-4;
  std::int64_t lr_half_every = 20000;
  double lr_floor = 1e-6;
  int epochs = 30;
  std::int64_t steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int patch = 64;
  std::int64_t checkpoint_every = 500;
  LossConfig loss;

  static TrainConfig paper();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// max(lr_floor, lr_init * 0.5^floor(step / lr_half_every)).
double lr_schedule(std::int64_t step, const TrainConfig& cfg);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState zeros_like(const ParamStore& params);
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter from its accumulated
/// gradient. Throws std::invalid_argument naming the first parameter
/// without a gradient.
void adam_step(ParamStore& params, AdamState& state, double lr, const AdamHyper& hyper = {});

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParamStore params;
  AdamState adam;
  std::int64_t step = 0;
  SamplerState sampler{};
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Checksum, Schema };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr int kCheckpointVersion = 1;

/// Layout: the 6 magic bytes "MSPFN\x01", a little-endian u32 header length,
/// the JSON header, then float32 little-endian tensors (parameters, Adam
/// first moments, Adam second moments) in parameter-store order.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training loop

struct StepLog {
  std::int64_t step = 0;  // steps completed after this update
  double lr = 0.0;
  double loss = 0.0;
  double l_con = 0.0;
  double l_edge = 0.0;
  double psnr = 0.0;  // derained vs clean on the training batch

  [[nodiscard]] nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, StepLog diag)
      : std::runtime_error(what), diag_(diag) {}
  [[nodiscard]] const StepLog& diagnostics() const { return diag_; }

 private:
  StepLog diag_;
};

class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& train, const DatasetManifest& data);
  /// Resumes exactly where `ckpt` left off.
  Trainer(const Checkpoint& ckpt, const DatasetManifest& data);

  StepLog step();
  [[nodiscard]] Checkpoint checkpoint() const;

  [[nodiscard]] std::int64_t steps_done() const { return step_; }
  [[nodiscard]] const ParamStore& params() const { return params_; }
  [[nodiscard]] const ModelConfig& model_config() const { return model_; }
  [[nodiscard]] const TrainConfig& train_config() const { return train_; }

 private:
  ModelConfig model_;
  TrainConfig train_;
  ParamStore params_;
  AdamState adam_;
  PatchSampler sampler_;
  std::int64_t step_ = 0;
};

struct TrainRunOptions {
  std::filesystem::path out_dir;      // checkpoints and train_log.jsonl; empty = none
  std::ostream* log = nullptr;        // JSON lines mirror
  std::optional<Checkpoint> resume;
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  std::vector<StepLog> history;
};

/// Runs until train.steps updates have been made in total (a resumed run
/// continues from its checkpoint's step counter).
TrainResult train(const ModelConfig& model, const TrainConfig& train, const DatasetManifest& data,
                  const TrainRunOptions& opt = {});

}  // namespace MSPFN_ABI
}  // namespace mspfn

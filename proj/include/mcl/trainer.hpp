// Copyright 2026 The MCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Mutual, single-modality and mixed training: loss assembly, Adam, cosine
// warm restarts, collapse detection, checkpoints and the fit loop.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/losses.hpp"
#include "mcl/model.hpp"
#include "mcl/rng.hpp"

namespace mcl::train {

enum class TrainMode { kSingleFfpe, kSingleFrozen, kMixed, kMutual };
enum class ContrastiveKind { kNmc, kNtXent, kKl, kNone };

std::string_view mode_name(TrainMode m);  // single-ffpe, single-frozen, mixed, mutual
TrainMode parse_mode(std::string_view s);
std::string_view contrastive_name(ContrastiveKind k);  // nmc, nt_xent, kl, none
ContrastiveKind parse_contrastive(std::string_view s);

struct TrainConfig {
  TrainMode mode = TrainMode::kMutual;
  int batch_size = 32;
  int epochs = 10;
  double lr_max = 1.6e-4;
  double lr_min = 0.0;
  double restart_period_epochs = 1.0;
  double restart_mult = 2.0;
  double tau = 0.5;
  double delta = 1.0;
  int taylor_t = 3;
  losses::LossWeights loss_weights;
  std::uint64_t seed = 0;
  model::ModelConfig model;
  double eps = 1e-5;
  double sv_threshold = 1e-6;
  losses::Stacking stacking = losses::Stacking::kVertical;
  losses::NormStatistics norm_stats = losses::NormStatistics::kPerSample;
  ContrastiveKind contrastive = ContrastiveKind::kNmc;
  // Update one branch per step, in turn (deep mutual learning style).
  bool alternating = false;
  bool augment = true;
  data::AugmentationConfig augmentation;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int collapse_patience = 10;
  double collapse_variance = 1e-8;
  bool soft_voting = false;
  int eval_batch_size = 32;
};

// Every violated constraint, each with its own message.
std::vector<std::string> validate(const TrainConfig& config);

nlohmann::json config_to_json(const TrainConfig& config);
// Inverse of config_to_json; missing keys keep their defaults, unknown keys
// are an Error(kConfig).
TrainConfig config_from_json(const nlohmann::json& j);
// SHA-256 of the canonical JSON form.
std::string config_hash(const TrainConfig& config);

// Cosine annealing with warm restarts. `step` counts optimizer steps; the
// first window lasts restart_period_epochs epochs, each later one
// restart_mult times longer.
double lr_schedule(std::int64_t step, int steps_per_epoch, const TrainConfig& config);

// Batches per epoch: ceil(crops / N) over FFPE crops (mutual), the trained
// modality (single) or both modalities (mixed).
int steps_per_epoch(const TrainConfig& config, const data::PairedCohort& cohort);

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  std::int64_t t = 0;
};

void adam_step(model::ParameterBuffer<float>& params, AdamState& state, double lr,
               const TrainConfig& config);

// Loss values and parameter gradients of one mutual step. Gradients are
// accumulated into each branch's grad buffer (zeroed first).
struct MutualGradients {
  losses::LossBreakdown ffpe;
  losses::LossBreakdown frozen;
  double latent_variance = 0.0;  // min over branches of the mean batch variance of g-hat
  bool finite = true;
};

template <typename T>
MutualGradients mutual_gradients(model::BranchNetwork<T>& ffpe_net,
                                 model::BranchNetwork<T>& frozen_net, const Tensor<T>& ffpe,
                                 const Tensor<T>& frozen, const std::vector<int>& labels,
                                 const TrainConfig& config);

template <typename T>
MutualGradients single_gradients(model::BranchNetwork<T>& net, const Tensor<T>& images,
                                 const std::vector<int>& labels, const TrainConfig& config);

// Mean over dimensions of the across-batch variance of layer-normalized z.
double latent_batch_variance(const Eigen::MatrixXd& z, const TrainConfig& config);

struct StepResult {
  losses::LossBreakdown ffpe;
  losses::LossBreakdown frozen;
  double lr = 0.0;
  bool collapsed = false;
  std::string collapse_reason;
};

struct CollapseEvent {
  std::int64_t step = -1;
  int epoch = 0;
  std::string reason;
};

// Optimizer-side state of a run; part of every checkpoint.
struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;  // completed epochs
  Rng sampler;
  std::vector<AdamState> adam;
  int low_variance_streak = 0;
  std::optional<CollapseEvent> collapse;
  nlohmann::json history = nlohmann::json::array();  // per-epoch records
  int best_epoch = -1;
  double best_score = -1.0;
};

// Owns the branch networks of one run. Mutual mode holds two branches
// (0 = FFPE, 1 = frozen); the other modes hold one.
class Trainer {
 public:
  Trainer(const TrainConfig& config, int steps_per_epoch);

  const TrainConfig& config() const noexcept { return config_; }
  int steps_per_epoch() const noexcept { return steps_per_epoch_; }
  TrainState& state() noexcept { return state_; }
  const TrainState& state() const noexcept { return state_; }

  std::size_t num_branches() const noexcept { return branches_.size(); }
  model::BranchNetwork<float>& branch(std::size_t i) { return branches_.at(i); }
  const model::BranchNetwork<float>& branch(std::size_t i) const { return branches_.at(i); }
  // Network used for a modality at inference time.
  const model::BranchNetwork<float>& network_for(data::Modality m) const;

  // One mutual step on a paired batch (mutual mode only).
  StepResult train_step(const data::PairedBatch& batch);
  // One CE step of the single branch (single and mixed modes).
  StepResult train_single_step(const data::CropBatch& batch);

 private:
  StepResult finish_step(StepResult r, const MutualGradients& g);

  TrainConfig config_;
  int steps_per_epoch_;
  std::vector<model::BranchNetwork<float>> branches_;
  TrainState state_;
};

// ---- checkpoints ----

inline constexpr const char* kCheckpointMagic = "mcl-ckpt-v1";

std::string serialize_checkpoint(const Trainer& trainer);
// Throws Error(kIo) on malformed archives.
Trainer deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer);
Trainer load_checkpoint(const std::filesystem::path& path);

// ---- fit ----

struct FitOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  // Stop after this many epochs in this call (for resume tests); -1 = all.
  int max_epochs_this_call = -1;
};

struct FitResult {
  std::string report_json;
  std::string lr_curve_csv;
  std::string best_checkpoint;
  bool collapsed = false;
  std::optional<CollapseEvent> collapse;
};

// Trains from scratch. Validation runs before the first epoch and after
// each epoch; the best validation score (mean patient accuracy over the
// evaluated modalities, ties to the earliest epoch) selects best.ckpt.
// Writes best.ckpt, last.ckpt, train_report.json and lr_curve.csv when
// out_dir is set.
FitResult fit(const TrainConfig& config, const data::PairedCohort& train,
              const data::PairedCohort& val, const FitOptions& options = {});

// Continues a run from a last.ckpt-style trainer.
FitResult resume(Trainer trainer, const data::PairedCohort& train,
                 const data::PairedCohort& val, const FitOptions& options = {});

}  // namespace mcl::train

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

// Paired-modality synthetic cohort generator and the experiment harness that
// compares training schemes, contrastive losses and temperatures on it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/trainer.hpp"

namespace mcl::synth {

// Tissue appearance of one grade.
struct ClassTexture {
  std::array<double, 3> base{};  // RGB of the tissue background
  double blob_density = 1.0;     // nuclei per 1000 px at image_size 224
  double blob_radius = 4.0;      // pixels at image_size 224
};

// Processing artifacts of one modality, applied on top of the rendered tissue.
struct ModalityTransform {
  std::array<double, 3> shift{};  // added to RGB
  int blur_radius = 0;            // box blur half-width
  double noise_sigma = 0.0;       // additive Gaussian noise
};

struct SyntheticSpec {
  int num_classes = 3;
  int patients_per_class = 30;
  // Per class: train and test patient counts follow these fractions.
  data::SplitFractions split{2.0 / 3.0, 0.0, 1.0 / 3.0};
  int crops_per_bag = 8;
  int image_size = 224;
  int tile_size = 500;
  double patient_color_jitter = 8.0;
  double patient_density_jitter = 0.2;
  ModalityTransform ffpe{{4.0, -4.0, 0.0}, 0, 4.0};
  ModalityTransform frozen{{-12.0, 6.0, 10.0}, 2, 12.0};
  std::uint64_t seed = 0;
};

// Evenly spaced along a pink-to-purple ramp with rising nuclear density.
std::vector<ClassTexture> class_textures(const SyntheticSpec& spec);

// Throws Error(kConfig) listing every violated constraint.
void validate_spec(const SyntheticSpec& spec);

// Flat keys; unknown keys are an Error(kConfig).
nlohmann::json spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const nlohmann::json& j);

// Tissue tiles per slide and the size of the rendered slide.
int tissue_tiles(const SyntheticSpec& spec);
int slide_width(const SyntheticSpec& spec);

// One slide: tissue tiles followed by one blank tile.
RgbImage render_slide(const SyntheticSpec& spec, int patient, data::Modality modality);
int patient_grade(const SyntheticSpec& spec, int patient);
std::string patient_id(int patient);

// Writes <out>/slides/<id>_<modality>.png and <out>/slides.csv (paths
// relative to <out>). The returned records carry <out>-prefixed paths.
std::vector<data::SlideRecord> generate_dataset(const SyntheticSpec& spec,
                                                const std::filesystem::path& out);

// Base training configuration of the benchmark.
train::TrainConfig default_train_config();

// Patch extraction settings matching the generator's geometry.
data::PreprocessOptions preprocess_options(const SyntheticSpec& spec);

// One comparison entry. Single mode trains one network per modality.
enum class Scheme { kSingle, kMixed, kMutual };
struct RunSpec {
  Scheme scheme = Scheme::kMutual;
  std::string loss = "nmc+lr";  // ce, nmc, lr, nmc+lr, nt_xent, kl (mutual only)
  double tau = 0.5;
};
std::string run_name(const RunSpec& run);
std::vector<RunSpec> parse_runs(const std::vector<std::string>& modes,
                                 const std::vector<std::string>& losses);
// Training configuration of a run, derived from the base configuration.
std::vector<train::TrainConfig> run_configs(const RunSpec& run, const train::TrainConfig& base);

// Latent diagnostics over the test crops.
struct LatentDiagnostics {
  double retrieval_top1 = 0.0;  // FFPE crop -> nearest frozen crop is the same patient
  double positive_cosine = 0.0;
  double negative_cosine = 0.0;
  double margin = 0.0;  // positive - negative
  std::vector<double> rank_ratio;  // per class, over z_lr rows of both modalities
  double mean_rank_ratio = 0.0;
};

// Sum of the top-k singular values over the nuclear norm.
double rank_ratio(const Eigen::MatrixXd& m, int k);

LatentDiagnostics latent_diagnostics(const model::BranchNetwork<float>& ffpe_net,
                                     const model::BranchNetwork<float>& frozen_net,
                                     const data::PairedCohort& test,
                                     const train::TrainConfig& config);

struct RunResult {
  std::string name;
  nlohmann::json record;
  bool collapsed = false;
  double seconds = 0.0;  // wall time, kept out of the report
};

struct ExperimentReport {
  std::string json;
  std::vector<RunResult> runs;
};

// Cohorts built from a preprocessed patch store.
struct Cohorts {
  data::PairedCohort train;
  data::PairedCohort val;
  data::PairedCohort test;
  std::string manifest_sha256;
};
// Preprocesses <dataset>/slides.csv into <work>/patches and loads the split.
Cohorts prepare_cohorts(const SyntheticSpec& spec, const std::filesystem::path& dataset,
                        const std::filesystem::path& work);

RunResult run_one(const RunSpec& run, const train::TrainConfig& base, const Cohorts& cohorts,
                  const std::filesystem::path& run_dir);

// Preprocess, fit and evaluate every run; the report is byte-stable for a
// fixed spec, base config and run list.
ExperimentReport run_comparison(const SyntheticSpec& spec, const train::TrainConfig& base,
                                const std::vector<RunSpec>& runs,
                                const std::filesystem::path& dataset,
                                const std::filesystem::path& work);

struct SweepRow {
  double tau = 0.0;
  double ffpe_accuracy = 0.0;
  double frozen_accuracy = 0.0;
  bool collapsed = false;
  std::int64_t collapse_step = -1;
  std::string config_hash;
};

// Mutual NMC+LR training per temperature. Every tau is validated before any
// training starts (Error(kConfig)); collapses are recorded per row.
std::vector<SweepRow> temperature_sweep(const SyntheticSpec& spec,
                                        const train::TrainConfig& base,
                                        const std::vector<double>& taus,
                                        const std::filesystem::path& dataset,
                                        const std::filesystem::path& work);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace mcl::synth

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

// Patient-level prediction by majority voting over crop predictions,
// classification metrics, class activation maps and latent export.

#include <Eigen/Core>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/data.hpp"
#include "mcl/model.hpp"

namespace mcl::infer {

struct InferenceOptions {
  // Average crop probabilities instead of counting hard votes.
  bool soft_voting = false;
  int batch_size = 32;
};

struct GradePrediction {
  std::string patient_id;
  data::Modality modality = data::Modality::kFfpe;
  int true_grade = -1;
  Eigen::MatrixXd patch_probs;  // crops x C
  std::vector<int> patch_votes;  // histogram over grades
  int final_grade = -1;
  bool tie_broken = false;
};

// Voting rule. Each crop votes for its argmax (equal maxima go to the higher
// grade). The grade with most votes wins; ties go to the larger summed
// probability over the bag, then to the higher grade. Sums are taken over
// sorted values so the result does not depend on crop order. With
// soft_voting the summed probabilities decide directly.
GradePrediction vote(std::string patient_id, data::Modality modality,
                     const Eigen::MatrixXd& probs, bool soft_voting = false);

// Class probabilities of every crop in the bag.
Eigen::MatrixXd crop_probabilities(const model::BranchNetwork<float>& net,
                                   const std::vector<data::Crop>& crops, int batch_size);

// Throws Error(kInvalidInput) for an empty bag.
GradePrediction predict_patient(const model::BranchNetwork<float>& net,
                                const data::PatientBag& bag,
                                const InferenceOptions& options = {});

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  long support = 0;
  long predicted = 0;
};

struct ModalityMetrics {
  std::string modality;
  int num_classes = 0;
  long total = 0;
  double accuracy = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  std::vector<std::vector<long>> confusion;  // [truth][prediction]
  std::vector<ClassMetrics> per_class;
  long ties_broken = 0;
};

// Precision of a class that is never predicted is 0. Macro averages run
// over classes present in the truth or the predictions.
ModalityMetrics compute_metrics(const std::vector<int>& truth,
                                const std::vector<int>& predicted, int num_classes,
                                std::string modality = {});

struct ModalityEvaluation {
  std::vector<GradePrediction> predictions;  // sorted by patient id
  ModalityMetrics metrics;
};

// Predicts every bag (all of one modality) and scores against bag grades.
ModalityEvaluation evaluate_modality(const model::BranchNetwork<float>& net,
                                     const std::vector<data::PatientBag>& bags,
                                     int num_classes, const InferenceOptions& options = {});

struct MetricsReport {
  std::vector<ModalityEvaluation> modalities;
};

inline constexpr const char* kMetricsSchema = "mcl-metrics-v1";

// JSON document: schema, config hash, and per modality the metrics,
// confusion matrix and per-patient predictions.
std::string metrics_report_json(const MetricsReport& report, int num_classes,
                                const std::string& config_hash);

// ---- CAM ----

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// ReLU(sum_ch w_ch * F_ch) on the last feature map grid, unnormalized.
Heatmap cam_raw(const model::BranchNetwork<float>& net, const RgbImage& crop,
                int target_grade);

// Min-max normalizes into [0, 1] (a constant map becomes all zeros).
Heatmap normalize_heatmap(const Heatmap& h);
// Bilinear resize (pixel-centre aligned).
Heatmap resize_heatmap(const Heatmap& h, int width, int height);

// CAM upsampled to the crop size, then min-max normalized.
Heatmap compute_cam(const model::BranchNetwork<float>& net, const RgbImage& crop,
                    int target_grade);

std::vector<std::uint8_t> heatmap_to_gray(const Heatmap& h);

// ---- latent export ----

enum class LatentLayer { kH, kZNmc, kZLr };

// "h", "z_nmc", "z_lr"; throws Error(kInvalidParameter) otherwise.
LatentLayer parse_latent_layer(std::string_view name);
std::string_view latent_layer_name(LatentLayer layer);

// CSV: patient_id,modality,grade,crop_origin,f0..f{d-1}; one row per crop,
// bags in the given order. crop_origin is "<x>_<y>" in slide pixels.
std::string export_latents(const model::BranchNetwork<float>& net,
                           const std::vector<data::PatientBag>& bags, LatentLayer layer,
                           int num_classes, int batch_size = 32);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace mcl::infer

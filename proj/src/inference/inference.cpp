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


#include "mcl/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>
#include <set>

#include "mcl/error.hpp"

namespace mcl::infer {

using data::Modality;

namespace {

// Order-independent column sum.
double sorted_sum(const Eigen::MatrixXd& m, Eigen::Index col) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) v[static_cast<std::size_t>(r)] = m(r, col);
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

// Indices achieving the maximum of `score`.
template <typename V>
std::vector<int> argmax_set(const std::vector<V>& score) {
  std::vector<int> best;
  for (int i = 0; i < static_cast<int>(score.size()); ++i) {
    if (best.empty() || score[i] > score[best[0]]) {
      best = {i};
    } else if (score[i] == score[best[0]]) {
      best.push_back(i);
    }
  }
  return best;
}

}  // namespace

GradePrediction vote(std::string patient_id, Modality modality,
                     const Eigen::MatrixXd& probs, bool soft_voting) {
  require(probs.rows() > 0 && probs.cols() > 0, ErrorKind::kInvalidInput,
          "cannot vote over an empty bag");
  const int c = static_cast<int>(probs.cols());
  GradePrediction out;
  out.patient_id = std::move(patient_id);
  out.modality = modality;
  out.patch_probs = probs;
  out.patch_votes.assign(static_cast<std::size_t>(c), 0);
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    int best = 0;
    for (int g = 1; g < c; ++g) {
      if (probs(r, g) >= probs(r, best)) best = g;
    }
    ++out.patch_votes[static_cast<std::size_t>(best)];
  }
  std::vector<double> mass(static_cast<std::size_t>(c));
  for (int g = 0; g < c; ++g) mass[static_cast<std::size_t>(g)] = sorted_sum(probs, g);

  std::vector<int> tied = soft_voting ? argmax_set(mass) : argmax_set(out.patch_votes);
  out.tie_broken = tied.size() > 1;
  if (tied.size() > 1 && !soft_voting) {
    std::vector<double> tied_mass;
    for (int g : tied) tied_mass.push_back(mass[static_cast<std::size_t>(g)]);
    const auto by_mass = argmax_set(tied_mass);
    std::vector<int> next;
    for (int i : by_mass) next.push_back(tied[static_cast<std::size_t>(i)]);
    tied = std::move(next);
  }
  out.final_grade = tied.back();
  return out;
}

Eigen::MatrixXd crop_probabilities(const model::BranchNetwork<float>& net,
                                   const std::vector<data::Crop>& crops, int batch_size) {
  require(batch_size >= 1, ErrorKind::kInvalidParameter, "batch size must be >= 1");
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(crops.size()), net.num_classes());
  for (std::size_t start = 0; start < crops.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(crops.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const RgbImage*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&crops[i].pixels);
    const auto out = net.forward(model::images_to_tensor<float>(ptrs));
    probs.middleRows(static_cast<Eigen::Index>(start), out.probs.rows()) = out.probs;
  }
  return probs;
}

GradePrediction predict_patient(const model::BranchNetwork<float>& net,
                                const data::PatientBag& bag, const InferenceOptions& options) {
  require(!bag.crops.empty(), ErrorKind::kInvalidInput,
          "empty bag for patient " + bag.patient_id);
  auto pred = vote(bag.patient_id, bag.modality,
                   crop_probabilities(net, bag.crops, options.batch_size), options.soft_voting);
  pred.true_grade = bag.grade;
  return pred;
}

ModalityMetrics compute_metrics(const std::vector<int>& truth,
                                const std::vector<int>& predicted, int num_classes,
                                std::string modality) {
  require(truth.size() == predicted.size(), ErrorKind::kInvalidInput,
          "truth and prediction lengths differ");
  require(num_classes >= 1, ErrorKind::kInvalidParameter, "num_classes must be >= 1");
  ModalityMetrics m;
  m.modality = std::move(modality);
  m.num_classes = num_classes;
  m.total = static_cast<long>(truth.size());
  m.confusion.assign(static_cast<std::size_t>(num_classes),
                     std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes && predicted[i] >= 0 &&
                predicted[i] < num_classes,
            ErrorKind::kInvalidInput, "grade out of range");
    ++m.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  if (m.total == 0) {
    m.per_class.resize(static_cast<std::size_t>(num_classes));
    return m;
  }
  long correct = 0;
  int present = 0;
  for (int g = 0; g < num_classes; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    ClassMetrics c;
    for (int k = 0; k < num_classes; ++k) {
      c.support += m.confusion[gi][static_cast<std::size_t>(k)];
      c.predicted += m.confusion[static_cast<std::size_t>(k)][gi];
    }
    const long tp = m.confusion[gi][gi];
    correct += tp;
    c.precision = c.predicted > 0 ? static_cast<double>(tp) / static_cast<double>(c.predicted) : 0.0;
    c.recall = c.support > 0 ? static_cast<double>(tp) / static_cast<double>(c.support) : 0.0;
    const double w = static_cast<double>(c.support) / static_cast<double>(m.total);
    m.precision_weighted += w * c.precision;
    m.recall_weighted += w * c.recall;
    if (c.support > 0 || c.predicted > 0) {
      m.precision_macro += c.precision;
      m.recall_macro += c.recall;
      ++present;
    }
    m.per_class.push_back(c);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  m.precision_macro /= present;
  m.recall_macro /= present;
  return m;
}

ModalityEvaluation evaluate_modality(const model::BranchNetwork<float>& net,
                                     const std::vector<data::PatientBag>& bags,
                                     int num_classes, const InferenceOptions& options) {
  ModalityEvaluation eval;
  std::vector<const data::PatientBag*> order;
  for (const auto& b : bags) order.push_back(&b);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->patient_id < b->patient_id;
  });
  std::vector<int> truth, pred;
  std::string modality = bags.empty() ? "" : std::string(data::modality_name(bags[0].modality));
  for (const auto* b : order) {
    require(std::string(data::modality_name(b->modality)) == modality, ErrorKind::kInvalidInput,
            "evaluate_modality expects bags of one modality");
    eval.predictions.push_back(predict_patient(net, *b, options));
    truth.push_back(b->grade);
    pred.push_back(eval.predictions.back().final_grade);
  }
  eval.metrics = compute_metrics(truth, pred, num_classes, modality);
  for (const auto& p : eval.predictions) eval.metrics.ties_broken += p.tie_broken;
  return eval;
}

std::string metrics_report_json(const MetricsReport& report, int num_classes,
                                const std::string& config_hash) {
  using nlohmann::json;
  json mods = json::array();
  for (const auto& e : report.modalities) {
    const auto& m = e.metrics;
    json classes = json::array();
    for (int g = 0; g < static_cast<int>(m.per_class.size()); ++g) {
      const auto& c = m.per_class[static_cast<std::size_t>(g)];
      classes.push_back({{"grade", data::grade_name(g, num_classes)},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"support", c.support},
                         {"predicted", c.predicted}});
    }
    json preds = json::array();
    for (const auto& p : e.predictions) {
      preds.push_back({{"patient_id", p.patient_id},
                       {"true_grade", data::grade_name(p.true_grade, num_classes)},
                       {"predicted_grade", data::grade_name(p.final_grade, num_classes)},
                       {"votes", p.patch_votes},
                       {"crops", p.patch_probs.rows()},
                       {"tie_broken", p.tie_broken}});
    }
    mods.push_back({{"modality", m.modality},
                    {"patients", m.total},
                    {"accuracy", m.accuracy},
                    {"precision_weighted", m.precision_weighted},
                    {"recall_weighted", m.recall_weighted},
                    {"precision_macro", m.precision_macro},
                    {"recall_macro", m.recall_macro},
                    {"confusion", m.confusion},
                    {"per_grade", classes},
                    {"ties_broken", m.ties_broken},
                    {"predictions", preds}});
  }
  json doc = {{"schema", kMetricsSchema}, {"config_hash", config_hash}, {"modalities", mods}};
  return doc.dump(2) + "\n";
}

// ---- CAM ----

Heatmap cam_raw(const model::BranchNetwork<float>& net, const RgbImage& crop,
                int target_grade) {
  require(target_grade >= 0 && target_grade < net.num_classes(), ErrorKind::kInvalidParameter,
          "target grade out of range");
  const RgbImage* ptrs[] = {&crop};
  const auto out = net.forward(model::images_to_tensor<float>(ptrs));
  const auto& fm = out.feature_maps;
  require(fm.h() > 0 && fm.w() > 0, ErrorKind::kUnsupported,
          "backbone does not expose spatial feature maps");
  const auto w = net.classifier_weights(target_grade);
  Heatmap h{fm.w(), fm.h(), std::vector<double>(fm.plane(), 0.0)};
  for (int ch = 0; ch < fm.c(); ++ch) {
    const float* plane = fm.sample(0) + static_cast<std::size_t>(ch) * fm.plane();
    for (std::size_t i = 0; i < fm.plane(); ++i) {
      h.values[i] += static_cast<double>(w[static_cast<std::size_t>(ch)]) * plane[i];
    }
  }
  for (auto& v : h.values) v = std::max(v, 0.0);
  return h;
}

Heatmap normalize_heatmap(const Heatmap& h) {
  Heatmap out = h;
  if (h.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(h.values.begin(), h.values.end());
  const double mn = *lo, range = *hi - *lo;
  for (auto& v : out.values) v = range > 0.0 ? (v - mn) / range : 0.0;
  return out;
}

Heatmap resize_heatmap(const Heatmap& h, int width, int height) {
  require(h.width > 0 && h.height > 0 && width > 0 && height > 0,
          ErrorKind::kInvalidInput, "empty heatmap");
  Heatmap out{width, height, std::vector<double>(static_cast<std::size_t>(width) * height)};
  const double sx = static_cast<double>(h.width) / width;
  const double sy = static_cast<double>(h.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, h.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, h.width - 1);
      const double tx = fx - x0;
      const double top = h.at(x0, y0) * (1 - tx) + h.at(x1, y0) * tx;
      const double bot = h.at(x0, y1) * (1 - tx) + h.at(x1, y1) * tx;
      out.values[static_cast<std::size_t>(y) * width + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

Heatmap compute_cam(const model::BranchNetwork<float>& net, const RgbImage& crop,
                    int target_grade) {
  return normalize_heatmap(
      resize_heatmap(cam_raw(net, crop, target_grade), crop.width, crop.height));
}

std::vector<std::uint8_t> heatmap_to_gray(const Heatmap& h) {
  std::vector<std::uint8_t> out(h.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(h.values[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

// ---- latent export ----

LatentLayer parse_latent_layer(std::string_view name) {
  if (name == "h") return LatentLayer::kH;
  if (name == "z_nmc") return LatentLayer::kZNmc;
  if (name == "z_lr") return LatentLayer::kZLr;
  fail(ErrorKind::kInvalidParameter,
       "unknown latent layer '" + std::string(name) + "' (expected h, z_nmc or z_lr)");
}

std::string_view latent_layer_name(LatentLayer layer) {
  switch (layer) {
    case LatentLayer::kH: return "h";
    case LatentLayer::kZNmc: return "z_nmc";
    case LatentLayer::kZLr: return "z_lr";
  }
  return "h";
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string export_latents(const model::BranchNetwork<float>& net,
                           const std::vector<data::PatientBag>& bags, LatentLayer layer,
                           int num_classes, int batch_size) {
  require(batch_size >= 1, ErrorKind::kInvalidParameter, "batch size must be >= 1");
  std::string out = "patient_id,modality,grade,crop_origin";
  for (int j = 0; j < net.feature_dim(); ++j) out += ",f" + std::to_string(j);
  out += "\n";
  for (const auto& bag : bags) {
    for (std::size_t start = 0; start < bag.crops.size();
         start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end =
          std::min(bag.crops.size(), start + static_cast<std::size_t>(batch_size));
      std::vector<const RgbImage*> ptrs;
      for (std::size_t i = start; i < end; ++i) ptrs.push_back(&bag.crops[i].pixels);
      const auto fwd = net.forward(model::images_to_tensor<float>(ptrs));
      const Eigen::MatrixXd& z = layer == LatentLayer::kH      ? fwd.h
                                 : layer == LatentLayer::kZNmc ? fwd.z_nmc
                                                               : fwd.z_lr;
      for (std::size_t i = start; i < end; ++i) {
        const auto& c = bag.crops[i];
        out += data::csv_escape(bag.patient_id) + "," +
               std::string(data::modality_name(bag.modality)) + "," +
               data::grade_name(bag.grade, num_classes) + "," + std::to_string(c.x) + "_" +
               std::to_string(c.y);
        const auto r = static_cast<Eigen::Index>(i - start);
        for (Eigen::Index j = 0; j < z.cols(); ++j) out += "," + format_double(z(r, j));
        out += "\n";
      }
    }
  }
  return out;
}

}  // namespace mcl::infer

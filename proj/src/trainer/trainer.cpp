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


#include "mcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include <spdlog/spdlog.h>

#include "mcl/error.hpp"
#include "mcl/inference.hpp"
#include "mcl/io.hpp"
#include "mcl/kernels.hpp"

namespace mcl::train {

using nlohmann::json;

std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kSingleFfpe: return "single-ffpe";
    case TrainMode::kSingleFrozen: return "single-frozen";
    case TrainMode::kMixed: return "mixed";
    case TrainMode::kMutual: return "mutual";
  }
  return "mutual";
}

TrainMode parse_mode(std::string_view s) {
  for (auto m : {TrainMode::kSingleFfpe, TrainMode::kSingleFrozen, TrainMode::kMixed,
                 TrainMode::kMutual}) {
    if (mode_name(m) == s) return m;
  }
  fail(ErrorKind::kConfig, "unknown mode '" + std::string(s) +
                               "' (expected mutual, single-ffpe, single-frozen or mixed)");
}

std::string_view contrastive_name(ContrastiveKind k) {
  switch (k) {
    case ContrastiveKind::kNmc: return "nmc";
    case ContrastiveKind::kNtXent: return "nt_xent";
    case ContrastiveKind::kKl: return "kl";
    case ContrastiveKind::kNone: return "none";
  }
  return "nmc";
}

ContrastiveKind parse_contrastive(std::string_view s) {
  for (auto k : {ContrastiveKind::kNmc, ContrastiveKind::kNtXent, ContrastiveKind::kKl,
                 ContrastiveKind::kNone}) {
    if (contrastive_name(k) == s) return k;
  }
  fail(ErrorKind::kConfig, "unknown contrastive loss '" + std::string(s) +
                               "' (expected nmc, nt_xent, kl or none)");
}

// ---- config ----

std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  const int min_batch = c.mode == TrainMode::kMutual ? 2 : 1;
  check(c.batch_size >= min_batch,
        "batch_size must be >= " + std::to_string(min_batch) + " in " +
            std::string(mode_name(c.mode)) + " mode");
  check(c.epochs >= 0, "epochs must be >= 0");
  check(std::isfinite(c.lr_max) && c.lr_max >= 0.0, "lr_max must be finite and >= 0");
  check(std::isfinite(c.lr_min) && c.lr_min >= 0.0 && c.lr_min <= c.lr_max,
        "lr_min must satisfy 0 <= lr_min <= lr_max");
  check(std::isfinite(c.restart_period_epochs) && c.restart_period_epochs > 0.0,
        "restart_period_epochs must be > 0");
  check(std::isfinite(c.restart_mult) && c.restart_mult >= 1.0, "restart_mult must be >= 1");
  check(std::isfinite(c.tau) && c.tau > 0.0, "tau must be > 0 (temperature)");
  check(std::isfinite(c.delta) && c.delta >= 0.0, "delta must be >= 0");
  check(c.taylor_t >= 1, "taylor_t must be >= 1");
  for (auto [name, w] : {std::pair{"w_cls", c.loss_weights.cls},
                         std::pair{"w_nmc", c.loss_weights.nmc},
                         std::pair{"w_lr", c.loss_weights.lr}}) {
    check(std::isfinite(w) && w >= 0.0, std::string(name) + " must be finite and >= 0");
  }
  check(c.model.num_classes >= 2, "num_classes must be >= 2");
  const auto names = model::registered_backbones();
  check(std::find(names.begin(), names.end(), c.model.backbone) != names.end(),
        "unknown backbone '" + c.model.backbone + "'");
  check(std::isfinite(c.eps) && c.eps > 0.0, "eps must be > 0");
  check(std::isfinite(c.sv_threshold) && c.sv_threshold >= 0.0 && c.sv_threshold < 1.0,
        "sv_threshold must lie in [0, 1)");
  check(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam_beta1 must lie in [0, 1)");
  check(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam_beta2 must lie in [0, 1)");
  check(std::isfinite(c.adam_eps) && c.adam_eps > 0.0, "adam_eps must be > 0");
  check(c.collapse_patience >= 1, "collapse_patience must be >= 1");
  check(std::isfinite(c.collapse_variance) && c.collapse_variance >= 0.0,
        "collapse_variance must be >= 0");
  check(c.eval_batch_size >= 1, "eval_batch_size must be >= 1");
  const auto& a = c.augmentation;
  check(a.hue_shift >= 0.0 && a.hue_shift <= 0.5, "aug_hue_shift must lie in [0, 0.5]");
  for (auto [name, v] : {std::pair{"aug_saturation_shift", a.saturation_shift},
                         std::pair{"aug_value_shift", a.value_shift},
                         std::pair{"aug_brightness", a.brightness},
                         std::pair{"aug_contrast", a.contrast}}) {
    check(v >= 0.0 && v <= 1.0, std::string(name) + " must lie in [0, 1]");
  }
  return errs;
}

json config_to_json(const TrainConfig& c) {
  const auto& a = c.augmentation;
  return {{"mode", mode_name(c.mode)},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr_max", c.lr_max},
          {"lr_min", c.lr_min},
          {"restart_period_epochs", c.restart_period_epochs},
          {"restart_mult", c.restart_mult},
          {"tau", c.tau},
          {"delta", c.delta},
          {"taylor_t", c.taylor_t},
          {"w_cls", c.loss_weights.cls},
          {"w_nmc", c.loss_weights.nmc},
          {"w_lr", c.loss_weights.lr},
          {"seed", c.seed},
          {"backbone", c.model.backbone},
          {"num_classes", c.model.num_classes},
          {"shared_head", c.model.shared_head},
          {"eps", c.eps},
          {"sv_threshold", c.sv_threshold},
          {"stacking", c.stacking == losses::Stacking::kVertical ? "vertical" : "horizontal"},
          {"norm_stats", c.norm_stats == losses::NormStatistics::kPerSample ? "sample" : "batch"},
          {"contrastive", contrastive_name(c.contrastive)},
          {"alternating", c.alternating},
          {"augment", c.augment},
          {"aug_rotate", a.rotate},
          {"aug_flip_horizontal", a.flip_horizontal},
          {"aug_flip_vertical", a.flip_vertical},
          {"aug_hsv", a.hsv},
          {"aug_hue_shift", a.hue_shift},
          {"aug_saturation_shift", a.saturation_shift},
          {"aug_value_shift", a.value_shift},
          {"aug_brightness_contrast", a.brightness_contrast},
          {"aug_brightness", a.brightness},
          {"aug_contrast", a.contrast},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"collapse_patience", c.collapse_patience},
          {"collapse_variance", c.collapse_variance},
          {"soft_voting", c.soft_voting},
          {"eval_batch_size", c.eval_batch_size}};
}

TrainConfig config_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kConfig, "config must be an object");
  TrainConfig c;
  const json defaults = config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    require(defaults.contains(key), ErrorKind::kConfig, "unknown config key '" + key + "'");
    const json& d = defaults.at(key);
    const bool ok = (d.is_string() && value.is_string()) ||
                    (d.is_boolean() && value.is_boolean()) ||
                    (d.is_number_float() && value.is_number()) ||
                    (d.is_number_integer() && value.is_number_integer());
    require(ok, ErrorKind::kConfig, "config key '" + key + "' has the wrong type");
  }
  json m = defaults;
  m.update(j);
  auto& a = c.augmentation;
  c.mode = parse_mode(m.at("mode").get<std::string>());
  c.batch_size = m.at("batch_size").get<int>();
  c.epochs = m.at("epochs").get<int>();
  c.lr_max = m.at("lr_max").get<double>();
  c.lr_min = m.at("lr_min").get<double>();
  c.restart_period_epochs = m.at("restart_period_epochs").get<double>();
  c.restart_mult = m.at("restart_mult").get<double>();
  c.tau = m.at("tau").get<double>();
  c.delta = m.at("delta").get<double>();
  c.taylor_t = m.at("taylor_t").get<int>();
  c.loss_weights = {m.at("w_cls").get<double>(), m.at("w_nmc").get<double>(),
                    m.at("w_lr").get<double>()};
  require(!m.at("seed").is_number_integer() || m.at("seed").is_number_unsigned() ||
              m.at("seed").get<std::int64_t>() >= 0,
          ErrorKind::kConfig, "seed must be non-negative");
  c.seed = m.at("seed").get<std::uint64_t>();
  c.model.backbone = m.at("backbone").get<std::string>();
  c.model.num_classes = m.at("num_classes").get<int>();
  c.model.shared_head = m.at("shared_head").get<bool>();
  c.eps = m.at("eps").get<double>();
  c.sv_threshold = m.at("sv_threshold").get<double>();
  const auto stacking = m.at("stacking").get<std::string>();
  require(stacking == "vertical" || stacking == "horizontal", ErrorKind::kConfig,
          "stacking must be vertical or horizontal");
  c.stacking = stacking == "vertical" ? losses::Stacking::kVertical : losses::Stacking::kHorizontal;
  const auto stats = m.at("norm_stats").get<std::string>();
  require(stats == "sample" || stats == "batch", ErrorKind::kConfig,
          "norm_stats must be sample or batch");
  c.norm_stats = stats == "sample" ? losses::NormStatistics::kPerSample
                                   : losses::NormStatistics::kPerBatch;
  c.contrastive = parse_contrastive(m.at("contrastive").get<std::string>());
  c.alternating = m.at("alternating").get<bool>();
  c.augment = m.at("augment").get<bool>();
  a.rotate = m.at("aug_rotate").get<bool>();
  a.flip_horizontal = m.at("aug_flip_horizontal").get<bool>();
  a.flip_vertical = m.at("aug_flip_vertical").get<bool>();
  a.hsv = m.at("aug_hsv").get<bool>();
  a.hue_shift = m.at("aug_hue_shift").get<double>();
  a.saturation_shift = m.at("aug_saturation_shift").get<double>();
  a.value_shift = m.at("aug_value_shift").get<double>();
  a.brightness_contrast = m.at("aug_brightness_contrast").get<bool>();
  a.brightness = m.at("aug_brightness").get<double>();
  a.contrast = m.at("aug_contrast").get<double>();
  c.adam_beta1 = m.at("adam_beta1").get<double>();
  c.adam_beta2 = m.at("adam_beta2").get<double>();
  c.adam_eps = m.at("adam_eps").get<double>();
  c.collapse_patience = m.at("collapse_patience").get<int>();
  c.collapse_variance = m.at("collapse_variance").get<double>();
  c.soft_voting = m.at("soft_voting").get<bool>();
  c.eval_batch_size = m.at("eval_batch_size").get<int>();
  return c;
}

std::string config_hash(const TrainConfig& config) {
  return io::sha256_hex(config_to_json(config).dump());
}

// ---- schedule and optimizer ----

double lr_schedule(std::int64_t step, int steps_per_epoch, const TrainConfig& c) {
  require(step >= 0, ErrorKind::kInvalidParameter, "step must be >= 0");
  require(steps_per_epoch >= 1, ErrorKind::kInvalidParameter, "steps_per_epoch must be >= 1");
  double t = static_cast<double>(step) / steps_per_epoch;  // epochs
  double window = c.restart_period_epochs;
  while (t >= window) {
    t -= window;
    window *= c.restart_mult;
  }
  constexpr double kPi = 3.14159265358979323846;
  return c.lr_min + 0.5 * (c.lr_max - c.lr_min) * (1.0 + std::cos(kPi * t / window));
}

int steps_per_epoch(const TrainConfig& config, const data::PairedCohort& cohort) {
  std::size_t crops = 0;
  switch (config.mode) {
    case TrainMode::kMutual:
    case TrainMode::kSingleFfpe: crops = cohort.total_crops(data::Modality::kFfpe); break;
    case TrainMode::kSingleFrozen: crops = cohort.total_crops(data::Modality::kFrozen); break;
    case TrainMode::kMixed:
      crops = cohort.total_crops(data::Modality::kFfpe) +
              cohort.total_crops(data::Modality::kFrozen);
      break;
  }
  const auto n = static_cast<std::size_t>(config.batch_size);
  return std::max(1, static_cast<int>((crops + n - 1) / n));
}

void adam_step(model::ParameterBuffer<float>& params, AdamState& state, double lr,
               const TrainConfig& config) {
  const std::size_t n = params.size();
  if (state.m.size() != n) {
    state.m.assign(n, 0.0f);
    state.v.assign(n, 0.0f);
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  kernels::AdamStep s{lr,
                      config.adam_beta1,
                      config.adam_beta2,
                      config.adam_eps,
                      1.0 - std::pow(config.adam_beta1, t),
                      1.0 - std::pow(config.adam_beta2, t)};
  kernels::adam_update(params.values().data(), params.grads().data(), state.m.data(),
                       state.v.data(), n, s);
}

// ---- losses and gradients ----

double latent_batch_variance(const Eigen::MatrixXd& z, const TrainConfig& config) {
  if (z.rows() < 2 || !z.allFinite()) return z.allFinite() ? 0.0 : std::nan("");
  const Eigen::MatrixXd g =
      losses::layer_normalize(losses::LatentMatrix(z), config.eps, config.norm_stats).values();
  const Eigen::RowVectorXd mean = g.colwise().mean();
  const double n = static_cast<double>(g.rows());
  return ((g.rowwise() - mean).array().square().colwise().sum() / n).mean();
}

namespace {

losses::NmcOptions nmc_options(const TrainConfig& c) {
  return {c.tau, c.eps, c.norm_stats};
}

losses::LowRankOptions lowrank_options(const TrainConfig& c) {
  return {c.delta, c.sv_threshold, c.stacking};
}

bool finite(const losses::LossBreakdown& b) {
  return std::isfinite(b.cls) && std::isfinite(b.nmc) && std::isfinite(b.lr) &&
         std::isfinite(b.total);
}

void add_to(Eigen::MatrixXd& dst, const Eigen::MatrixXd& g) {
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

}  // namespace

template <typename T>
MutualGradients mutual_gradients(model::BranchNetwork<T>& ffpe_net,
                                 model::BranchNetwork<T>& frozen_net, const Tensor<T>& ffpe,
                                 const Tensor<T>& frozen, const std::vector<int>& labels,
                                 const TrainConfig& config) {
  require(ffpe.n() == frozen.n() && static_cast<std::size_t>(ffpe.n()) == labels.size(),
          ErrorKind::kInvalidInput, "paired batch sizes disagree");
  typename model::BranchNetwork<T>::Cache ca, cb;
  const auto oa = ffpe_net.forward(ffpe, &ca);
  const auto ob = frozen_net.forward(frozen, &cb);
  const losses::GradeLabels gl(labels, config.model.num_classes);
  const auto& w = config.loss_weights;

  MutualGradients out;
  out.latent_variance = std::min(latent_batch_variance(oa.z_nmc, config),
                                 latent_batch_variance(ob.z_nmc, config));
  model::UpstreamGradients ua, ub;
  const auto ce_a = losses::taylor_ce_batch(oa.probs, gl, config.taylor_t);
  const auto ce_b = losses::taylor_ce_batch(ob.probs, gl, config.taylor_t);
  if (w.cls != 0.0) {
    ua.d_logits = w.cls * model::softmax_backward(oa.probs, ce_a.grad);
    ub.d_logits = w.cls * model::softmax_backward(ob.probs, ce_b.grad);
  }

  const bool latents_finite = oa.z_nmc.allFinite() && ob.z_nmc.allFinite() &&
                              oa.z_lr.allFinite() && ob.z_lr.allFinite();
  double contrastive = 0.0;
  double lowrank = 0.0;
  if (!latents_finite) {
    contrastive = lowrank = std::nan("");
  } else {
    const losses::LatentMatrix za(oa.z_nmc), zb(ob.z_nmc);
    switch (config.contrastive) {
      case ContrastiveKind::kNmc:
        if (w.nmc != 0.0) {
          const auto g = losses::nmc_loss_grad(za, zb, nmc_options(config));
          contrastive = g.value;
          ua.d_z_nmc = w.nmc * g.grad_a;
          ub.d_z_nmc = w.nmc * g.grad_b;
        } else {
          contrastive = losses::nmc_loss(za, zb, nmc_options(config));
        }
        break;
      case ContrastiveKind::kNtXent: {
        const auto g = losses::nt_xent_grad(za, zb, config.tau);
        contrastive = g.value;
        if (w.nmc != 0.0) {
          ua.d_z_nmc = w.nmc * g.grad_a;
          ub.d_z_nmc = w.nmc * g.grad_b;
        }
        break;
      }
      case ContrastiveKind::kKl: {
        const auto g = losses::kl_mutual_batch(oa.probs, ob.probs);
        contrastive = g.value;
        if (w.nmc != 0.0) {
          add_to(ua.d_logits, w.nmc * model::softmax_backward(oa.probs, g.grad_a));
          add_to(ub.d_logits, w.nmc * model::softmax_backward(ob.probs, g.grad_b));
        }
        break;
      }
      case ContrastiveKind::kNone:
        break;
    }
    const losses::LatentMatrix la(oa.z_lr), lb(ob.z_lr);
    if (w.lr != 0.0) {
      const auto g = losses::lowrank_subgradient(la, lb, gl, lowrank_options(config));
      lowrank = g.value;
      ua.d_z_lr = w.lr * g.grad_a;
      ub.d_z_lr = w.lr * g.grad_b;
    } else {
      lowrank = losses::lowrank_loss(la, lb, gl, lowrank_options(config)).value;
    }
  }
  std::tie(out.ffpe, out.frozen) = losses::total_loss(ce_a.value, ce_b.value, contrastive,
                                                      lowrank, w);
  out.finite = finite(out.ffpe) && finite(out.frozen) && std::isfinite(out.latent_variance);
  ffpe_net.params().zero_grad();
  frozen_net.params().zero_grad();
  if (out.finite) {
    ffpe_net.backward(ca, ua);
    frozen_net.backward(cb, ub);
  }
  return out;
}

template <typename T>
MutualGradients single_gradients(model::BranchNetwork<T>& net, const Tensor<T>& images,
                                 const std::vector<int>& labels, const TrainConfig& config) {
  require(static_cast<std::size_t>(images.n()) == labels.size(), ErrorKind::kInvalidInput,
          "batch and label counts disagree");
  typename model::BranchNetwork<T>::Cache cache;
  const auto o = net.forward(images, &cache);
  const losses::GradeLabels gl(labels, config.model.num_classes);
  const auto ce = losses::taylor_ce_batch(o.probs, gl, config.taylor_t);
  MutualGradients out;
  out.latent_variance = latent_batch_variance(o.z_nmc, config);
  out.ffpe.cls = config.loss_weights.cls * ce.value;
  out.ffpe.total = out.ffpe.cls;
  out.frozen = out.ffpe;
  out.finite = finite(out.ffpe) && std::isfinite(out.latent_variance);
  net.params().zero_grad();
  if (out.finite && config.loss_weights.cls != 0.0) {
    model::UpstreamGradients up;
    up.d_logits = config.loss_weights.cls * model::softmax_backward(o.probs, ce.grad);
    net.backward(cache, up);
  }
  return out;
}

template MutualGradients mutual_gradients<float>(model::BranchNetwork<float>&,
                                                 model::BranchNetwork<float>&,
                                                 const Tensor<float>&, const Tensor<float>&,
                                                 const std::vector<int>&, const TrainConfig&);
template MutualGradients mutual_gradients<double>(model::BranchNetwork<double>&,
                                                  model::BranchNetwork<double>&,
                                                  const Tensor<double>&, const Tensor<double>&,
                                                  const std::vector<int>&, const TrainConfig&);
template MutualGradients single_gradients<float>(model::BranchNetwork<float>&,
                                                 const Tensor<float>&, const std::vector<int>&,
                                                 const TrainConfig&);
template MutualGradients single_gradients<double>(model::BranchNetwork<double>&,
                                                  const Tensor<double>&, const std::vector<int>&,
                                                  const TrainConfig&);

// ---- trainer ----

Trainer::Trainer(const TrainConfig& config, int spe)
    : config_(config), steps_per_epoch_(spe) {
  const auto errs = validate(config);
  if (!errs.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& e : errs) msg += "\n  " + e;
    fail(ErrorKind::kConfig, msg);
  }
  require(spe >= 1, ErrorKind::kInvalidParameter, "steps_per_epoch must be >= 1");
  switch (config.mode) {
    case TrainMode::kMutual:
      branches_.emplace_back(config.model, model::branch_seed(config.seed, 0));
      branches_.emplace_back(config.model, model::branch_seed(config.seed, 1));
      break;
    case TrainMode::kSingleFrozen:
      branches_.emplace_back(config.model, model::branch_seed(config.seed, 1));
      break;
    case TrainMode::kSingleFfpe:
    case TrainMode::kMixed:
      branches_.emplace_back(config.model, model::branch_seed(config.seed, 0));
      break;
  }
  state_.sampler = Rng(derive_seed(config.seed, "sampler"));
  state_.adam.resize(branches_.size());
}

const model::BranchNetwork<float>& Trainer::network_for(data::Modality m) const {
  if (config_.mode == TrainMode::kMutual) return branches_.at(static_cast<std::size_t>(m));
  return branches_.at(0);
}

StepResult Trainer::finish_step(StepResult r, const MutualGradients& g) {
  r.ffpe = g.ffpe;
  r.frozen = g.frozen;
  if (!g.finite) {
    r.collapsed = true;
    r.collapse_reason = "non-finite loss (ffpe cls " + std::to_string(g.ffpe.cls) + ", nmc " +
                        std::to_string(g.ffpe.nmc) + ", lr " + std::to_string(g.ffpe.lr) +
                        "; frozen cls " + std::to_string(g.frozen.cls) + ")";
  } else {
    for (const auto& b : branches_) {
      const auto v = b.params().values();
      if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
        r.collapsed = true;
        r.collapse_reason = "non-finite parameter after update";
      }
    }
  }
  if (!r.collapsed && config_.batch_size >= 2) {
    if (g.latent_variance < config_.collapse_variance) {
      if (++state_.low_variance_streak >= config_.collapse_patience) {
        r.collapsed = true;
        r.collapse_reason = "latent batch variance below " +
                            json(config_.collapse_variance).dump() + " for " +
                            std::to_string(state_.low_variance_streak) + " steps";
      }
    } else {
      state_.low_variance_streak = 0;
    }
  }
  if (r.collapsed) {
    state_.collapse = CollapseEvent{state_.step, state_.epoch, r.collapse_reason};
  }
  ++state_.step;
  return r;
}

namespace {

Tensor<float> to_tensor(const std::vector<RgbImage>& images) {
  std::vector<const RgbImage*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  return model::images_to_tensor<float>(ptrs);
}

}  // namespace

StepResult Trainer::train_step(const data::PairedBatch& batch) {
  require(config_.mode == TrainMode::kMutual, ErrorKind::kInvalidInput,
          "train_step requires mutual mode");
  StepResult r;
  r.lr = lr_schedule(state_.step, steps_per_epoch_, config_);
  const auto g = mutual_gradients(branches_[0], branches_[1], to_tensor(batch.ffpe_images),
                                  to_tensor(batch.frozen_images), batch.labels, config_);
  if (g.finite) {
    for (std::size_t b = 0; b < 2; ++b) {
      if (config_.alternating && static_cast<std::size_t>(state_.step % 2) != b) continue;
      adam_step(branches_[b].params(), state_.adam[b], r.lr, config_);
    }
  }
  return finish_step(r, g);
}

StepResult Trainer::train_single_step(const data::CropBatch& batch) {
  require(config_.mode != TrainMode::kMutual, ErrorKind::kInvalidInput,
          "train_single_step requires a single or mixed mode");
  StepResult r;
  r.lr = lr_schedule(state_.step, steps_per_epoch_, config_);
  const auto g = single_gradients(branches_[0], to_tensor(batch.images), batch.labels, config_);
  if (g.finite) adam_step(branches_[0].params(), state_.adam[0], r.lr, config_);
  auto res = finish_step(r, g);
  if (config_.mode == TrainMode::kSingleFrozen) {
    res.ffpe = {};
  } else {
    res.frozen = {};
  }
  return res;
}

// ---- checkpoints ----

namespace {

json collapse_json(const std::optional<CollapseEvent>& c) {
  if (!c) return nullptr;
  return {{"step", c->step}, {"epoch", c->epoch}, {"reason", c->reason}};
}

std::optional<CollapseEvent> collapse_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return CollapseEvent{j.at("step").get<std::int64_t>(), j.at("epoch").get<int>(),
                       j.at("reason").get<std::string>()};
}

}  // namespace

std::string serialize_checkpoint(const Trainer& trainer) {
  const auto& st = trainer.state();
  json blobs = json::array();
  std::string payload;
  auto add = [&](const std::string& name, std::span<const float> v) {
    blobs.push_back({{"name", name}, {"count", v.size()}});
    payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  };
  json adam_t = json::array();
  for (std::size_t b = 0; b < trainer.num_branches(); ++b) {
    const std::string prefix = "branch" + std::to_string(b);
    add(prefix + ".params", trainer.branch(b).params().values());
    const auto& a = st.adam[b];
    std::vector<float> m = a.m, v = a.v;
    m.resize(trainer.branch(b).params().size(), 0.0f);
    v.resize(m.size(), 0.0f);
    add(prefix + ".adam_m", m);
    add(prefix + ".adam_v", v);
    adam_t.push_back(a.t);
  }
  json meta = {{"format", kCheckpointMagic},
               {"config", config_to_json(trainer.config())},
               {"config_hash", config_hash(trainer.config())},
               {"steps_per_epoch", trainer.steps_per_epoch()},
               {"step", st.step},
               {"epoch", st.epoch},
               {"sampler_rng", serialize_rng(st.sampler)},
               {"adam_t", adam_t},
               {"low_variance_streak", st.low_variance_streak},
               {"collapse", collapse_json(st.collapse)},
               {"history", st.history},
               {"best_epoch", st.best_epoch},
               {"best_score", st.best_score},
               {"float_bytes", sizeof(float)},
               {"blobs", blobs}};
  const std::string text = meta.dump();
  return std::string(kCheckpointMagic) + "\n" + std::to_string(text.size()) + "\n" + text +
         payload;
}

Trainer deserialize_checkpoint(const std::string& bytes) {
  const std::string magic = std::string(kCheckpointMagic) + "\n";
  require(bytes.compare(0, magic.size(), magic) == 0, ErrorKind::kIo,
          "not an mcl-ckpt-v1 checkpoint");
  const auto nl = bytes.find('\n', magic.size());
  require(nl != std::string::npos, ErrorKind::kIo, "truncated checkpoint header");
  std::size_t meta_len = 0;
  try {
    meta_len = std::stoul(bytes.substr(magic.size(), nl - magic.size()));
  } catch (const std::exception&) {
    fail(ErrorKind::kIo, "bad checkpoint header length");
  }
  require(nl + 1 + meta_len <= bytes.size(), ErrorKind::kIo, "truncated checkpoint metadata");
  json meta;
  try {
    meta = json::parse(bytes.substr(nl + 1, meta_len));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("bad checkpoint metadata: ") + e.what());
  }
  std::size_t pos = nl + 1 + meta_len;
  try {
    require(meta.at("float_bytes").get<std::size_t>() == sizeof(float), ErrorKind::kIo,
            "checkpoint float size mismatch");
    const TrainConfig config = config_from_json(meta.at("config"));
    Trainer trainer(config, meta.at("steps_per_epoch").get<int>());
    auto& st = trainer.state();
    st.step = meta.at("step").get<std::int64_t>();
    st.epoch = meta.at("epoch").get<int>();
    st.sampler = deserialize_rng(meta.at("sampler_rng").get<std::string>());
    st.low_variance_streak = meta.at("low_variance_streak").get<int>();
    st.collapse = collapse_from_json(meta.at("collapse"));
    st.history = meta.at("history");
    st.best_epoch = meta.at("best_epoch").get<int>();
    st.best_score = meta.at("best_score").get<double>();
    const auto& blobs = meta.at("blobs");
    require(blobs.size() == 3 * trainer.num_branches(), ErrorKind::kIo,
            "checkpoint blob count does not match the mode");
    auto read_into = [&](const json& blob, std::span<float> dst) {
      const auto count = blob.at("count").get<std::size_t>();
      require(count == dst.size(), ErrorKind::kIo,
              "checkpoint blob " + blob.at("name").get<std::string>() + " has the wrong size");
      const std::size_t n = count * sizeof(float);
      require(pos + n <= bytes.size(), ErrorKind::kIo, "truncated checkpoint payload");
      std::memcpy(dst.data(), bytes.data() + pos, n);
      pos += n;
    };
    for (std::size_t b = 0; b < trainer.num_branches(); ++b) {
      auto& params = trainer.branch(b).params();
      auto& adam = st.adam[b];
      adam.m.assign(params.size(), 0.0f);
      adam.v.assign(params.size(), 0.0f);
      read_into(blobs.at(3 * b), params.values());
      read_into(blobs.at(3 * b + 1), adam.m);
      read_into(blobs.at(3 * b + 2), adam.v);
      adam.t = meta.at("adam_t").at(b).get<std::int64_t>();
    }
    require(pos == bytes.size(), ErrorKind::kIo, "trailing bytes in checkpoint");
    return trainer;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, std::string("bad checkpoint metadata: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    fail(ErrorKind::kIo, std::string("bad checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer) {
  io::write_file_atomic(path, serialize_checkpoint(trainer));
}

Trainer load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

// ---- fit ----

namespace {

constexpr const char* kReportVersion = "mcl-train-report-v1";

json breakdown_json(const losses::LossBreakdown& b) {
  return {{"cls", b.cls}, {"nmc", b.nmc}, {"lr", b.lr}, {"total", b.total}};
}

struct LossAccumulator {
  losses::LossBreakdown sum;
  long count = 0;
  void add(const losses::LossBreakdown& b) {
    sum.cls += b.cls;
    sum.nmc += b.nmc;
    sum.lr += b.lr;
    sum.total += b.total;
    ++count;
  }
  json mean() const {
    if (count == 0) return nullptr;
    const double n = static_cast<double>(count);
    return breakdown_json({sum.cls / n, sum.nmc / n, sum.lr / n, sum.total / n});
  }
};

std::vector<std::pair<data::Modality, std::size_t>> evaluated(TrainMode mode) {
  switch (mode) {
    case TrainMode::kMutual: return {{data::Modality::kFfpe, 0}, {data::Modality::kFrozen, 1}};
    case TrainMode::kSingleFfpe: return {{data::Modality::kFfpe, 0}};
    case TrainMode::kSingleFrozen: return {{data::Modality::kFrozen, 0}};
    case TrainMode::kMixed: return {{data::Modality::kFfpe, 0}, {data::Modality::kFrozen, 0}};
  }
  return {};
}

// Validation record and score for the current parameters.
std::pair<json, double> validate_epoch(const Trainer& tr, const data::PairedCohort& val) {
  const auto& c = tr.config();
  if (val.size() == 0) {
    return {nullptr, static_cast<double>(tr.state().epoch)};
  }
  json rec = json::object();
  double score = 0.0;
  const auto mods = evaluated(c.mode);
  for (const auto& [m, b] : mods) {
    const auto ev = infer::evaluate_modality(tr.branch(b), val.bags(m), c.model.num_classes,
                                             {c.soft_voting, c.eval_batch_size});
    rec[std::string(data::modality_name(m))] = {
        {"accuracy", ev.metrics.accuracy},
        {"precision_weighted", ev.metrics.precision_weighted},
        {"recall_weighted", ev.metrics.recall_weighted}};
    score += ev.metrics.accuracy;
  }
  score /= static_cast<double>(mods.size());
  rec["score"] = score;
  return {rec, score};
}

std::string lr_curve(const Trainer& tr) {
  std::string out = "step,epoch,lr\n";
  const int spe = tr.steps_per_epoch();
  for (std::int64_t s = 0; s < tr.state().step; ++s) {
    out += std::to_string(s) + "," + std::to_string(s / spe) + "," +
           json(lr_schedule(s, spe, tr.config())).dump() + "\n";
  }
  return out;
}

std::string report(const Trainer& tr) {
  const auto& st = tr.state();
  json j = {{"version", kReportVersion},
            {"config", config_to_json(tr.config())},
            {"config_hash", config_hash(tr.config())},
            {"mode", mode_name(tr.config().mode)},
            {"steps_per_epoch", tr.steps_per_epoch()},
            {"total_steps", st.step},
            {"epochs_completed", st.epoch},
            {"epochs", st.history},
            {"best_epoch", st.best_epoch},
            {"best_validation_score", st.best_score},
            {"status", st.collapse ? "collapsed" : "ok"},
            {"collapse", collapse_json(st.collapse)}};
  return j.dump(2) + "\n";
}

void update_best(Trainer& tr, double score, FitResult& result, const FitOptions& opts) {
  auto& st = tr.state();
  if (st.best_epoch >= 0 && !(score > st.best_score)) return;
  st.best_epoch = st.epoch;
  st.best_score = score;
  result.best_checkpoint = serialize_checkpoint(tr);
  if (!opts.out_dir.empty()) {
    io::write_file_atomic(opts.out_dir / "best.ckpt", result.best_checkpoint);
  }
}

FitResult run(Trainer& tr, const data::PairedCohort& train, const data::PairedCohort& val,
              const FitOptions& opts) {
  FitResult result;
  const auto& c = tr.config();
  auto& st = tr.state();
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const auto best = opts.out_dir / "best.ckpt";
    if (st.best_epoch >= 0 && std::filesystem::exists(best)) {
      result.best_checkpoint = io::read_file(best);
    }
  }
  if (st.history.empty()) {
    auto [rec, score] = validate_epoch(tr, val);
    st.history.push_back({{"epoch", 0}, {"steps", 0}, {"losses", nullptr}, {"validation", rec}});
    spdlog::info("epoch 0 validation score {:.4f}", score);
    update_best(tr, score, result, opts);
  }
  const data::AugmentationConfig* aug = c.augment ? &c.augmentation : nullptr;
  int done_this_call = 0;
  while (!st.collapse && st.epoch < c.epochs &&
         (opts.max_epochs_this_call < 0 || done_this_call < opts.max_epochs_this_call)) {
    LossAccumulator acc_a, acc_b;
    double last_lr = 0.0;
    int steps = 0;
    for (; steps < tr.steps_per_epoch(); ++steps) {
      StepResult r;
      switch (c.mode) {
        case TrainMode::kMutual:
          r = tr.train_step(data::sample_paired_batch(train, c.batch_size, st.sampler, aug));
          break;
        case TrainMode::kSingleFfpe:
          r = tr.train_single_step(data::sample_crop_batch(train, {data::Modality::kFfpe},
                                                           c.batch_size, st.sampler, aug));
          break;
        case TrainMode::kSingleFrozen:
          r = tr.train_single_step(data::sample_crop_batch(train, {data::Modality::kFrozen},
                                                           c.batch_size, st.sampler, aug));
          break;
        case TrainMode::kMixed:
          r = tr.train_single_step(data::sample_crop_batch(
              train, {data::Modality::kFfpe, data::Modality::kFrozen}, c.batch_size,
              st.sampler, aug));
          break;
      }
      last_lr = r.lr;
      acc_a.add(r.ffpe);
      acc_b.add(r.frozen);
      if (r.collapsed) {
        spdlog::error("collapse at step {}: {}", st.collapse->step, st.collapse->reason);
        ++steps;
        break;
      }
    }
    json losses_rec = json::object();
    switch (c.mode) {
      case TrainMode::kMutual:
        losses_rec["ffpe"] = acc_a.mean();
        losses_rec["frozen"] = acc_b.mean();
        break;
      case TrainMode::kSingleFfpe: losses_rec["ffpe"] = acc_a.mean(); break;
      case TrainMode::kSingleFrozen: losses_rec["frozen"] = acc_b.mean(); break;
      case TrainMode::kMixed: losses_rec["mixed"] = acc_a.mean(); break;
    }
    if (st.collapse) {
      st.history.push_back({{"epoch", st.epoch + 1},
                            {"steps", steps},
                            {"lr_end", last_lr},
                            {"losses", losses_rec},
                            {"validation", nullptr}});
      break;
    }
    ++st.epoch;
    ++done_this_call;
    auto [rec, score] = validate_epoch(tr, val);
    st.history.push_back({{"epoch", st.epoch},
                          {"steps", steps},
                          {"lr_end", last_lr},
                          {"losses", losses_rec},
                          {"validation", rec}});
    spdlog::info("epoch {} lr {:.3g} validation score {:.4f}", st.epoch, last_lr, score);
    update_best(tr, score, result, opts);
    if (!opts.out_dir.empty()) save_checkpoint(opts.out_dir / "last.ckpt", tr);
  }
  result.report_json = report(tr);
  result.lr_curve_csv = lr_curve(tr);
  result.collapsed = st.collapse.has_value();
  result.collapse = st.collapse;
  if (!opts.out_dir.empty()) {
    if (st.collapse) save_checkpoint(opts.out_dir / "last.ckpt", tr);
    io::write_file_atomic(opts.out_dir / "train_report.json", result.report_json);
    io::write_file_atomic(opts.out_dir / "lr_curve.csv", result.lr_curve_csv);
  }
  return result;
}

}  // namespace

FitResult fit(const TrainConfig& config, const data::PairedCohort& train,
              const data::PairedCohort& val, const FitOptions& options) {
  require(train.size() > 0, ErrorKind::kInvalidInput, "training cohort is empty");
  require(train.num_classes() == config.model.num_classes, ErrorKind::kConfig,
          "cohort and config disagree on num_classes");
  Trainer trainer(config, steps_per_epoch(config, train));
  return run(trainer, train, val, options);
}

FitResult resume(Trainer trainer, const data::PairedCohort& train,
                 const data::PairedCohort& val, const FitOptions& options) {
  require(train.size() > 0, ErrorKind::kInvalidInput, "training cohort is empty");
  return run(trainer, train, val, options);
}

}  // namespace mcl::train

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


#include "mcl/synth.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>

#include "mcl/error.hpp"
#include "mcl/image.hpp"
#include "mcl/inference.hpp"
#include "mcl/io.hpp"

namespace mcl::synth {

using nlohmann::json;

namespace {

constexpr std::array<double, 3> kBackground{242.0, 238.0, 242.0};
constexpr std::array<double, 3> kNucleus{95.0, 45.0, 135.0};
constexpr std::array<double, 3> kLowGrade{232.0, 160.0, 200.0};
constexpr std::array<double, 3> kHighGrade{150.0, 80.0, 170.0};
constexpr double kTissueNoise = 5.0;

double lerp(double a, double b, double f) { return a + (b - a) * f; }

// Gaussian pixel noise from a fixed table indexed by 16-bit slices of the
// stream; four samples per engine draw.
class PixelNoise {
 public:
  explicit PixelNoise(Rng& rng) : rng_(rng) {}
  double operator()() {
    if (left_ == 0) {
      bits_ = rng_();
      left_ = 4;
    }
    const auto i = static_cast<std::size_t>(bits_ & 0xFFFF);
    bits_ >>= 16;
    --left_;
    return table()[i];
  }

 private:
  static const std::vector<double>& table() {
    static const std::vector<double> t = [] {
      Rng r(derive_seed(0, "pixel-noise"));
      std::vector<double> v(1 << 16);
      for (auto& x : v) x = standard_normal(r);
      return v;
    }();
    return t;
  }
  Rng& rng_;
  std::uint64_t bits_ = 0;
  int left_ = 0;
};

int crops_per_tile(const SyntheticSpec& s) {
  const int k = s.tile_size / s.image_size;
  return k * k;
}

}  // namespace

std::vector<ClassTexture> class_textures(const SyntheticSpec& spec) {
  std::vector<ClassTexture> out;
  for (int c = 0; c < spec.num_classes; ++c) {
    const double f = spec.num_classes > 1 ? static_cast<double>(c) / (spec.num_classes - 1) : 0.0;
    ClassTexture t;
    for (int k = 0; k < 3; ++k) t.base[k] = lerp(kLowGrade[k], kHighGrade[k], f);
    t.blob_density = lerp(0.8, 3.0, f);
    t.blob_radius = lerp(3.0, 6.0, f);
    out.push_back(t);
  }
  return out;
}

void validate_spec(const SyntheticSpec& s) {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  check(s.num_classes >= 2, "num_classes must be >= 2");
  check(s.patients_per_class >= 1, "patients_per_class must be >= 1");
  check(s.crops_per_bag >= 1, "crops_per_bag must be >= 1");
  check(s.image_size >= 8, "image_size must be >= 8");
  check(s.tile_size >= s.image_size, "tile_size must be >= image_size");
  if (s.image_size >= 8 && s.tile_size >= s.image_size && s.crops_per_bag >= 1) {
    check(s.crops_per_bag % crops_per_tile(s) == 0,
          "crops_per_bag must be a multiple of the crops per tile (" +
              std::to_string(crops_per_tile(s)) + ")");
  }
  check(s.split.train > 0.0 && s.split.val >= 0.0 && s.split.test > 0.0 &&
            std::abs(s.split.train + s.split.val + s.split.test - 1.0) <= 1e-9,
        "split fractions must be non-negative, sum to 1, with train and test > 0");
  check(s.patient_color_jitter >= 0.0, "patient_color_jitter must be >= 0");
  check(s.patient_density_jitter >= 0.0 && s.patient_density_jitter < 1.0,
        "patient_density_jitter must lie in [0, 1)");
  for (const auto* t : {&s.ffpe, &s.frozen}) {
    const std::string name = t == &s.ffpe ? "ffpe" : "frozen";
    check(t->blur_radius >= 0, name + "_blur must be >= 0");
    check(t->noise_sigma >= 0.0, name + "_noise must be >= 0");
  }
  if (!errs.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (const auto& e : errs) msg += "\n  " + e;
    fail(ErrorKind::kConfig, msg);
  }
}

json spec_to_json(const SyntheticSpec& s) {
  json j = {{"num_classes", s.num_classes},
            {"patients_per_class", s.patients_per_class},
            {"split_train", s.split.train},
            {"split_val", s.split.val},
            {"split_test", s.split.test},
            {"crops_per_bag", s.crops_per_bag},
            {"image_size", s.image_size},
            {"tile_size", s.tile_size},
            {"patient_color_jitter", s.patient_color_jitter},
            {"patient_density_jitter", s.patient_density_jitter},
            {"seed", s.seed}};
  for (const auto* t : {&s.ffpe, &s.frozen}) {
    const std::string p = t == &s.ffpe ? "ffpe_" : "frozen_";
    j[p + "shift_r"] = t->shift[0];
    j[p + "shift_g"] = t->shift[1];
    j[p + "shift_b"] = t->shift[2];
    j[p + "blur"] = t->blur_radius;
    j[p + "noise"] = t->noise_sigma;
  }
  return j;
}

SyntheticSpec spec_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kConfig, "synthetic spec must be an object");
  SyntheticSpec s;
  const json defaults = spec_to_json(s);
  for (const auto& [key, value] : j.items()) {
    require(defaults.contains(key), ErrorKind::kConfig,
            "unknown synthetic spec key '" + key + "'");
    const json& d = defaults.at(key);
    const bool ok = (d.is_number_float() && value.is_number()) ||
                    (d.is_number_integer() && value.is_number_integer());
    require(ok, ErrorKind::kConfig, "synthetic spec key '" + key + "' has the wrong type");
  }
  json m = defaults;
  m.update(j);
  s.num_classes = m.at("num_classes").get<int>();
  s.patients_per_class = m.at("patients_per_class").get<int>();
  s.split = {m.at("split_train").get<double>(), m.at("split_val").get<double>(),
             m.at("split_test").get<double>()};
  s.crops_per_bag = m.at("crops_per_bag").get<int>();
  s.image_size = m.at("image_size").get<int>();
  s.tile_size = m.at("tile_size").get<int>();
  s.patient_color_jitter = m.at("patient_color_jitter").get<double>();
  s.patient_density_jitter = m.at("patient_density_jitter").get<double>();
  require(!m.at("seed").is_number_integer() || m.at("seed").is_number_unsigned() ||
              m.at("seed").get<std::int64_t>() >= 0,
          ErrorKind::kConfig, "seed must be non-negative");
  s.seed = m.at("seed").get<std::uint64_t>();
  for (auto* t : {&s.ffpe, &s.frozen}) {
    const std::string p = t == &s.ffpe ? "ffpe_" : "frozen_";
    t->shift = {m.at(p + "shift_r").get<double>(), m.at(p + "shift_g").get<double>(),
                m.at(p + "shift_b").get<double>()};
    t->blur_radius = m.at(p + "blur").get<int>();
    t->noise_sigma = m.at(p + "noise").get<double>();
  }
  return s;
}

int tissue_tiles(const SyntheticSpec& spec) { return spec.crops_per_bag / crops_per_tile(spec); }

int slide_width(const SyntheticSpec& spec) { return (tissue_tiles(spec) + 1) * spec.tile_size; }

int patient_grade(const SyntheticSpec& spec, int patient) { return patient % spec.num_classes; }

std::string patient_id(int patient) {
  std::string digits = std::to_string(patient + 1);
  return "P" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

namespace {

// Separable box blur with clamped borders on a planar float image.
void box_blur(std::vector<double>& img, int w, int h, int r) {
  if (r <= 0) return;
  std::vector<double> tmp(img.size());
  const double norm = 1.0 / (2 * r + 1);
  for (int c = 0; c < 3; ++c) {
    double* p = img.data() + static_cast<std::size_t>(c) * w * h;
    double* t = tmp.data() + static_cast<std::size_t>(c) * w * h;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d) s += p[y * w + std::clamp(x + d, 0, w - 1)];
        t[y * w + x] = s * norm;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int d = -r; d <= r; ++d) s += t[std::clamp(y + d, 0, h - 1) * w + x];
        p[y * w + x] = s * norm;
      }
    }
  }
}

}  // namespace

RgbImage render_slide(const SyntheticSpec& spec, int patient, data::Modality modality) {
  const auto tex = class_textures(spec).at(static_cast<std::size_t>(patient_grade(spec, patient)));
  Rng prng(derive_seed(derive_seed(spec.seed, "patient"), static_cast<std::uint64_t>(patient)));
  std::array<double, 3> jitter{};
  for (auto& v : jitter) v = spec.patient_color_jitter * standard_normal(prng);
  const double density =
      tex.blob_density *
      (1.0 + uniform(prng, -spec.patient_density_jitter, spec.patient_density_jitter));
  Rng rng(derive_seed(derive_seed(derive_seed(spec.seed, "slide"), static_cast<std::uint64_t>(patient)),
                      static_cast<std::uint64_t>(modality)));

  PixelNoise noise(rng);
  const int w = slide_width(spec), h = spec.tile_size;
  const int tissue_w = tissue_tiles(spec) * spec.tile_size;
  const std::size_t plane = static_cast<std::size_t>(w) * h;
  std::vector<double> img(3 * plane);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        img[c * plane + static_cast<std::size_t>(y) * w + x] =
            x < tissue_w ? tex.base[c] + jitter[c] + kTissueNoise * noise()
                         : kBackground[c];
      }
    }
  }
  const double scale = static_cast<double>(spec.image_size) / 224.0;
  const auto blobs = static_cast<long>(
      std::lround(density * static_cast<double>(tissue_w) * h / 1000.0 / (scale * scale)));
  for (long b = 0; b < blobs; ++b) {
    const double cx = uniform(rng, 0.0, tissue_w);
    const double cy = uniform(rng, 0.0, h);
    const double r = tex.blob_radius * scale * uniform(rng, 0.8, 1.2);
    const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(tissue_w - 1, static_cast<int>(cx + r));
    const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(h - 1, static_cast<int>(cy + r));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy > r * r) continue;
        for (int c = 0; c < 3; ++c) {
          img[c * plane + static_cast<std::size_t>(y) * w + x] = kNucleus[c] + 0.5 * jitter[c];
        }
      }
    }
  }
  const auto& t = modality == data::Modality::kFfpe ? spec.ffpe : spec.frozen;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) img[c * plane + i] += t.shift[c];
  }
  box_blur(img, w, h, t.blur_radius);
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto* px = out.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = img[c * plane + static_cast<std::size_t>(y) * w + x] +
                         t.noise_sigma * noise();
        px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

std::vector<data::SlideRecord> generate_dataset(const SyntheticSpec& spec,
                                                const std::filesystem::path& out) {
  validate_spec(spec);
  std::vector<data::SlideRecord> records;
  const int patients = spec.num_classes * spec.patients_per_class;
  for (int p = 0; p < patients; ++p) {
    for (auto m : {data::Modality::kFfpe, data::Modality::kFrozen}) {
      const auto rel = std::filesystem::path("slides") /
                       (patient_id(p) + "_" + std::string(data::modality_name(m)) + ".png");
      write_png(out / rel, render_slide(spec, p, m));
      records.push_back({patient_id(p), m, patient_grade(spec, p), rel, "20x"});
    }
  }
  io::write_file_atomic(out / "slides.csv", data::format_slide_manifest(records, spec.num_classes));
  for (auto& r : records) r.image_path = out / r.image_path;
  return records;
}

train::TrainConfig default_train_config() {
  train::TrainConfig c;
  c.model.backbone = "small-cnn";
  c.epochs = 5;
  c.batch_size = 32;
  c.lr_max = 1e-3;
  return c;
}

data::PreprocessOptions preprocess_options(const SyntheticSpec& spec) {
  data::PreprocessOptions o;
  o.tile.tile_size = spec.tile_size;
  o.crop_size = spec.image_size;
  o.split = spec.split;
  o.seed = derive_seed(spec.seed, "split");
  o.num_classes = spec.num_classes;
  return o;
}

// ---- runs ----

namespace {

constexpr std::array<const char*, 6> kLosses{"ce", "nmc", "lr", "nmc+lr", "nt_xent", "kl"};

std::string_view scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kSingle: return "single";
    case Scheme::kMixed: return "mixed";
    case Scheme::kMutual: return "mutual";
  }
  return "mutual";
}

}  // namespace

std::string run_name(const RunSpec& run) {
  if (run.scheme != Scheme::kMutual) return std::string(scheme_name(run.scheme));
  return "mutual:" + run.loss;
}

std::vector<RunSpec> parse_runs(const std::vector<std::string>& modes,
                                const std::vector<std::string>& losses) {
  std::vector<RunSpec> runs;
  for (const auto& l : losses) {
    require(std::find(kLosses.begin(), kLosses.end(), l) != kLosses.end(), ErrorKind::kConfig,
            "unknown loss '" + l + "' (expected ce, nmc, lr, nmc+lr, nt_xent or kl)");
  }
  for (const auto& m : modes) {
    if (m == "single") {
      runs.push_back({Scheme::kSingle, "ce"});
    } else if (m == "mixed") {
      runs.push_back({Scheme::kMixed, "ce"});
    } else if (m == "mutual") {
      require(!losses.empty(), ErrorKind::kConfig, "mutual mode needs at least one loss");
      for (const auto& l : losses) runs.push_back({Scheme::kMutual, l});
    } else {
      fail(ErrorKind::kConfig, "unknown mode '" + m + "' (expected single, mixed or mutual)");
    }
  }
  return runs;
}

std::vector<train::TrainConfig> run_configs(const RunSpec& run, const train::TrainConfig& base) {
  train::TrainConfig c = base;
  c.tau = run.tau;
  const auto& w = base.loss_weights;
  switch (run.scheme) {
    case Scheme::kSingle: {
      c.loss_weights = {w.cls, 0.0, 0.0};
      train::TrainConfig f = c, z = c;
      f.mode = train::TrainMode::kSingleFfpe;
      z.mode = train::TrainMode::kSingleFrozen;
      return {f, z};
    }
    case Scheme::kMixed:
      c.mode = train::TrainMode::kMixed;
      c.loss_weights = {w.cls, 0.0, 0.0};
      return {c};
    case Scheme::kMutual: break;
  }
  c.mode = train::TrainMode::kMutual;
  const std::string& l = run.loss;
  require(std::find(kLosses.begin(), kLosses.end(), l) != kLosses.end(), ErrorKind::kConfig,
          "unknown loss '" + l + "'");
  const bool contrastive = l == "nmc" || l == "nmc+lr" || l == "nt_xent" || l == "kl";
  const bool lowrank = l == "lr" || l == "nmc+lr";
  c.loss_weights = {w.cls, contrastive ? w.nmc : 0.0, lowrank ? w.lr : 0.0};
  c.contrastive = l == "nt_xent" ? train::ContrastiveKind::kNtXent
                  : l == "kl"    ? train::ContrastiveKind::kKl
                                 : train::ContrastiveKind::kNmc;
  return {c};
}

// ---- diagnostics ----

double rank_ratio(const Eigen::MatrixXd& m, int k) {
  if (m.size() == 0) return std::nan("");
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
  const double total = s.sum();
  if (!(total > 0.0)) return std::nan("");
  return s.head(std::min<Eigen::Index>(k, s.size())).sum() / total;
}

namespace {

struct Latents {
  Eigen::MatrixXd z_nmc;
  Eigen::MatrixXd z_lr;
  std::vector<int> patient;
  std::vector<int> grade;
};

Latents collect(const model::BranchNetwork<float>& net, const std::vector<data::PatientBag>& bags,
                int batch) {
  std::vector<const RgbImage*> images;
  Latents out;
  for (std::size_t p = 0; p < bags.size(); ++p) {
    for (const auto& c : bags[p].crops) {
      images.push_back(&c.pixels);
      out.patient.push_back(static_cast<int>(p));
      out.grade.push_back(bags[p].grade);
    }
  }
  const auto n = static_cast<Eigen::Index>(images.size());
  out.z_nmc.resize(n, net.feature_dim());
  out.z_lr.resize(n, net.feature_dim());
  for (Eigen::Index s = 0; s < n; s += batch) {
    const Eigen::Index e = std::min<Eigen::Index>(n, s + batch);
    std::vector<const RgbImage*> chunk(images.begin() + s, images.begin() + e);
    const auto o = net.forward(model::images_to_tensor<float>(chunk), nullptr);
    out.z_nmc.middleRows(s, e - s) = o.z_nmc;
    out.z_lr.middleRows(s, e - s) = o.z_lr;
  }
  return out;
}

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& g) {
  Eigen::MatrixXd u = g;
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double n = u.row(i).norm();
    if (n > 0.0) u.row(i) /= n;
  }
  return u;
}

}  // namespace

LatentDiagnostics latent_diagnostics(const model::BranchNetwork<float>& ffpe_net,
                                     const model::BranchNetwork<float>& frozen_net,
                                     const data::PairedCohort& test,
                                     const train::TrainConfig& config) {
  const auto a = collect(ffpe_net, test.bags(data::Modality::kFfpe), config.eval_batch_size);
  const auto b = collect(frozen_net, test.bags(data::Modality::kFrozen), config.eval_batch_size);
  LatentDiagnostics d;
  const double nan = std::nan("");
  if (!a.z_nmc.allFinite() || !b.z_nmc.allFinite() || a.z_nmc.rows() == 0 ||
      b.z_nmc.rows() == 0) {
    d.retrieval_top1 = d.positive_cosine = d.negative_cosine = d.margin = d.mean_rank_ratio = nan;
    d.rank_ratio.assign(static_cast<std::size_t>(config.model.num_classes), nan);
    return d;
  }
  const auto norm = [&](const Eigen::MatrixXd& z) {
    return unit_rows(
        losses::layer_normalize(losses::LatentMatrix(z), config.eps, config.norm_stats).values());
  };
  const Eigen::MatrixXd s = norm(a.z_nmc) * norm(b.z_nmc).transpose();
  double pos = 0.0, neg = 0.0;
  long npos = 0, nneg = 0, hits = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    s.row(i).maxCoeff(&best);
    if (b.patient[static_cast<std::size_t>(best)] == a.patient[static_cast<std::size_t>(i)]) ++hits;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (a.patient[static_cast<std::size_t>(i)] == b.patient[static_cast<std::size_t>(j)]) {
        pos += s(i, j);
        ++npos;
      } else {
        neg += s(i, j);
        ++nneg;
      }
    }
  }
  d.retrieval_top1 = static_cast<double>(hits) / static_cast<double>(s.rows());
  d.positive_cosine = npos ? pos / npos : nan;
  d.negative_cosine = nneg ? neg / nneg : nan;
  d.margin = d.positive_cosine - d.negative_cosine;
  const int k = config.model.num_classes - 1;
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < config.model.num_classes; ++c) {
    std::vector<Eigen::Index> ra, rb;
    for (std::size_t i = 0; i < a.grade.size(); ++i) {
      if (a.grade[i] == c) ra.push_back(static_cast<Eigen::Index>(i));
    }
    for (std::size_t i = 0; i < b.grade.size(); ++i) {
      if (b.grade[i] == c) rb.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(ra.size() + rb.size()), a.z_lr.cols());
    Eigen::Index r = 0;
    for (auto i : ra) m.row(r++) = a.z_lr.row(i);
    for (auto i : rb) m.row(r++) = b.z_lr.row(i);
    const double ratio = m.allFinite() ? rank_ratio(m, k) : nan;
    d.rank_ratio.push_back(ratio);
    if (std::isfinite(ratio)) {
      sum += ratio;
      ++present;
    }
  }
  d.mean_rank_ratio = present ? sum / present : nan;
  return d;
}

// ---- comparison ----

Cohorts prepare_cohorts(const SyntheticSpec& spec, const std::filesystem::path& dataset,
                        const std::filesystem::path& work) {
  validate_spec(spec);
  const auto records = data::read_slide_manifest(dataset / "slides.csv", spec.num_classes);
  const auto summary = data::preprocess(records, preprocess_options(spec), work / "patches");
  const auto store = data::load_patch_store(work / "patches");
  auto cohort = [&](const std::vector<std::string>& ids) {
    if (ids.empty()) return data::PairedCohort{};
    return data::PairedCohort(data::select_patients(store.bags, ids), spec.num_classes);
  };
  return {cohort(store.split.train), cohort(store.split.val), cohort(store.split.test),
          summary.manifest_sha256};
}

namespace {

json metrics_json(const infer::ModalityMetrics& m, const std::string& hash) {
  return {{"accuracy", m.accuracy},
          {"precision_weighted", m.precision_weighted},
          {"recall_weighted", m.recall_weighted},
          {"precision_macro", m.precision_macro},
          {"recall_macro", m.recall_macro},
          {"confusion", m.confusion},
          {"ties_broken", m.ties_broken},
          {"config_hash", hash}};
}

std::string dir_name(const std::string& name) {
  std::string s = name;
  for (auto& ch : s) {
    if (ch == ':' || ch == '+') ch = '_';
  }
  return s;
}

}  // namespace

RunResult run_one(const RunSpec& run, const train::TrainConfig& base, const Cohorts& cohorts,
                  const std::filesystem::path& run_dir) {
  const auto start = std::chrono::steady_clock::now();
  const auto configs = run_configs(run, base);
  RunResult result;
  result.name = run_name(run);
  std::vector<train::Trainer> trainers;
  json hashes = json::array(), collapses = json::array(), curves = json::object();
  for (const auto& c : configs) {
    const std::string mode(train::mode_name(c.mode));
    const auto fr = train::fit(c, cohorts.train, cohorts.val, {run_dir / mode});
    trainers.push_back(train::deserialize_checkpoint(fr.best_checkpoint));
    hashes.push_back(train::config_hash(c));
    if (fr.collapsed) {
      result.collapsed = true;
      collapses.push_back({{"mode", mode},
                           {"step", fr.collapse->step},
                           {"epoch", fr.collapse->epoch},
                           {"reason", fr.collapse->reason}});
    }
    const auto report = json::parse(fr.report_json);
    json curve = json::array();
    for (const auto& e : report.at("epochs")) {
      if (!e.at("losses").is_null()) curve.push_back({{"epoch", e.at("epoch")}, {"losses", e.at("losses")}});
    }
    curves[mode] = curve;
  }
  const auto& ffpe_net = trainers.front().network_for(data::Modality::kFfpe);
  const auto& frozen_net = trainers.back().network_for(data::Modality::kFrozen);
  const auto& cfg = configs.front();
  json test = json::object();
  for (auto [m, net, idx] : {std::tuple{data::Modality::kFfpe, &ffpe_net, std::size_t{0}},
                             std::tuple{data::Modality::kFrozen, &frozen_net, configs.size() - 1}}) {
    const auto ev = infer::evaluate_modality(*net, cohorts.test.bags(m), cfg.model.num_classes,
                                             {cfg.soft_voting, cfg.eval_batch_size});
    test[std::string(data::modality_name(m))] =
        metrics_json(ev.metrics, hashes.at(idx).get<std::string>());
  }
  const auto d = latent_diagnostics(ffpe_net, frozen_net, cohorts.test, cfg);
  result.record = {{"name", result.name},
                   {"scheme", scheme_name(run.scheme)},
                   {"loss", run.loss},
                   {"tau", run.tau},
                   {"config_hashes", hashes},
                   {"collapsed", result.collapsed},
                   {"collapses", collapses},
                   {"test", test},
                   {"latent",
                    {{"retrieval_top1", d.retrieval_top1},
                     {"positive_cosine", d.positive_cosine},
                     {"negative_cosine", d.negative_cosine},
                     {"margin", d.margin},
                     {"rank_ratio", d.rank_ratio},
                     {"mean_rank_ratio", d.mean_rank_ratio}}},
                   {"loss_curve", curves}};
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ExperimentReport run_comparison(const SyntheticSpec& spec, const train::TrainConfig& base,
                                const std::vector<RunSpec>& runs,
                                const std::filesystem::path& dataset,
                                const std::filesystem::path& work) {
  require(!runs.empty(), ErrorKind::kConfig, "no runs requested");
  for (const auto& r : runs) {
    for (const auto& c : run_configs(r, base)) {
      const auto errs = train::validate(c);
      require(errs.empty(), ErrorKind::kConfig,
              "invalid config for run " + run_name(r) + ": " + (errs.empty() ? "" : errs.front()));
    }
  }
  const auto cohorts = prepare_cohorts(spec, dataset, work);
  require(cohorts.test.size() > 0, ErrorKind::kConfig, "the split has no test patients");
  ExperimentReport report;
  json records = json::array();
  for (const auto& r : runs) {
    report.runs.push_back(run_one(r, base, cohorts, work / "runs" / dir_name(run_name(r))));
    records.push_back(report.runs.back().record);
  }
  json j = {{"version", "mcl-experiment-v1"},
            {"spec", spec_to_json(spec)},
            {"base_config", train::config_to_json(base)},
            {"base_config_hash", train::config_hash(base)},
            {"patch_manifest_sha256", cohorts.manifest_sha256},
            {"patients",
             {{"train", cohorts.train.size()},
              {"val", cohorts.val.size()},
              {"test", cohorts.test.size()}}},
            {"runs", records}};
  report.json = j.dump(2) + "\n";
  return report;
}

std::vector<SweepRow> temperature_sweep(const SyntheticSpec& spec,
                                        const train::TrainConfig& base,
                                        const std::vector<double>& taus,
                                        const std::filesystem::path& dataset,
                                        const std::filesystem::path& work) {
  require(!taus.empty(), ErrorKind::kConfig, "no temperatures requested");
  std::vector<std::string> errs;
  for (double t : taus) {
    train::TrainConfig c = base;
    c.tau = t;
    if (!(std::isfinite(t) && t > 0.0)) {
      errs.push_back("tau must be > 0 (got " + infer::format_double(t) + ")");
    } else if (!train::validate(c).empty()) {
      errs.push_back(train::validate(c).front());
    }
  }
  if (!errs.empty()) {
    std::string msg = "invalid temperature sweep:";
    for (const auto& e : errs) msg += "\n  " + e;
    fail(ErrorKind::kConfig, msg);
  }
  const auto cohorts = prepare_cohorts(spec, dataset, work);
  require(cohorts.test.size() > 0, ErrorKind::kConfig, "the split has no test patients");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const RunSpec run{Scheme::kMutual, "nmc+lr", taus[i]};
    const auto r = run_one(run, base, cohorts, work / "tau" / std::to_string(i));
    SweepRow row;
    row.tau = taus[i];
    row.ffpe_accuracy = r.record.at("test").at("ffpe").at("accuracy").get<double>();
    row.frozen_accuracy = r.record.at("test").at("frozen").at("accuracy").get<double>();
    row.collapsed = r.collapsed;
    if (r.collapsed) row.collapse_step = r.record.at("collapses").at(0).at("step").get<std::int64_t>();
    row.config_hash = r.record.at("config_hashes").at(0).get<std::string>();
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "tau,ffpe_accuracy,frozen_accuracy,mean_accuracy,collapsed,collapse_step,config_hash\n";
  for (const auto& r : rows) {
    out += infer::format_double(r.tau) + "," + infer::format_double(r.ffpe_accuracy) + "," +
           infer::format_double(r.frozen_accuracy) + "," +
           infer::format_double(0.5 * (r.ffpe_accuracy + r.frozen_accuracy)) + "," +
           (r.collapsed ? "1" : "0") + "," + std::to_string(r.collapse_step) + "," +
           r.config_hash + "\n";
  }
  return out;
}

}  // namespace mcl::synth

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
#include <functional>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mcl/error.hpp"

using namespace mcl::infer;
using mcl::ErrorKind;
using mcl::RgbImage;
using mcl::data::Crop;
using mcl::data::Modality;
using mcl::data::PatientBag;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const mcl::Error& e) {
    return e.kind();
  }
  FAIL("expected mcl::Error");
  return ErrorKind::kRuntime;
}

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> r) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Textbook metric definitions computed from pairs, without a confusion matrix.
struct Brute {
  double accuracy, pw, rw, pm, rm;
};

Brute brute_metrics(const std::vector<int>& t, const std::vector<int>& p, int c) {
  const double n = static_cast<double>(t.size());
  Brute b{0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < t.size(); ++i) b.accuracy += (t[i] == p[i]) / n;
  int present = 0;
  for (int g = 0; g < c; ++g) {
    double tp = 0, pred = 0, sup = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      tp += t[i] == g && p[i] == g;
      pred += p[i] == g;
      sup += t[i] == g;
    }
    const double prec = pred > 0 ? tp / pred : 0.0;
    const double rec = sup > 0 ? tp / sup : 0.0;
    b.pw += prec * sup / n;
    b.rw += rec * sup / n;
    if (pred > 0 || sup > 0) {
      b.pm += prec;
      b.rm += rec;
      ++present;
    }
  }
  b.pm /= present;
  b.rm /= present;
  return b;
}

mcl::model::ModelConfig tiny() {
  mcl::model::ModelConfig c;
  c.backbone = "tiny-cnn";
  return c;
}

RgbImage noise_image(std::mt19937_64& rng, int w, int h) {
  RgbImage img(w, h);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 255);
  return img;
}

}  // namespace

TEST_CASE("vote examples") {
  // Grades 0,1,2 are II, III, IV.
  auto a = vote("p", Modality::kFfpe, rows({{.8, .1, .1}, {.7, .2, .1}, {.1, .1, .8}}));
  CHECK(a.final_grade == 0);
  CHECK_FALSE(a.tie_broken);
  CHECK(a.patch_votes == std::vector<int>{2, 0, 1});

  auto b = vote("p", Modality::kFfpe, rows({{.6, 0, .4}, {.5, 0, .9}}));
  CHECK(b.final_grade == 2);  // masses II 1.1, IV 1.3
  CHECK(b.tie_broken);

  auto c = vote("p", Modality::kFrozen, rows({{.2, .5, .3}}));
  CHECK(c.final_grade == 1);

  // Equal votes and equal mass: the higher grade wins.
  auto d = vote("p", Modality::kFfpe, rows({{.75, .25, 0}, {.25, .75, 0}}));
  CHECK(d.final_grade == 1);
  CHECK(d.tie_broken);

  // Soft voting follows the summed probabilities.
  auto e = vote("p", Modality::kFfpe, rows({{.4, .6, 0}, {.4, .6, 0}, {.9, .1, 0}}), true);
  CHECK(e.final_grade == 0);
  CHECK(kind_of([] { vote("p", Modality::kFfpe, Eigen::MatrixXd(0, 3)); }) ==
        ErrorKind::kInvalidInput);
}

TEST_CASE("voting is permutation invariant with deterministic tie-breaks") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 9);
    Eigen::MatrixXd p(n, 3);
    for (int i = 0; i < n; ++i) {
      // Coarse values make vote and mass ties common.
      for (int j = 0; j < 3; ++j) p(i, j) = std::round(u(rng) * 4) / 4 + 0.01;
      p.row(i) /= p.row(i).sum();
    }
    const auto ref = vote("p", Modality::kFfpe, p);
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (int s = 0; s < 5; ++s) {
      std::shuffle(perm.begin(), perm.end(), rng);
      Eigen::MatrixXd q(n, 3);
      for (int i = 0; i < n; ++i) q.row(i) = p.row(perm[static_cast<std::size_t>(i)]);
      const auto got = vote("p", Modality::kFfpe, q);
      CHECK(got.final_grade == ref.final_grade);
      CHECK(got.tie_broken == ref.tie_broken);
    }
    // A duplicate of a crop whose grade already holds a strict majority
    // keeps that grade.
    if (!ref.tie_broken) {
      for (int i = 0; i < n; ++i) {
        int am = 0;
        for (int j = 1; j < 3; ++j)
          if (p(i, j) >= p(i, am)) am = j;
        if (am != ref.final_grade) continue;
        Eigen::MatrixXd dup(n + 1, 3);
        dup.topRows(n) = p;
        dup.row(n) = p.row(i);
        CHECK(vote("p", Modality::kFfpe, dup).final_grade == ref.final_grade);
        break;
      }
    }
  }
}

TEST_CASE("metrics against a brute-force oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> t, p;
    for (int i = 0; i < 40; ++i) {
      t.push_back(static_cast<int>(rng() % 3));
      p.push_back(static_cast<int>(rng() % 3));
    }
    if (trial % 5 == 0) std::fill(p.begin(), p.end(), 1);
    const auto m = compute_metrics(t, p, 3);
    const auto b = brute_metrics(t, p, 3);
    CHECK(std::abs(m.accuracy - b.accuracy) <= 1e-12);
    CHECK(std::abs(m.precision_weighted - b.pw) <= 1e-12);
    CHECK(std::abs(m.recall_weighted - b.rw) <= 1e-12);
    CHECK(std::abs(m.precision_macro - b.pm) <= 1e-12);
    CHECK(std::abs(m.recall_macro - b.rm) <= 1e-12);
    long trace = 0;
    for (int g = 0; g < 3; ++g) {
      long row = 0;
      for (long v : m.confusion[g]) row += v;
      CHECK(row == m.per_class[g].support);
      trace += m.confusion[g][g];
    }
    CHECK(m.accuracy == static_cast<double>(trace) / 40.0);
  }
}

TEST_CASE("constant and perfect predictors") {
  std::vector<int> truth;
  truth.insert(truth.end(), 27, 0);
  truth.insert(truth.end(), 25, 1);
  truth.insert(truth.end(), 48, 2);
  const auto m = compute_metrics(truth, std::vector<int>(100, 2), 3);
  CHECK(m.accuracy == 0.48);
  CHECK(m.recall_weighted == doctest::Approx(0.48));
  CHECK(m.per_class[0].precision == 0.0);

  const auto perfect = compute_metrics(truth, truth, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision_weighted == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(perfect.recall_macro == doctest::Approx(1.0).epsilon(1e-15));
  for (int g = 0; g < 3; ++g) {
    for (int k = 0; k < 3; ++k) {
      CHECK(perfect.confusion[g][k] == (g == k ? perfect.per_class[g].support : 0));
    }
  }
  CHECK(kind_of([] { compute_metrics({0, 1}, {0}, 3); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("heatmap normalization and resizing") {
  Heatmap flat{3, 2, std::vector<double>(6, 0.7)};
  auto nf = normalize_heatmap(flat);
  for (double v : nf.values) CHECK(v == 0.0);
  Heatmap h{2, 2, {0.0, 1.0, 2.0, 4.0}};
  auto n = normalize_heatmap(h);
  CHECK(*std::max_element(n.values.begin(), n.values.end()) == 1.0);
  CHECK(n.at(1, 0) == 0.25);
  auto r = resize_heatmap(n, 8, 8);
  for (double v : r.values) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(7, 7) == 1.0);
  auto same = resize_heatmap(h, 2, 2);
  CHECK(same.values == h.values);
}

TEST_CASE("CAM") {
  mcl::model::BranchNetwork<float> net(tiny(), 3);
  std::mt19937_64 rng(4);
  const RgbImage img = noise_image(rng, 64, 64);

  SUBCASE("single unit weight selects one channel") {
    auto w = net.params().slice("classifier.weight");
    std::fill(w.begin(), w.end(), 0.0f);
    const int d = net.feature_dim();
    w[static_cast<std::size_t>(1 * d + 5)] = 1.0f;
    const RgbImage* ptrs[] = {&img};
    const auto fm = net.forward(mcl::model::images_to_tensor<float>(ptrs)).feature_maps;
    const auto cam = cam_raw(net, img, 1);
    REQUIRE(cam.width == fm.w());
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) CHECK(cam.at(x, y) == doctest::Approx(fm.at(0, 5, y, x)));
  }
  SUBCASE("normalized heatmap at crop size") {
    const auto cam = compute_cam(net, img, 0);
    CHECK(cam.width == 64);
    CHECK(cam.height == 64);
    double mx = 0;
    for (double v : cam.values) {
      CHECK((v >= 0.0 && v <= 1.0));
      mx = std::max(mx, v);
    }
    const auto raw = cam_raw(net, img, 0);
    const bool degenerate =
        *std::max_element(raw.values.begin(), raw.values.end()) ==
        *std::min_element(raw.values.begin(), raw.values.end());
    if (!degenerate) CHECK(mx == doctest::Approx(1.0));
  }
  SUBCASE("translation equivariance in the interior") {
    // Total stride of the backbone is 16, so a 16 px shift moves the CAM by
    // one cell.
    const RgbImage big = noise_image(rng, 224, 224);
    RgbImage shifted = noise_image(rng, 224, 224);
    for (int y = 0; y < 224; ++y)
      for (int x = 16; x < 224; ++x) std::copy_n(big.at(x - 16, y), 3, shifted.at(x, y));
    for (int g = 0; g < 3; ++g) {
      const auto a = cam_raw(net, big, g);
      const auto b = cam_raw(net, shifted, g);
      for (int y = 2; y < 12; ++y)
        for (int x = 2; x < 12; ++x) CHECK(std::abs(b.at(x + 1, y) - a.at(x, y)) <= 1e-4);
    }
  }
  CHECK(kind_of([&] { cam_raw(net, img, 3); }) == ErrorKind::kInvalidParameter);
}

TEST_CASE("predict_patient and evaluate") {
  mcl::model::BranchNetwork<float> net(tiny(), 9);
  std::mt19937_64 rng(6);
  PatientBag empty{"e", Modality::kFfpe, 0, {}};
  CHECK(kind_of([&] { predict_patient(net, empty); }) == ErrorKind::kInvalidInput);

  std::vector<PatientBag> bags;
  for (int p = 0; p < 4; ++p) {
    PatientBag b{"p" + std::to_string(3 - p), Modality::kFfpe, p % 3, {}};
    for (int i = 0; i < 5; ++i) b.crops.push_back(Crop{noise_image(rng, 32, 32), i, 0});
    bags.push_back(b);
  }
  const auto pred = predict_patient(net, bags[0], {false, 2});
  const auto pred_big = predict_patient(net, bags[0], {false, 64});
  CHECK(pred.final_grade == pred_big.final_grade);
  CHECK((pred.patch_probs - pred_big.patch_probs).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(pred.patch_probs.rows() == 5);

  const auto eval = evaluate_modality(net, bags, 3);
  REQUIRE(eval.predictions.size() == 4);
  CHECK(eval.predictions.front().patient_id == "p0");
  CHECK(eval.metrics.total == 4);
  MetricsReport report{{eval}};
  const auto j1 = metrics_report_json(report, 3, "abc");
  CHECK(j1 == metrics_report_json(report, 3, "abc"));
  CHECK(j1.find("mcl-metrics-v1") != std::string::npos);
}

TEST_CASE("latent export") {
  mcl::model::BranchNetwork<float> net(tiny(), 10);
  std::mt19937_64 rng(8);
  std::vector<PatientBag> bags;
  for (int p = 0; p < 2; ++p) {
    PatientBag b{"P" + std::to_string(p), Modality::kFrozen, p, {}};
    for (int i = 0; i < 3; ++i) b.crops.push_back(Crop{noise_image(rng, 32, 32), 224 * i, 0});
    bags.push_back(b);
  }
  const auto csv = export_latents(net, bags, LatentLayer::kH, 3, 2);
  std::istringstream is(csv);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto cols = std::count(line.begin(), line.end(), ',') + 1;
    CHECK(cols == net.feature_dim() + 4);
    ++n;
  }
  CHECK(n == 7);
  CHECK(csv.find("\nP1,frozen,III,448_0,") != std::string::npos);
  CHECK(csv == export_latents(net, bags, LatentLayer::kH, 3, 5));
  CHECK(csv != export_latents(net, bags, LatentLayer::kZNmc, 3));
  CHECK(parse_latent_layer("z_lr") == LatentLayer::kZLr);
  CHECK(kind_of([] { parse_latent_layer("g"); }) == ErrorKind::kInvalidParameter);
  CHECK(format_double(0.1) == "0.1");
}

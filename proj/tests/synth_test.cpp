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


#include <doctest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <random>

#include "mcl/error.hpp"
#include "mcl/image.hpp"
#include "mcl/io.hpp"
#include "mcl/synth.hpp"

using namespace mcl;
using namespace mcl::synth;

namespace {

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::kRuntime;
}

SyntheticSpec small_spec(int patients_per_class = 4) {
  SyntheticSpec s;
  s.patients_per_class = patients_per_class;
  s.image_size = 32;
  s.tile_size = 64;
  s.crops_per_bag = 8;
  s.split = {0.5, 0.0, 0.5};
  s.seed = 3;
  return s;
}

train::TrainConfig small_train() {
  auto c = default_train_config();
  c.model.backbone = "tiny-cnn";
  c.batch_size = 8;
  c.epochs = 2;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::current_path() / "synth_test_out" / name;
  std::filesystem::remove_all(p);
  return p;
}

// Normalized 16-bin per-channel histogram plus a bias term.
Eigen::VectorXd histogram_features(const RgbImage& img) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(49);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    f(static_cast<Eigen::Index>((i % 3) * 16 + img.pixels[i] / 16)) += 1.0;
  }
  f.head(48) /= static_cast<double>(img.width) * img.height;
  f(48) = 1.0;
  return f;
}

}  // namespace

TEST_CASE("spec validation and json") {
  CHECK_NOTHROW(validate_spec(SyntheticSpec{}));
  SyntheticSpec bad;
  bad.crops_per_bag = 6;  // four crops per 500 px tile at 224
  bad.num_classes = 1;
  bad.frozen.noise_sigma = -1.0;
  try {
    validate_spec(bad);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
    const std::string m = e.what();
    CHECK(m.find("crops_per_bag") != std::string::npos);
    CHECK(m.find("num_classes") != std::string::npos);
    CHECK(m.find("frozen_noise") != std::string::npos);
  }
  const auto s = small_spec();
  CHECK(spec_to_json(spec_from_json(spec_to_json(s))) == spec_to_json(s));
  CHECK(kind_of([] { spec_from_json({{"colour", 1}}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { spec_from_json({{"image_size", 3.5}}); }) == ErrorKind::kConfig);
}

TEST_CASE("class textures are distinct") {
  SyntheticSpec s;
  s.num_classes = 4;
  const auto t = class_textures(s);
  REQUIRE(t.size() == 4);
  for (std::size_t i = 1; i < t.size(); ++i) {
    CHECK(t[i].blob_density > t[i - 1].blob_density);
    CHECK(t[i].base != t[i - 1].base);
  }
}

TEST_CASE("slide geometry") {
  SyntheticSpec s;
  CHECK(tissue_tiles(s) == 2);
  CHECK(slide_width(s) == 1500);
  const auto small = small_spec();
  CHECK(tissue_tiles(small) == 2);
  const auto img = render_slide(small, 0, data::Modality::kFfpe);
  CHECK(img.width == 192);
  CHECK(img.height == 64);
  CHECK(patient_id(0) == "P0001");
  CHECK(patient_id(12344) == "P12345");
  CHECK(patient_grade(small, 7) == 1);
}

TEST_CASE("generated dataset: counts, determinism and learnable classes") {
  auto spec = small_spec(10);
  const auto a = scratch("gen_a"), b = scratch("gen_b"), c = scratch("gen_c");
  const auto records = generate_dataset(spec, a);
  CHECK(records.size() == 60);
  CHECK(records.front().image_path == a / "slides" / "P0001_ffpe.png");
  const auto manifest = data::read_slide_manifest(a / "slides.csv", 3);
  CHECK(manifest.size() == 60);
  generate_dataset(spec, b);
  CHECK(io::read_file(a / "slides.csv") == io::read_file(b / "slides.csv"));
  bool any_diff = false;
  for (const auto& r : records) {
    CHECK(io::sha256_hex(io::read_file(a / "slides" / r.image_path.filename())) ==
          io::sha256_hex(io::read_file(b / "slides" / r.image_path.filename())));
  }
  spec.seed = 4;
  generate_dataset(spec, c);
  for (const auto& r : records) {
    any_diff |= io::read_file(a / "slides" / r.image_path.filename()) != io::read_file(c / "slides" / r.image_path.filename());
  }
  CHECK(any_diff);

  // Least-squares linear classifier on colour histograms of the raw slides,
  // trained on even patients, scored on odd ones.
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys, patient;
  for (const auto& r : manifest) {
    xs.push_back(histogram_features(read_image(r.image_path)));
    ys.push_back(r.grade);
    patient.push_back(std::stoi(r.patient_id.substr(1)) - 1);
  }
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < xs.size(); ++i) (patient[i] % 2 == 0 ? tr : te).push_back(i);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(tr.size()), 49);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tr.size()), 3);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    X.row(static_cast<Eigen::Index>(k)) = xs[tr[k]].transpose();
    Y(static_cast<Eigen::Index>(k), ys[tr[k]]) = 1.0;
  }
  const Eigen::MatrixXd reg = 1e-3 * Eigen::MatrixXd::Identity(49, 49);
  const Eigen::MatrixXd W = (X.transpose() * X + reg).ldlt().solve(X.transpose() * Y);
  int correct = 0;
  for (auto i : te) {
    Eigen::Index pred = 0;
    (xs[i].transpose() * W).maxCoeff(&pred);
    correct += pred == ys[i];
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(te.size()) > 0.9);
}

TEST_CASE("run specs") {
  const auto runs = parse_runs({"single", "mixed", "mutual"}, {"ce", "nmc", "lr", "nmc+lr"});
  REQUIRE(runs.size() == 6);
  CHECK(run_name(runs[0]) == "single");
  CHECK(run_name(runs[5]) == "mutual:nmc+lr");
  CHECK(kind_of([] { parse_runs({"solo"}, {"ce"}); }) == ErrorKind::kConfig);
  CHECK(kind_of([] { parse_runs({"mutual"}, {"triplet"}); }) == ErrorKind::kConfig);

  train::TrainConfig base;
  base.loss_weights = {1.0, 0.5, 0.25};
  const auto single = run_configs(runs[0], base);
  REQUIRE(single.size() == 2);
  CHECK(single[0].mode == train::TrainMode::kSingleFfpe);
  CHECK(single[1].mode == train::TrainMode::kSingleFrozen);
  CHECK(single[0].loss_weights.nmc == 0.0);
  const auto lr = run_configs(runs[4], base).front();
  CHECK(lr.loss_weights.nmc == 0.0);
  CHECK(lr.loss_weights.lr == 0.25);
  const auto both = run_configs(runs[5], base).front();
  CHECK(both.loss_weights.nmc == 0.5);
  CHECK(both.loss_weights.lr == 0.25);
  const auto kl = run_configs({Scheme::kMutual, "kl"}, base).front();
  CHECK(kl.contrastive == train::ContrastiveKind::kKl);
}

TEST_CASE("rank ratio against constructed singular values") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Eigen::MatrixXd A(6, 6), B(4, 4);
  for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = n(rng);
  const Eigen::MatrixXd U = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ();
  const Eigen::MatrixXd V = Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(6, 4);
  S(0, 0) = 5.0;
  S(1, 1) = 3.0;
  S(2, 2) = 1.5;
  S(3, 3) = 0.5;
  const Eigen::MatrixXd M = U * S * V.transpose();
  CHECK(rank_ratio(M, 2) == doctest::Approx(8.0 / 10.0).epsilon(1e-12));
  CHECK(rank_ratio(M, 1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rank_ratio(M, 9) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isnan(rank_ratio(Eigen::MatrixXd::Zero(3, 3), 2)));
}

TEST_CASE("comparison report structure and determinism") {
  const auto spec = small_spec(4);
  const auto ds = scratch("cmp_data");
  generate_dataset(spec, ds);
  const auto runs = parse_runs({"single", "mixed", "mutual"}, {"ce", "nmc+lr"});
  const auto r1 = run_comparison(spec, small_train(), runs, ds, scratch("cmp_work_1"));
  const auto r2 = run_comparison(spec, small_train(), runs, ds, scratch("cmp_work_2"));
  CHECK(r1.json == r2.json);
  const auto j = nlohmann::json::parse(r1.json);
  REQUIRE(j.at("runs").size() == 4);
  CHECK(j.at("patients").at("train") == 6);
  CHECK(j.at("patients").at("test") == 6);
  for (const auto& run : j.at("runs")) {
    for (const char* m : {"ffpe", "frozen"}) {
      const double acc = run.at("test").at(m).at("accuracy").get<double>();
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
      CHECK(run.at("test").at(m).at("config_hash").get<std::string>().size() == 64);
    }
  }
  auto curve_has = [](const nlohmann::json& curve, const char* term) {
    for (const auto& [mode, epochs] : curve.items()) {
      for (const auto& e : epochs) {
        for (const auto& [k, b] : e.at("losses").items()) {
          if (b.at(term).get<double>() != 0.0) return true;
        }
      }
    }
    return false;
  };
  const auto& single = j.at("runs").at(0);
  CHECK(single.at("name") == "single");
  CHECK(single.at("loss_curve").size() == 2);
  CHECK(!curve_has(single.at("loss_curve"), "nmc"));
  CHECK(!curve_has(single.at("loss_curve"), "lr"));
  const auto& mutual = j.at("runs").at(3);
  CHECK(mutual.at("name") == "mutual:nmc+lr");
  CHECK(curve_has(mutual.at("loss_curve"), "nmc"));
  CHECK(curve_has(mutual.at("loss_curve"), "lr"));
  CHECK(mutual.at("latent").at("rank_ratio").size() == 3);
  CHECK(r1.json.find("seconds") == std::string::npos);
}

TEST_CASE("temperature sweep") {
  const auto spec = small_spec(3);
  const auto ds = scratch("sweep_data");
  generate_dataset(spec, ds);
  const auto work0 = scratch("sweep_bad");
  CHECK(kind_of([&] { temperature_sweep(spec, small_train(), {0.5, 0.0}, ds, work0); }) ==
        ErrorKind::kConfig);
  CHECK(!std::filesystem::exists(work0));
  auto base = small_train();
  base.epochs = 1;
  const auto rows = temperature_sweep(spec, base, {1.0, 0.1, 1e-300}, ds, scratch("sweep"));
  REQUIRE(rows.size() == 3);
  CHECK(!rows[0].collapsed);
  CHECK(!rows[1].collapsed);
  CHECK(rows[2].collapsed);
  CHECK(rows[2].collapse_step == 0);
  const auto csv = sweep_csv(rows);
  CHECK(csv.rfind("tau,ffpe_accuracy,frozen_accuracy,mean_accuracy,collapsed,collapse_step,config_hash\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

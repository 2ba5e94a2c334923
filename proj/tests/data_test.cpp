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


#include "mcl/data.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "mcl/error.hpp"
#include "mcl/io.hpp"

using namespace mcl::data;
using mcl::ErrorKind;
using mcl::RgbImage;

namespace fs = std::filesystem;

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

struct Disk {
  double cx, cy, r;
  bool inside(int x, int y) const {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    return dx * dx + dy * dy <= r * r;
  }
};

// Purple tissue with mild noise inside the disk, near-white background;
// `swapped` exchanges the two colours.
RgbImage disk_slide(int w, int h, const Disk& d, std::uint64_t seed,
                    bool swapped = false) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(-12, 12);
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t* px = img.at(x, y);
      const int base[3] = {150, 60, 170};
      for (int c = 0; c < 3; ++c) {
        const bool purple = d.inside(x, y) != swapped;
        const int v = purple ? base[c] + noise(rng) : 245 + noise(rng) / 3;
        px[c] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
      }
    }
  }
  return img;
}

RgbImage tissue_block(int w, int h, std::uint64_t seed) {
  return disk_slide(w, h, {w / 2.0, h / 2.0, 10.0 * (w + h)}, seed);
}

TissueMask full_mask(const RgbImage& img, int ds, bool left_half_only = false) {
  TissueMask m;
  m.downsample = ds;
  m.width = (img.width + ds - 1) / ds;
  m.height = (img.height + ds - 1) / ds;
  m.values.assign(static_cast<std::size_t>(m.width) * m.height, 1);
  if (left_half_only) {
    for (int y = 0; y < m.height; ++y)
      for (int x = m.width / 2; x < m.width; ++x) m.values[y * m.width + x] = 0;
  }
  return m;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mcl_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Exhaustive between-class variance search, written independently.
int brute_otsu(const std::array<std::uint64_t, 256>& h) {
  double best = -1;
  std::vector<int> arg;
  for (int t = 0; t < 255; ++t) {
    double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int i = 0; i < 256; ++i) {
      if (i <= t) {
        n0 += h[i];
        s0 += i * double(h[i]);
      } else {
        n1 += h[i];
        s1 += i * double(h[i]);
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const double v = n0 * n1 * std::pow(s0 / n0 - s1 / n1, 2);
    if (v > best * (1 + 1e-12)) {
      best = v;
      arg = {t};
    } else if (std::abs(v - best) <= 1e-12 * best) {
      arg.push_back(t);
    }
  }
  return (arg.front() + arg.back()) / 2;
}

PatientBag make_bag(const std::string& id, Modality m, int grade, int crops,
                    std::uint8_t tag) {
  PatientBag b{id, m, grade, {}};
  for (int i = 0; i < crops; ++i) {
    Crop c{RgbImage(4, 4, tag), i, static_cast<int>(m)};
    c.pixels.pixels[0] = static_cast<std::uint8_t>(i);
    b.crops.push_back(std::move(c));
  }
  return b;
}

}  // namespace

TEST_CASE("saturation and otsu") {
  const std::uint8_t white[3] = {255, 255, 255}, black[3] = {0, 0, 0}, red[3] = {200, 0, 0};
  CHECK(saturation(white) == 0);
  CHECK(saturation(black) == 0);
  CHECK(saturation(red) == 255);

  std::array<std::uint64_t, 256> h{};
  h[10] = 100;
  CHECK_FALSE(otsu_threshold(h).has_value());
  h[200] = 50;
  CHECK(otsu_threshold(h).value() == (10 + 199) / 2);

  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<std::uint64_t, 256> r{};
    for (auto& v : r) v = rng() % 50;
    CHECK(otsu_threshold(r).value() == brute_otsu(r));
  }
}

TEST_CASE("segment_tissue on synthetic slides") {
  SUBCASE("uniform white gives an empty mask") {
    RgbImage white(400, 300, 255);
    auto m = segment_tissue(white, 4);
    CHECK(m.empty());
    CHECK(m.tissue_fraction() == 0.0);
  }
  SUBCASE("purple disk IoU against the analytic mask") {
    const Disk d{520, 380, 260};
    auto slide = disk_slide(1000, 800, d, 7);
    for (int ds : {1, 4, 8}) {
      auto m = segment_tissue(slide, ds);
      std::size_t inter = 0, uni = 0;
      for (int y = 0; y < slide.height; ++y)
        for (int x = 0; x < slide.width; ++x) {
          const bool a = m.at_full(x, y), b = d.inside(x, y);
          inter += a && b;
          uni += a || b;
        }
      CHECK(static_cast<double>(inter) / static_cast<double>(uni) >= 0.9);
    }
  }
  SUBCASE("swapped palette segments the complement") {
    // Tissue becomes the region outside the disk; the purple pixel count
    // must be preserved, i.e. the two masks partition the slide.
    const Disk d{300, 250, 150};
    auto a = segment_tissue(disk_slide(640, 480, d, 3), 4);
    auto b = segment_tissue(disk_slide(640, 480, d, 3, true), 4);
    const double na = a.tissue_fraction(), nb = b.tissue_fraction();
    CHECK(std::abs(nb - (1.0 - na)) <= 0.02 * (1.0 - na));
    std::size_t overlap = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i) overlap += a.values[i] && b.values[i];
    CHECK(overlap <= a.values.size() / 100);
  }
  CHECK(kind_of([] { segment_tissue(RgbImage(10, 10), 0); }) == ErrorKind::kInvalidParameter);
}

TEST_CASE("tile_slide grid arithmetic") {
  auto full = tissue_block(1000, 1000, 1);
  auto tiles = tile_slide(full, full_mask(full, 8));
  REQUIRE(tiles.size() == 4);
  CHECK(tiles[1].x == 500);
  CHECK(tiles[1].y == 0);
  CHECK(tiles[2].x == 0);
  CHECK(tiles[2].y == 500);
  CHECK(tiles[3].pixels == mcl::crop(full, 500, 500, 500, 500));

  CHECK(tile_slide(full, full_mask(full, 8, true)).size() == 2);

  auto wide = tissue_block(1250, 1000, 2);
  CHECK(tile_slide(wide, full_mask(wide, 8)).size() == 4);

  RgbImage small(400, 600, 255);
  CHECK(tile_slide(small, full_mask(small, 8)).empty());

  RgbImage background(1000, 1000, 240);
  CHECK(tile_slide(background, segment_tissue(background, 8)).empty());

  CHECK(kind_of([&] { tile_slide(full, full_mask(wide, 8)); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("blob_filter") {
  RgbImage blank(500, 500, 255);
  CHECK_FALSE(blob_filter(blank, 40));
  CHECK(blob_filter(tissue_block(500, 500, 4), 40));

  // Square speck of 0.5% patch area.
  RgbImage speck(500, 500, 255);
  const int side = static_cast<int>(std::sqrt(0.005 * 500 * 500));
  for (int y = 100; y < 100 + side; ++y)
    for (int x = 100; x < 100 + side; ++x) {
      speck.at(x, y)[0] = 150;
      speck.at(x, y)[1] = 60;
      speck.at(x, y)[2] = 170;
    }
  CHECK_FALSE(blob_filter(speck, 40));
  CHECK(blob_filter(speck, 40, {1, 0.004}));
  CHECK_FALSE(blob_filter(speck, 40, {2, 0.001}));

  // 8-connectivity joins diagonal neighbours.
  std::vector<std::uint8_t> bin = {1, 0, 0, 0,  //
                                   0, 1, 0, 1,  //
                                   0, 0, 0, 1};
  CHECK(count_blobs(bin, 4, 3, 1) == 2);
  CHECK(count_blobs(bin, 4, 3, 3) == 0);
  CHECK(count_blobs(bin, 4, 3, 2) == 2);
}

TEST_CASE("crop_subregions") {
  auto img = tissue_block(500, 500, 5);
  Patch p{img, 1000, 500};
  auto crops = crop_subregions(p, 224);
  REQUIRE(crops.size() == 4);
  const int expect[4][2] = {{0, 0}, {224, 0}, {0, 224}, {224, 224}};
  for (int i = 0; i < 4; ++i) {
    CHECK(crops[i].x == 1000 + expect[i][0]);
    CHECK(crops[i].y == 500 + expect[i][1]);
    CHECK(crops[i].pixels == mcl::crop(img, expect[i][0], expect[i][1], 224, 224));
  }
  Patch exact{tissue_block(224, 224, 6), 0, 0};
  auto one = crop_subregions(exact, 224);
  REQUIRE(one.size() == 1);
  CHECK(one[0].pixels == exact.pixels);
  CHECK(crop_subregions(Patch{RgbImage(672, 672), 0, 0}, 224).size() == 9);
  CHECK(kind_of([&] { crop_subregions(p, 501); }) == ErrorKind::kInvalidParameter);
}

TEST_CASE("augment") {
  auto img = tissue_block(32, 32, 8);
  img.at(0, 0)[0] = 1;  // break symmetry
  mcl::Rng rng(1);
  CHECK(augment(img, AugmentationConfig::identity(), rng) == img);
  CHECK(rotate90(rotate90(img, 2), 2) == img);
  CHECK(rotate90(rotate90(img, 1), 3) == img);
  CHECK(rotate90(img, 1) != img);
  CHECK(flip(flip(img, true), true) == img);
  CHECK(flip(img, false).at(0, 31)[0] == 1);
  CHECK(rotate90(img, 1).at(0, 31)[0] == 1);

  RgbImage rect(6, 3);
  CHECK(rotate90(rect, 1).width == 3);

  AugmentationConfig cfg;
  mcl::Rng r1(99), r2(99);
  auto a = augment(img, cfg, r1);
  auto b = augment(img, cfg, r2);
  CHECK(a == b);
  CHECK(a.width == img.width);
  mcl::Rng r3(100);
  bool differs = false;
  for (int i = 0; i < 5; ++i) differs |= augment(img, cfg, r3) != a;
  CHECK(differs);
}

TEST_CASE("paired cohort validation") {
  std::vector<PatientBag> bags = {make_bag("p1", Modality::kFfpe, 0, 2, 1),
                                  make_bag("p1", Modality::kFrozen, 0, 3, 2)};
  PairedCohort c(bags, 3);
  CHECK(c.size() == 1);
  CHECK(c.total_crops(Modality::kFrozen) == 3);

  auto missing = bags;
  missing.pop_back();
  CHECK(kind_of([&] { PairedCohort(missing, 3); }) == ErrorKind::kConfig);
  auto mismatch = bags;
  mismatch[1].grade = 2;
  CHECK(kind_of([&] { PairedCohort(mismatch, 3); }) == ErrorKind::kConfig);
  auto empty = bags;
  empty[0].crops.clear();
  CHECK(kind_of([&] { PairedCohort(empty, 3); }) == ErrorKind::kConfig);
}

TEST_CASE("sample_paired_batch") {
  SUBCASE("single patient pool") {
    PairedCohort c({make_bag("p1", Modality::kFfpe, 1, 5, 1),
                    make_bag("p1", Modality::kFrozen, 1, 5, 2)},
                   3);
    mcl::Rng rng(3);
    auto b = sample_paired_batch(c, 2, rng);
    CHECK(b.patient_ids == std::vector<std::string>{"p1", "p1"});
    CHECK(b.labels == std::vector<int>{1, 1});
    CHECK(b.ffpe_images[0].pixels[3] == 1);
    CHECK(b.frozen_images[0].pixels[3] == 2);
  }
  std::vector<PatientBag> bags;
  for (int p = 0; p < 3; ++p) {
    const std::string id = "p" + std::to_string(p);
    bags.push_back(make_bag(id, Modality::kFfpe, p, 4, static_cast<std::uint8_t>(10 + p)));
    bags.push_back(make_bag(id, Modality::kFrozen, p, 4, static_cast<std::uint8_t>(20 + p)));
  }
  PairedCohort cohort(bags, 3);
  SUBCASE("same seed, same sequence") {
    mcl::Rng a(5), b(5);
    for (int i = 0; i < 5; ++i) {
      auto x = sample_paired_batch(cohort, 8, a);
      auto y = sample_paired_batch(cohort, 8, b);
      CHECK(x.patient_ids == y.patient_ids);
      CHECK(x.ffpe_images == y.ffpe_images);
      CHECK(x.frozen_images == y.frozen_images);
    }
  }
  SUBCASE("slots pair crops of one patient and carry its grade") {
    mcl::Rng rng(6);
    auto b = sample_paired_batch(cohort, 64, rng);
    for (std::size_t k = 0; k < 64; ++k) {
      const int p = b.patient_ids[k][1] - '0';
      CHECK(b.ffpe_images[k].pixels[3] == 10 + p);
      CHECK(b.frozen_images[k].pixels[3] == 20 + p);
      CHECK(b.labels[k] == p);
    }
  }
  SUBCASE("patient frequencies are uniform") {
    mcl::Rng rng(7);
    std::map<std::string, int> freq;
    for (int i = 0; i < 1000; ++i) {
      for (const auto& id : sample_paired_batch(cohort, 10, rng).patient_ids) ++freq[id];
    }
    for (const auto& [id, n] : freq) CHECK(std::abs(n / 10000.0 - 1.0 / 3.0) <= 0.05 / 3.0);
  }
}

TEST_CASE("crop batch sampling") {
  std::vector<PatientBag> bags = {make_bag("a", Modality::kFfpe, 0, 6, 1),
                                  make_bag("a", Modality::kFrozen, 0, 2, 2),
                                  make_bag("b", Modality::kFfpe, 1, 2, 3),
                                  make_bag("b", Modality::kFrozen, 1, 2, 4)};
  PairedCohort cohort(bags, 3);
  SUBCASE("single modality never touches the other") {
    cohort.reset_reads();
    mcl::Rng rng(1);
    auto b = sample_crop_batch(cohort, {Modality::kFfpe}, 32, rng);
    CHECK(cohort.reads(Modality::kFrozen) == 0);
    CHECK(cohort.reads(Modality::kFfpe) == 32);
    for (auto m : b.modalities) CHECK(m == Modality::kFfpe);
  }
  SUBCASE("mixed composition follows corpus proportions") {
    mcl::Rng rng(2);
    std::size_t ffpe = 0, total = 0;
    for (int i = 0; i < 1000; ++i) {
      for (auto m : sample_crop_batch(cohort, {Modality::kFfpe, Modality::kFrozen}, 8, rng)
                        .modalities) {
        ffpe += m == Modality::kFfpe;
        ++total;
      }
    }
    CHECK(std::abs(double(ffpe) / double(total) - 8.0 / 12.0) <= 0.05);
  }
  SUBCASE("crops are drawn uniformly, so bigger bags are hit more") {
    mcl::Rng rng(3);
    std::map<std::string, int> freq;
    for (int i = 0; i < 1000; ++i) {
      for (const auto& id : sample_crop_batch(cohort, {Modality::kFfpe}, 8, rng).patient_ids) ++freq[id];
    }
    CHECK(std::abs(freq["a"] / 8000.0 - 0.75) <= 0.05);
  }
}

TEST_CASE("split_dataset") {
  std::vector<PatientGrade> pts;
  // Paper-scale composition: 499 patients.
  const int per_grade[3] = {134, 126, 239};
  int id = 0;
  for (int g = 0; g < 3; ++g)
    for (int i = 0; i < per_grade[g]; ++i) pts.push_back({"TCGA-" + std::to_string(id++), g});
  auto s = split_dataset(pts, {0.64, 0.16, 0.20}, 11);
  CHECK(s.train.size() == 319);
  CHECK(s.val.size() == 80);
  CHECK(s.test.size() == 100);
  CHECK(s.stratified);
  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 499);
  CHECK_NOTHROW(check_no_leakage(s));

  // Grade proportions within one patient of ideal per partition.
  std::map<std::string, int> grade;
  for (const auto& p : pts) grade[p.patient_id] = p.grade;
  std::array<int, 3> test_counts{};
  for (const auto& t : s.test) ++test_counts[grade[t]];
  for (int g = 0; g < 3; ++g) CHECK(std::abs(test_counts[g] - per_grade[g] * 0.2) <= 1.0);

  auto again = split_dataset(pts, {0.64, 0.16, 0.20}, 11);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  auto shuffled = pts;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(split_dataset(shuffled, {0.64, 0.16, 0.20}, 11).val == s.val);
  CHECK(split_dataset(pts, {0.64, 0.16, 0.20}, 12).train != s.train);

  std::vector<PatientGrade> few = {{"a", 0}, {"b", 0}, {"c", 0}, {"d", 1}};
  auto f = split_dataset(few, {0.5, 0.25, 0.25}, 1);
  CHECK_FALSE(f.stratified);
  CHECK(f.train.size() + f.val.size() + f.test.size() == 4);

  CHECK(kind_of([&] { split_dataset(pts, {0.5, 0.2, 0.2}, 1); }) ==
        ErrorKind::kInvalidParameter);
  PatientSplit leaky{{"a", "b"}, {"c"}, {"a"}};
  CHECK(kind_of([&] { check_no_leakage(leaky); }) == ErrorKind::kInvalidInput);
}

TEST_CASE("slide manifest csv") {
  CHECK(parse_csv("a,b\n\"x,1\",\"q\"\"\"\r\n").at(1) == std::vector<std::string>{"x,1", "q\""});
  CHECK(csv_escape("x,y") == "\"x,y\"");
  CHECK(grade_name(2, 3) == "IV");
  CHECK(parse_grade("III", 3) == 1);
  CHECK(parse_grade("4", 5) == 4);
  CHECK(kind_of([] { parse_grade("V", 3); }) == ErrorKind::kInvalidInput);

  auto dir = temp_dir("manifest");
  mcl::io::write_file_atomic(dir / "slides.csv",
                             "patient_id,modality,grade,image_path\n"
                             "p1,FFPE,II,p1_ffpe.png\np1,frozen,II,/abs/p1.png\n");
  auto recs = read_slide_manifest(dir / "slides.csv", 3);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].image_path == dir / "p1_ffpe.png");
  CHECK(recs[1].modality == Modality::kFrozen);
  CHECK_NOTHROW(require_both_modalities(recs));
  recs.pop_back();
  CHECK(kind_of([&] { require_both_modalities(recs); }) == ErrorKind::kConfig);

  mcl::io::write_file_atomic(dir / "dup.csv",
                             "patient_id,modality,grade,image_path\n"
                             "p1,ffpe,II,a.png\np1,ffpe,II,b.png\n");
  CHECK(kind_of([&] { read_slide_manifest(dir / "dup.csv", 3); }) == ErrorKind::kConfig);
  mcl::io::write_file_atomic(dir / "grades.csv",
                             "patient_id,modality,grade,image_path\n"
                             "p1,ffpe,II,a.png\np1,frozen,IV,b.png\n");
  CHECK(kind_of([&] { read_slide_manifest(dir / "grades.csv", 3); }) == ErrorKind::kConfig);
  fs::remove_all(dir);
}

TEST_CASE("preprocess writes a reproducible patch store") {
  auto in = temp_dir("pre_in");
  std::vector<SlideRecord> recs;
  for (int p = 0; p < 6; ++p) {
    for (Modality m : {Modality::kFfpe, Modality::kFrozen}) {
      // Two tissue tiles on the left, a blank tile on the right.
      RgbImage slide(1500, 500, 245);
      auto tissue = tissue_block(1000, 500, 100 + p * 2 + static_cast<int>(m));
      for (int y = 0; y < 500; ++y)
        std::copy_n(tissue.at(0, y), 3000, slide.at(0, y));
      const std::string name = "s" + std::to_string(p) + std::string(modality_name(m)) + ".png";
      mcl::write_png(in / name, slide);
      recs.push_back({"P" + std::to_string(p), m, p % 3, in / name, "20x"});
    }
  }
  PreprocessOptions opts;
  opts.split = {0.5, 0.0, 0.5};
  opts.seed = 4;
  auto out1 = temp_dir("pre_out1");
  auto out2 = temp_dir("pre_out2");
  auto s1 = preprocess(recs, opts, out1);
  auto s2 = preprocess(recs, opts, out2);
  CHECK(s1.slides == 12);
  CHECK(s1.patches_kept == 24);
  CHECK(s1.manifest_sha256 == s2.manifest_sha256);
  CHECK(mcl::io::sha256_hex(mcl::io::read_file(out1 / "manifest.json")) == s1.manifest_sha256);
  CHECK(fs::exists(out1 / "P0" / "ffpe" / "500_0.png"));
  CHECK_FALSE(fs::exists(out1 / "P0" / "ffpe" / "1000_0.png"));

  auto store = load_patch_store(out1);
  CHECK(store.bags.size() == 12);
  CHECK(store.bags[0].crops.size() == 8);
  CHECK(store.split.train.size() == 3);
  CHECK(store.split.test.size() == 3);
  PairedCohort train(select_patients(store.bags, store.split.train), 3);
  CHECK(train.size() == 3);

  CHECK(kind_of([&] { load_patch_store(in); }) == ErrorKind::kIo);
  for (const auto& d : {in, out1, out2}) fs::remove_all(d);
}

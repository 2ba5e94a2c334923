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

// Slide preprocessing (tissue mask, tiling, blob filter, cropping),
// augmentation, patient bags and the batch samplers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcl/image.hpp"
#include "mcl/rng.hpp"

namespace mcl::data {

enum class Modality { kFfpe = 0, kFrozen = 1 };

std::string_view modality_name(Modality m);  // "ffpe" / "frozen"
// Accepts any letter case. Throws Error(kInvalidInput).
Modality parse_modality(std::string_view s);

// Grades are class indices 0..C-1. With three classes they print as the
// WHO grades II, III, IV; otherwise as the index.
std::string grade_name(int grade, int num_classes);
// Accepts "II"/"III"/"IV" (three classes) or a plain index.
int parse_grade(std::string_view s, int num_classes);

struct SlideRecord {
  std::string patient_id;
  Modality modality = Modality::kFfpe;
  int grade = 0;
  std::filesystem::path image_path;
  std::string magnification_tag = "20x";
};

// CSV with header patient_id,modality,grade,image_path and an optional
// magnification_tag column. Relative image paths resolve against the
// manifest directory. Rejects duplicate (patient_id, modality) pairs and
// patients whose slides disagree on grade (Error(kConfig)).
std::vector<SlideRecord> read_slide_manifest(const std::filesystem::path& path,
                                             int num_classes);
std::string format_slide_manifest(const std::vector<SlideRecord>& records,
                                  int num_classes);

// Every patient must have exactly one slide of each modality.
void require_both_modalities(const std::vector<SlideRecord>& records);

// Minimal CSV support (RFC 4180 quoting).
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string csv_escape(std::string_view field);

// ---- tissue segmentation ----

struct TissueMask {
  int width = 0;   // mask resolution (downsampled)
  int height = 0;
  int downsample = 1;
  int threshold = 0;  // Otsu threshold on 8-bit saturation
  std::vector<std::uint8_t> values;  // 1 = tissue

  bool empty() const;
  double tissue_fraction() const;
  // Mask value for a full-resolution pixel.
  bool at_full(int x, int y) const {
    return values[static_cast<std::size_t>(y / downsample) * width + x / downsample] != 0;
  }
};

// HSV saturation in [0, 255] (max - min) * 255 / max, 0 for black.
std::uint8_t saturation(const std::uint8_t* rgb);

// Otsu threshold of a 256-bin histogram; nullopt when every sample falls in
// one bin. Among equally good thresholds the midpoint is returned.
std::optional<int> otsu_threshold(const std::array<std::uint64_t, 256>& hist);

// Box-downsamples by `downsample`, thresholds saturation with Otsu.
// Constant saturation gives an empty mask and a logged warning.
TissueMask segment_tissue(const RgbImage& slide, int downsample);

struct Patch {
  RgbImage pixels;
  int x = 0;  // origin in slide pixels
  int y = 0;
};

struct TileOptions {
  int tile_size = 500;
  double min_tissue_fraction = 0.5;
};

// Non-overlapping grid, row-major; partial tiles at the right and bottom
// margins are dropped.
std::vector<Patch> tile_slide(const RgbImage& slide, const TissueMask& mask,
                              const TileOptions& options = {});

struct BlobOptions {
  int min_blob_count = 1;
  // Minimum component area as a fraction of the patch area.
  double min_blob_area_fraction = 0.01;
};

// Number of 8-connected components of `binary` with at least min_area pixels.
int count_blobs(const std::vector<std::uint8_t>& binary, int width, int height,
                std::size_t min_area);

// Keep iff enough saturation blobs (saturation > threshold) are large enough.
bool blob_filter(const RgbImage& patch, int threshold,
                 const BlobOptions& options = {});

struct Crop {
  RgbImage pixels;
  int x = 0;  // origin in slide pixels
  int y = 0;
};

// floor(w / crop) x floor(h / crop) corner-aligned crops, row-major.
// Throws Error(kInvalidParameter) when crop exceeds the patch.
std::vector<Crop> crop_subregions(const Patch& patch, int crop = 224);

// ---- augmentation ----

struct AugmentationConfig {
  bool rotate = true;   // uniform over 0, 90, 180, 270 degrees
  bool flip_horizontal = true;
  bool flip_vertical = true;
  bool hsv = true;
  double hue_shift = 0.02;  // fraction of the hue circle, +-
  double saturation_shift = 0.05;
  double value_shift = 0.05;
  bool brightness_contrast = true;
  double brightness = 0.05;  // fraction of 255, +-
  double contrast = 0.05;    // relative gain change, +-

  static AugmentationConfig identity();
};

RgbImage rotate90(const RgbImage& img, int quarter_turns);  // counter-clockwise
RgbImage flip(const RgbImage& img, bool horizontal);

RgbImage augment(const RgbImage& img, const AugmentationConfig& config, Rng& rng);

// ---- bags and sampling ----

struct PatientBag {
  std::string patient_id;
  Modality modality = Modality::kFfpe;
  int grade = 0;
  std::vector<Crop> crops;
};

// Patients with both modality bags, aligned by index and sorted by id.
class PairedCohort {
 public:
  PairedCohort() = default;
  // Throws Error(kConfig) when a patient lacks a modality, bags are empty or
  // grades disagree.
  PairedCohort(std::vector<PatientBag> bags, int num_classes);

  std::size_t size() const noexcept { return ffpe_.size(); }
  int num_classes() const noexcept { return num_classes_; }
  const PatientBag& bag(std::size_t patient, Modality m) const {
    return m == Modality::kFfpe ? ffpe_[patient] : frozen_[patient];
  }
  const std::vector<PatientBag>& bags(Modality m) const {
    return m == Modality::kFfpe ? ffpe_ : frozen_;
  }
  std::size_t total_crops(Modality m) const;

  // Crop access with a per-modality read counter.
  const Crop& read(Modality m, std::size_t patient, std::size_t crop) const;
  std::uint64_t reads(Modality m) const noexcept {
    return reads_[static_cast<int>(m)];
  }
  void reset_reads() const noexcept { reads_ = {0, 0}; }

 private:
  int num_classes_ = 0;
  std::vector<PatientBag> ffpe_;
  std::vector<PatientBag> frozen_;
  mutable std::array<std::uint64_t, 2> reads_{0, 0};
};

struct PairedBatch {
  std::vector<RgbImage> ffpe_images;
  std::vector<RgbImage> frozen_images;
  std::vector<int> labels;
  std::vector<std::string> patient_ids;
};

// N patients uniformly with replacement, then one crop of each modality
// uniformly from that patient's bags. Augmentation is applied when given.
PairedBatch sample_paired_batch(const PairedCohort& cohort, int batch_size, Rng& rng,
                                const AugmentationConfig* augmentation = nullptr);

struct CropBatch {
  std::vector<RgbImage> images;
  std::vector<int> labels;
  std::vector<std::string> patient_ids;
  std::vector<Modality> modalities;
};

// Uniform over the crops of the listed modalities (modality-blind when both
// are listed).
CropBatch sample_crop_batch(const PairedCohort& cohort,
                            const std::vector<Modality>& modalities, int batch_size,
                            Rng& rng, const AugmentationConfig* augmentation = nullptr);

// ---- patient split ----

struct SplitFractions {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

struct PatientSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  bool stratified = true;
};

struct PatientGrade {
  std::string patient_id;
  int grade = 0;
};

// Stratified by grade, seeded. Partition sizes follow largest-remainder
// rounding of the totals. Falls back to an unstratified split (with a
// warning) when some grade has fewer patients than there are non-empty
// partitions. Throws Error(kInvalidParameter) if fractions do not sum to 1.
PatientSplit split_dataset(std::vector<PatientGrade> patients,
                           const SplitFractions& fractions, std::uint64_t seed);

// Throws Error(kInvalidInput) if any patient appears in two partitions.
void check_no_leakage(const PatientSplit& split);

// ---- patch store ----

struct PreprocessOptions {
  int downsample = 8;
  TileOptions tile;
  BlobOptions blob;
  int crop_size = 224;
  SplitFractions split;
  std::uint64_t seed = 0;
  int num_classes = 3;
};

struct PreprocessSummary {
  std::size_t slides = 0;
  std::size_t tiles_with_tissue = 0;
  std::size_t patches_kept = 0;
  std::string manifest_sha256;
};

// Writes <root>/<patient_id>/<modality>/<x>_<y>.png for every kept patch and
// <root>/manifest.json (options, per-slide thresholds and counts, patch
// hashes, patient split). Output depends only on the inputs and options.
PreprocessSummary preprocess(const std::vector<SlideRecord>& records,
                             const PreprocessOptions& options,
                             const std::filesystem::path& root);

struct PatchStore {
  int num_classes = 3;
  int crop_size = 224;
  PatientSplit split;
  std::vector<PatientBag> bags;  // crops of every kept patch, one bag per slide
};

// Loads the manifest and patch images, cropping each patch.
PatchStore load_patch_store(const std::filesystem::path& root);

// Bags of the listed patients (in the given order); missing ones are skipped.
std::vector<PatientBag> select_patients(const std::vector<PatientBag>& bags,
                                        const std::vector<std::string>& patient_ids);

}  // namespace mcl::data

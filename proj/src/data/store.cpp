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


#include <algorithm>
#include <json.hpp>
#include <map>

#include "mcl/data.hpp"
#include "mcl/error.hpp"
#include "mcl/io.hpp"

namespace mcl::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestVersion = "mcl-patches-v1";

void check_path_component(const std::string& id) {
  require(!id.empty() && id != "." && id != ".." &&
              id.find_first_of("/\\") == std::string::npos,
          ErrorKind::kInvalidInput, "patient id '" + id + "' is not a valid directory name");
}

std::string patch_file(const Patch& p) {
  return std::to_string(p.x) + "_" + std::to_string(p.y) + ".png";
}

json options_json(const PreprocessOptions& o) {
  return {{"downsample", o.downsample},
          {"tile_size", o.tile.tile_size},
          {"min_tissue_fraction", o.tile.min_tissue_fraction},
          {"min_blob_count", o.blob.min_blob_count},
          {"min_blob_area_fraction", o.blob.min_blob_area_fraction},
          {"crop_size", o.crop_size},
          {"split", {o.split.train, o.split.val, o.split.test}},
          {"seed", o.seed},
          {"num_classes", o.num_classes}};
}

}  // namespace

PreprocessSummary preprocess(const std::vector<SlideRecord>& records,
                             const PreprocessOptions& options, const fs::path& root) {
  require(options.crop_size >= 1 && options.crop_size <= options.tile.tile_size,
          ErrorKind::kInvalidParameter, "crop size must not exceed the tile size");
  std::vector<const SlideRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(), [](const SlideRecord* a, const SlideRecord* b) {
    return std::tie(a->patient_id, a->modality) < std::tie(b->patient_id, b->modality);
  });

  PreprocessSummary summary;
  json slides = json::array();
  std::map<std::string, int> grades;
  for (const SlideRecord* rec : order) {
    check_path_component(rec->patient_id);
    grades[rec->patient_id] = rec->grade;
    const RgbImage slide = read_image(rec->image_path);
    const TissueMask mask = segment_tissue(slide, options.downsample);
    const auto tiles = tile_slide(slide, mask, options.tile);
    json patches = json::array();
    const fs::path dir = root / rec->patient_id / std::string(modality_name(rec->modality));
    for (const auto& tile : tiles) {
      if (!blob_filter(tile.pixels, mask.threshold, options.blob)) continue;
      const std::string file = patch_file(tile);
      write_png(dir / file, tile.pixels);
      patches.push_back({{"file", file},
                         {"x", tile.x},
                         {"y", tile.y},
                         {"pixel_sha256", io::sha256_hex(std::span<const unsigned char>(
                                              tile.pixels.pixels.data(),
                                              tile.pixels.pixels.size()))}});
    }
    summary.tiles_with_tissue += tiles.size();
    summary.patches_kept += patches.size();
    ++summary.slides;
    slides.push_back({{"patient_id", rec->patient_id},
                      {"modality", modality_name(rec->modality)},
                      {"grade", rec->grade},
                      {"image", rec->image_path.filename().generic_string()},
                      {"magnification_tag", rec->magnification_tag},
                      {"width", slide.width},
                      {"height", slide.height},
                      {"otsu_threshold", mask.threshold},
                      {"tissue_fraction", mask.tissue_fraction()},
                      {"tiles_with_tissue", tiles.size()},
                      {"patches_kept", patches.size()},
                      {"patches", std::move(patches)}});
  }

  std::vector<PatientGrade> patients;
  for (const auto& [pid, g] : grades) patients.push_back({pid, g});
  const PatientSplit split = split_dataset(patients, options.split, options.seed);

  json manifest = {{"version", kManifestVersion},
                   {"options", options_json(options)},
                   {"counts",
                    {{"slides", summary.slides},
                     {"patients", patients.size()},
                     {"tiles_with_tissue", summary.tiles_with_tissue},
                     {"patches_kept", summary.patches_kept}}},
                   {"split",
                    {{"train", split.train},
                     {"val", split.val},
                     {"test", split.test},
                     {"stratified", split.stratified}}},
                   {"slides", std::move(slides)}};
  const std::string text = manifest.dump(2) + "\n";
  io::write_file_atomic(root / "manifest.json", text);
  summary.manifest_sha256 = io::sha256_hex(text);
  return summary;
}

PatchStore load_patch_store(const fs::path& root) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed patch manifest: " + std::string(e.what()));
  }
  PatchStore store;
  try {
    require(manifest.at("version") == kManifestVersion, ErrorKind::kIo,
            "unsupported patch manifest version");
    const auto& opts = manifest.at("options");
    store.num_classes = opts.at("num_classes").get<int>();
    store.crop_size = opts.at("crop_size").get<int>();
    const auto& split = manifest.at("split");
    store.split.train = split.at("train").get<std::vector<std::string>>();
    store.split.val = split.at("val").get<std::vector<std::string>>();
    store.split.test = split.at("test").get<std::vector<std::string>>();
    store.split.stratified = split.at("stratified").get<bool>();
    for (const auto& s : manifest.at("slides")) {
      PatientBag bag;
      bag.patient_id = s.at("patient_id").get<std::string>();
      check_path_component(bag.patient_id);
      bag.modality = parse_modality(s.at("modality").get<std::string>());
      bag.grade = s.at("grade").get<int>();
      const fs::path dir = root / bag.patient_id / std::string(modality_name(bag.modality));
      for (const auto& p : s.at("patches")) {
        Patch patch{read_image(dir / p.at("file").get<std::string>()), p.at("x").get<int>(),
                    p.at("y").get<int>()};
        for (auto& c : crop_subregions(patch, store.crop_size)) bag.crops.push_back(std::move(c));
      }
      store.bags.push_back(std::move(bag));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed patch manifest: " + std::string(e.what()));
  }
  check_no_leakage(store.split);
  return store;
}

}  // namespace mcl::data

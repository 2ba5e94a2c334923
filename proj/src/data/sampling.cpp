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


#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mcl/data.hpp"
#include "mcl/error.hpp"

namespace mcl::data {

PairedCohort::PairedCohort(std::vector<PatientBag> bags, int num_classes)
    : num_classes_(num_classes) {
  require(num_classes >= 2, ErrorKind::kConfig, "num_classes must be at least 2");
  std::map<std::string, std::array<PatientBag*, 2>> by_patient;
  for (auto& bag : bags) {
    auto& slot = by_patient[bag.patient_id][static_cast<int>(bag.modality)];
    require(slot == nullptr, ErrorKind::kConfig,
            "duplicate " + std::string(modality_name(bag.modality)) + " bag for patient " +
                bag.patient_id);
    slot = &bag;
  }
  for (auto& [pid, pair] : by_patient) {
    for (int m = 0; m < 2; ++m) {
      require(pair[m] != nullptr, ErrorKind::kConfig,
              "patient " + pid + " has no " +
                  std::string(modality_name(static_cast<Modality>(m))) + " bag");
      require(!pair[m]->crops.empty(), ErrorKind::kConfig,
              "patient " + pid + " has an empty " +
                  std::string(modality_name(static_cast<Modality>(m))) + " bag");
    }
    require(pair[0]->grade == pair[1]->grade, ErrorKind::kConfig,
            "patient " + pid + " has different grades per modality");
    require(pair[0]->grade >= 0 && pair[0]->grade < num_classes, ErrorKind::kConfig,
            "patient " + pid + " has an out-of-range grade");
    ffpe_.push_back(std::move(*pair[0]));
    frozen_.push_back(std::move(*pair[1]));
  }
}

std::size_t PairedCohort::total_crops(Modality m) const {
  std::size_t n = 0;
  for (const auto& b : bags(m)) n += b.crops.size();
  return n;
}

const Crop& PairedCohort::read(Modality m, std::size_t patient, std::size_t crop) const {
  ++reads_[static_cast<int>(m)];
  return bag(patient, m).crops.at(crop);
}

PairedBatch sample_paired_batch(const PairedCohort& cohort, int batch_size, Rng& rng,
                                const AugmentationConfig* augmentation) {
  require(cohort.size() > 0, ErrorKind::kConfig, "cannot sample from an empty cohort");
  require(batch_size >= 1, ErrorKind::kInvalidParameter, "batch size must be >= 1");
  PairedBatch batch;
  for (int k = 0; k < batch_size; ++k) {
    const auto p = static_cast<std::size_t>(uniform_index(rng, cohort.size()));
    const auto& fb = cohort.bag(p, Modality::kFfpe);
    const auto& zb = cohort.bag(p, Modality::kFrozen);
    const auto fi = static_cast<std::size_t>(uniform_index(rng, fb.crops.size()));
    const auto zi = static_cast<std::size_t>(uniform_index(rng, zb.crops.size()));
    const RgbImage& fimg = cohort.read(Modality::kFfpe, p, fi).pixels;
    const RgbImage& zimg = cohort.read(Modality::kFrozen, p, zi).pixels;
    if (augmentation != nullptr) {
      batch.ffpe_images.push_back(augment(fimg, *augmentation, rng));
      batch.frozen_images.push_back(augment(zimg, *augmentation, rng));
    } else {
      batch.ffpe_images.push_back(fimg);
      batch.frozen_images.push_back(zimg);
    }
    batch.labels.push_back(fb.grade);
    batch.patient_ids.push_back(fb.patient_id);
  }
  return batch;
}

CropBatch sample_crop_batch(const PairedCohort& cohort,
                            const std::vector<Modality>& modalities, int batch_size,
                            Rng& rng, const AugmentationConfig* augmentation) {
  require(!modalities.empty(), ErrorKind::kInvalidParameter, "no modality to sample from");
  require(batch_size >= 1, ErrorKind::kInvalidParameter, "batch size must be >= 1");
  struct Range {
    Modality m;
    std::size_t patient;
    std::size_t end;  // cumulative crop count
  };
  std::vector<Range> ranges;
  std::size_t total = 0;
  for (Modality m : modalities) {
    for (std::size_t p = 0; p < cohort.size(); ++p) {
      total += cohort.bag(p, m).crops.size();
      ranges.push_back({m, p, total});
    }
  }
  require(total > 0, ErrorKind::kConfig, "cannot sample from an empty cohort");
  CropBatch batch;
  for (int k = 0; k < batch_size; ++k) {
    const auto u = static_cast<std::size_t>(uniform_index(rng, total));
    const auto it = std::upper_bound(ranges.begin(), ranges.end(), u,
                                     [](std::size_t v, const Range& r) { return v < r.end; });
    const std::size_t begin = it == ranges.begin() ? 0 : std::prev(it)->end;
    const RgbImage& img = cohort.read(it->m, it->patient, u - begin).pixels;
    batch.images.push_back(augmentation ? augment(img, *augmentation, rng) : img);
    const auto& bag = cohort.bag(it->patient, it->m);
    batch.labels.push_back(bag.grade);
    batch.patient_ids.push_back(bag.patient_id);
    batch.modalities.push_back(it->m);
  }
  return batch;
}

namespace {

// Largest-remainder apportionment of n items; ties go to the earlier part.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& f) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double ideal = f[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    rem[i] = ideal - static_cast<double>(counts[i]);
    used += counts[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (rem[i] > rem[best] + 1e-12) best = i;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++used;
  }
  while (used > n) {  // only reachable through the 1e-9 nudge
    for (int i = 2; i >= 0 && used > n; --i) {
      if (counts[i] > 0) {
        --counts[i];
        --used;
      }
    }
  }
  return counts;
}

template <typename V>
void shuffle(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace

PatientSplit split_dataset(std::vector<PatientGrade> patients,
                           const SplitFractions& fractions, std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double v : f) {
    require(v >= 0.0 && std::isfinite(v), ErrorKind::kInvalidParameter,
            "split fractions must be non-negative");
  }
  require(std::abs(f[0] + f[1] + f[2] - 1.0) <= 1e-9, ErrorKind::kInvalidParameter,
          "split fractions must sum to 1");
  std::sort(patients.begin(), patients.end(),
            [](const PatientGrade& a, const PatientGrade& b) { return a.patient_id < b.patient_id; });
  for (std::size_t i = 1; i < patients.size(); ++i) {
    require(patients[i].patient_id != patients[i - 1].patient_id, ErrorKind::kInvalidInput,
            "duplicate patient " + patients[i].patient_id);
  }
  Rng rng(derive_seed(seed, "split"));
  const int parts = static_cast<int>(std::count_if(f.begin(), f.end(), [](double v) { return v > 0; }));

  std::map<int, std::vector<std::string>> by_grade;
  for (const auto& p : patients) by_grade[p.grade].push_back(p.patient_id);
  bool stratified = true;
  for (const auto& [g, ids] : by_grade) {
    if (static_cast<int>(ids.size()) < parts) stratified = false;
  }

  std::array<std::vector<std::string>, 3> out;
  if (stratified) {
    // Cumulative apportionment keeps each grade proportional while the
    // partition totals equal the apportionment of the whole cohort.
    std::array<std::size_t, 3> prev{};
    std::size_t seen = 0;
    std::vector<std::pair<std::vector<std::string>, std::array<std::size_t, 3>>> plan;
    for (auto& [g, ids] : by_grade) {
      shuffle(ids, rng);
      seen += ids.size();
      const auto cum = apportion(seen, f);
      std::array<std::size_t, 3> take{};
      for (int i = 0; i < 3; ++i) {
        if (cum[i] < prev[i]) stratified = false;
        take[i] = cum[i] - std::min(cum[i], prev[i]);
      }
      prev = cum;
      plan.emplace_back(ids, take);
    }
    if (stratified) {
      for (const auto& [ids, take] : plan) {
        std::size_t pos = 0;
        for (int i = 0; i < 3; ++i) {
          for (std::size_t k = 0; k < take[i]; ++k) out[i].push_back(ids[pos++]);
        }
      }
    }
  }
  if (!stratified) {
    spdlog::warn("too few patients in some grade for a stratified split; splitting unstratified");
    for (auto& v : out) v.clear();
    Rng flat(derive_seed(seed, "split-unstratified"));
    std::vector<std::string> ids;
    for (const auto& p : patients) ids.push_back(p.patient_id);
    shuffle(ids, flat);
    const auto take = apportion(ids.size(), f);
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < take[i]; ++k) out[i].push_back(ids[pos++]);
    }
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  PatientSplit split{std::move(out[0]), std::move(out[1]), std::move(out[2]), stratified};
  check_no_leakage(split);
  return split;
}

void check_no_leakage(const PatientSplit& split) {
  std::set<std::string> seen;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto& id : *part) {
      require(seen.insert(id).second, ErrorKind::kInvalidInput,
              "patient " + id + " appears in more than one partition");
    }
  }
}

std::vector<PatientBag> select_patients(const std::vector<PatientBag>& bags,
                                        const std::vector<std::string>& patient_ids) {
  std::vector<PatientBag> out;
  for (const auto& id : patient_ids) {
    for (const auto& b : bags) {
      if (b.patient_id == id) out.push_back(b);
    }
  }
  return out;
}

}  // namespace mcl::data

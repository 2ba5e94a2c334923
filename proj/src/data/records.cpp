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
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "mcl/data.hpp"
#include "mcl/error.hpp"
#include "mcl/io.hpp"

namespace mcl::data {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string_view modality_name(Modality m) {
  return m == Modality::kFfpe ? "ffpe" : "frozen";
}

Modality parse_modality(std::string_view s) {
  const std::string l = lower(trim(s));
  if (l == "ffpe") return Modality::kFfpe;
  if (l == "frozen") return Modality::kFrozen;
  fail(ErrorKind::kInvalidInput, "unknown modality '" + std::string(s) + "'");
}

std::string grade_name(int grade, int num_classes) {
  static const char* kWho[] = {"II", "III", "IV"};
  if (num_classes == 3 && grade >= 0 && grade < 3) return kWho[grade];
  return std::to_string(grade);
}

int parse_grade(std::string_view s, int num_classes) {
  const std::string t = trim(s);
  if (num_classes == 3) {
    if (t == "II") return 0;
    if (t == "III") return 1;
    if (t == "IV") return 2;
  }
  int g = -1;
  std::istringstream is(t);
  if (!(is >> g) || !is.eof() || g < 0 || g >= num_classes) {
    fail(ErrorKind::kInvalidInput, "bad grade '" + std::string(s) + "'");
  }
  return g;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      field.clear();
      row.clear();
      any = false;
    } else {
      field.push_back(ch);
      any = true;
    }
  }
  require(!quoted, ErrorKind::kInvalidInput, "unterminated quote in CSV");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::vector<SlideRecord> read_slide_manifest(const std::filesystem::path& path,
                                             int num_classes) {
  const auto rows = parse_csv(io::read_file(path));
  require(!rows.empty(), ErrorKind::kConfig, "slide manifest is empty: " + path.string());
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) col[lower(trim(rows[0][i]))] = static_cast<int>(i);
  for (const char* name : {"patient_id", "modality", "grade", "image_path"}) {
    require(col.count(name) != 0, ErrorKind::kConfig,
            std::string("slide manifest lacks column '") + name + "'");
  }
  const auto base = path.parent_path();
  std::vector<SlideRecord> records;
  std::set<std::pair<std::string, Modality>> seen;
  std::map<std::string, int> grades;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto get = [&](const char* name) -> std::string {
      const int c = col.at(name);
      require(c < static_cast<int>(row.size()), ErrorKind::kConfig,
              "slide manifest row " + std::to_string(r + 1) + " is short");
      return trim(row[static_cast<std::size_t>(c)]);
    };
    SlideRecord rec;
    rec.patient_id = get("patient_id");
    require(!rec.patient_id.empty(), ErrorKind::kConfig,
            "empty patient_id on row " + std::to_string(r + 1));
    try {
      rec.modality = parse_modality(get("modality"));
      rec.grade = parse_grade(get("grade"), num_classes);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, "row " + std::to_string(r + 1) + ": " + e.what());
    }
    std::filesystem::path img = get("image_path");
    rec.image_path = img.is_relative() ? base / img : img;
    if (col.count("magnification_tag") != 0) rec.magnification_tag = get("magnification_tag");
    require(seen.insert({rec.patient_id, rec.modality}).second, ErrorKind::kConfig,
            "duplicate slide for patient " + rec.patient_id + " (" +
                std::string(modality_name(rec.modality)) + ")");
    auto [it, fresh] = grades.emplace(rec.patient_id, rec.grade);
    require(fresh || it->second == rec.grade, ErrorKind::kConfig,
            "patient " + rec.patient_id + " has slides with different grades");
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_slide_manifest(const std::vector<SlideRecord>& records,
                                  int num_classes) {
  std::string out = "patient_id,modality,grade,image_path,magnification_tag\n";
  for (const auto& r : records) {
    out += csv_escape(r.patient_id) + "," + std::string(modality_name(r.modality)) + "," +
           grade_name(r.grade, num_classes) + "," + csv_escape(r.image_path.generic_string()) +
           "," + csv_escape(r.magnification_tag) + "\n";
  }
  return out;
}

void require_both_modalities(const std::vector<SlideRecord>& records) {
  std::map<std::string, int> mask;
  for (const auto& r : records) mask[r.patient_id] |= 1 << static_cast<int>(r.modality);
  for (const auto& [pid, m] : mask) {
    require(m == 3, ErrorKind::kConfig,
            "patient " + pid + " lacks a " + (m == 1 ? "frozen" : "ffpe") + " slide");
  }
}

}  // namespace mcl::data

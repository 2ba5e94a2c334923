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


#include "mcl/cli.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cctype>
#include <charconv>
#include <iostream>

#include "mcl/image.hpp"
#include "mcl/inference.hpp"
#include "mcl/io.hpp"

namespace mcl::cli {

using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidParameter: return kExitValidation;
    case ErrorKind::kIo: return kExitIo;
    default: return kExitRuntime;
  }
}

// ---- config text ----

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

}  // namespace

json parse_value(std::string_view text) {
  const auto t = trim(text);
  require(!t.empty(), ErrorKind::kConfig, "empty value");
  if (t.front() == '"') {
    require(t.size() >= 2 && t.back() == '"', ErrorKind::kConfig,
            "unterminated string " + std::string(t));
    std::string out;
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
      if (t[i] == '\\' && i + 2 < t.size()) ++i;
      out += t[i];
    }
    return out;
  }
  if (t == "true") return true;
  if (t == "false") return false;
  const char* b = t.data();
  const char* e = t.data() + t.size();
  const bool digits = std::all_of(t.begin() + (t.front() == '-' || t.front() == '+'), t.end(),
                                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
  if (digits && t.size() > (t.front() == '-' || t.front() == '+' ? 1u : 0u)) {
    if (t.front() == '-') {
      std::int64_t v = 0;
      const auto r = std::from_chars(b, e, v);
      require(r.ec == std::errc() && r.ptr == e, ErrorKind::kConfig,
              "integer out of range: " + std::string(t));
      return v;
    }
    std::uint64_t v = 0;
    const auto r = std::from_chars(b + (t.front() == '+'), e, v);
    require(r.ec == std::errc() && r.ptr == e, ErrorKind::kConfig,
            "integer out of range: " + std::string(t));
    if (v <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      return static_cast<std::int64_t>(v);
    }
    return v;
  }
  double d = 0.0;
  const auto r = std::from_chars(b + (t.front() == '+'), e, d);
  if (r.ec == std::errc() && r.ptr == e) return d;
  return std::string(t);
}

json parse_config_text(std::string_view text) {
  json out = json::object();
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    require(line.front() != '[', ErrorKind::kConfig, where + "sections are not supported");
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::kConfig, where + "expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    require(valid_key(key), ErrorKind::kConfig, where + "bad key '" + key + "'");
    require(!out.contains(key), ErrorKind::kConfig, where + "duplicate key '" + key + "'");
    try {
      out[key] = parse_value(line.substr(eq + 1));
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, where + e.what());
    }
  }
  return out;
}

std::pair<std::string, json> parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  require(eq != std::string_view::npos, ErrorKind::kConfig,
          "expected key=value, got '" + std::string(text) + "'");
  const std::string key(trim(text.substr(0, eq)));
  require(valid_key(key), ErrorKind::kConfig, "bad key '" + key + "'");
  return {key, parse_value(text.substr(eq + 1))};
}

// ---- resolution ----

template <typename T>
Resolved<T> resolve(const T& base, const json& file, const json& flags,
                    const std::function<json(const T&)>& to_json,
                    const std::function<T(const json&)>& from_json,
                    const std::function<std::vector<std::string>(const T&)>& check) {
  Resolved<T> r;
  const json defaults = to_json(base);
  json merged = defaults;
  for (const auto& [source, name] : {std::pair{&file, "config file"}, std::pair{&flags, "command line"}}) {
    if (source->is_null()) continue;
    for (const auto& [key, value] : source->items()) {
      if (!defaults.contains(key)) {
        r.errors.push_back("unknown key '" + key + "' (" + name + ")");
        continue;
      }
      json one = defaults;
      one[key] = value;
      try {
        from_json(one);
        merged[key] = value;
      } catch (const Error& e) {
        r.errors.push_back(std::string(e.what()) + " (" + name + ")");
      }
    }
  }
  // Values that parsed are still range-checked so every problem is reported.
  r.value = from_json(merged);
  for (auto& e : check(r.value)) r.errors.push_back(std::move(e));
  return r;
}

Resolved<train::TrainConfig> resolve_train_config(const train::TrainConfig& base,
                                                  const json& file, const json& flags) {
  return resolve<train::TrainConfig>(base, file, flags, train::config_to_json,
                                     train::config_from_json, train::validate);
}

json pipeline_to_json(const data::PreprocessOptions& o) {
  return {{"downsample", o.downsample},
          {"tile_size", o.tile.tile_size},
          {"min_tissue_fraction", o.tile.min_tissue_fraction},
          {"min_blob_count", o.blob.min_blob_count},
          {"min_blob_area_fraction", o.blob.min_blob_area_fraction},
          {"crop_size", o.crop_size},
          {"split_train", o.split.train},
          {"split_val", o.split.val},
          {"split_test", o.split.test},
          {"seed", o.seed},
          {"num_classes", o.num_classes}};
}

data::PreprocessOptions pipeline_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kConfig, "pipeline options must be an object");
  data::PreprocessOptions o;
  const json defaults = pipeline_to_json(o);
  for (const auto& [key, value] : j.items()) {
    require(defaults.contains(key), ErrorKind::kConfig, "unknown pipeline key '" + key + "'");
    const json& d = defaults.at(key);
    const bool ok = (d.is_number_float() && value.is_number()) ||
                    (d.is_number_integer() && value.is_number_integer());
    require(ok, ErrorKind::kConfig, "pipeline key '" + key + "' has the wrong type");
  }
  json m = defaults;
  m.update(j);
  o.downsample = m.at("downsample").get<int>();
  o.tile.tile_size = m.at("tile_size").get<int>();
  o.tile.min_tissue_fraction = m.at("min_tissue_fraction").get<double>();
  o.blob.min_blob_count = m.at("min_blob_count").get<int>();
  o.blob.min_blob_area_fraction = m.at("min_blob_area_fraction").get<double>();
  o.crop_size = m.at("crop_size").get<int>();
  o.split = {m.at("split_train").get<double>(), m.at("split_val").get<double>(),
             m.at("split_test").get<double>()};
  require(!m.at("seed").is_number_integer() || m.at("seed").is_number_unsigned() ||
              m.at("seed").get<std::int64_t>() >= 0,
          ErrorKind::kConfig, "seed must be non-negative");
  o.seed = m.at("seed").get<std::uint64_t>();
  o.num_classes = m.at("num_classes").get<int>();
  return o;
}

std::vector<std::string> validate_pipeline(const data::PreprocessOptions& o) {
  std::vector<std::string> errs;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  check(o.downsample >= 1, "downsample must be >= 1");
  check(o.crop_size >= 8, "crop_size must be >= 8");
  check(o.tile.tile_size >= o.crop_size, "tile_size must be >= crop_size");
  check(o.tile.min_tissue_fraction > 0.0 && o.tile.min_tissue_fraction <= 1.0,
        "min_tissue_fraction must lie in (0, 1]");
  check(o.blob.min_blob_count >= 0, "min_blob_count must be >= 0");
  check(o.blob.min_blob_area_fraction >= 0.0 && o.blob.min_blob_area_fraction <= 1.0,
        "min_blob_area_fraction must lie in [0, 1]");
  check(o.split.train >= 0.0 && o.split.val >= 0.0 && o.split.test >= 0.0 &&
            std::abs(o.split.train + o.split.val + o.split.test - 1.0) <= 1e-9,
        "split fractions must be non-negative and sum to 1");
  check(o.num_classes >= 2, "num_classes must be >= 2");
  return errs;
}

Resolved<data::PreprocessOptions> resolve_pipeline_options(const json& file, const json& flags) {
  return resolve<data::PreprocessOptions>({}, file, flags, pipeline_to_json, pipeline_from_json,
                                          validate_pipeline);
}

Resolved<synth::SyntheticSpec> resolve_synth_spec(const json& file, const json& flags) {
  return resolve<synth::SyntheticSpec>(
      {}, file, flags, synth::spec_to_json, synth::spec_from_json,
      [](const synth::SyntheticSpec& s) -> std::vector<std::string> {
        try {
          synth::validate_spec(s);
        } catch (const Error& e) {
          std::vector<std::string> errs;
          std::string msg = e.what();
          std::size_t p = msg.find('\n');
          while (p != std::string::npos) {
            const auto q = msg.find('\n', p + 1);
            errs.emplace_back(trim(msg.substr(p + 1, q == std::string::npos ? q : q - p - 1)));
            p = q;
          }
          return errs;
        }
        return {};
      });
}

// ---- commands ----

namespace {

void configure_logging(const std::string& level, bool as_json) {
  auto logger = spdlog::get("mcl");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("mcl");
    spdlog::set_default_logger(logger);
  }
  logger->set_level(spdlog::level::from_str(level));
  if (as_json) {
    logger->set_pattern(R"({"time":"%Y-%m-%dT%H:%M:%S.%e","level":"%l","msg":"%v"})");
  } else {
    logger->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
  }
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  return parse_config_text(io::read_file(path));
}

json assignments(const std::vector<std::string>& sets) {
  json out = json::object();
  for (const auto& s : sets) {
    auto [k, v] = parse_assignment(s);
    out[k] = v;
  }
  return out;
}

template <typename T>
T require_resolved(const Resolved<T>& r) {
  if (!r.ok()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    fail(ErrorKind::kConfig, msg);
  }
  return r.value;
}

std::vector<std::string> split_ids(const data::PatchStore& store, const std::string& split) {
  if (split == "train") return store.split.train;
  if (split == "val") return store.split.val;
  return store.split.test;
}

data::PairedCohort cohort_of(const data::PatchStore& store, const std::vector<std::string>& ids) {
  if (ids.empty()) return {};
  return data::PairedCohort(data::select_patients(store.bags, ids), store.num_classes);
}

std::vector<data::Modality> modalities_of(const std::string& m) {
  if (m == "both") return {data::Modality::kFfpe, data::Modality::kFrozen};
  return {data::parse_modality(m)};
}

// Provenance written next to artifacts that cannot embed it.
void write_sidecar(const std::filesystem::path& artifact, json meta) {
  io::write_file_atomic(artifact.string() + ".json", meta.dump(2) + "\n");
}

std::string spec_hash(const synth::SyntheticSpec& s) {
  return io::sha256_hex(synth::spec_to_json(s).dump());
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"mcl: paired FFPE / frozen-section grading toolkit", "mcl"};
  app.require_subcommand(1);
  std::string log_level = "info";
  bool log_json = false;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.add_flag("--log-json", log_json, "JSON log lines");

  const std::vector<std::string> kSplits{"train", "val", "test"};

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Segment, tile, filter and crop slides");
  std::string pre_manifest, pre_out, pre_config;
  std::vector<std::string> pre_sets;
  pre->add_option("--manifest", pre_manifest, "Slide manifest CSV")->required();
  pre->add_option("--out", pre_out, "Patch store directory")->required();
  pre->add_option("--config", pre_config, "Pipeline config file");
  pre->add_option("--set", pre_sets, "key=value override");

  // train
  auto* tr = app.add_subcommand("train", "Train on a patch store");
  std::string tr_data, tr_out, tr_config, tr_mode, tr_backbone;
  std::vector<std::string> tr_sets;
  double tr_tau = 0, tr_lr = 0;
  int tr_epochs = 0, tr_batch = 0;
  std::uint64_t tr_seed = 0;
  bool tr_resume = false;
  tr->add_option("--data", tr_data, "Patch store directory")->required();
  tr->add_option("--out", tr_out, "Run directory")->required();
  tr->add_option("--config", tr_config, "Training config file");
  tr->add_option("--set", tr_sets, "key=value override");
  auto* o_mode = tr->add_option("--mode", tr_mode, "mutual, single-ffpe, single-frozen, mixed");
  auto* o_tau = tr->add_option("--tau", tr_tau, "Contrastive temperature");
  auto* o_epochs = tr->add_option("--epochs", tr_epochs);
  auto* o_batch = tr->add_option("--batch-size", tr_batch);
  auto* o_lr = tr->add_option("--lr-max", tr_lr);
  auto* o_seed = tr->add_option("--seed", tr_seed);
  auto* o_backbone = tr->add_option("--backbone", tr_backbone);
  tr->add_flag("--resume", tr_resume, "Continue from <out>/last.ckpt");

  // eval
  auto* ev = app.add_subcommand("eval", "Patient-level evaluation");
  std::string ev_ckpt, ev_data, ev_split = "test", ev_modality = "both", ev_out;
  bool ev_soft = false;
  int ev_batch = 0;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data, "Patch store directory")->required();
  ev->add_option("--split", ev_split)->check(CLI::IsMember(kSplits));
  ev->add_option("--modality", ev_modality)->check(CLI::IsMember({"ffpe", "frozen", "both"}));
  ev->add_option("--out", ev_out)->required();
  auto* o_soft = ev->add_flag("--soft-voting", ev_soft, "Average probabilities instead of votes");
  auto* o_ev_batch = ev->add_option("--batch-size", ev_batch);

  // cam
  auto* cam = app.add_subcommand("cam", "Class activation map of one crop");
  std::string cam_ckpt, cam_image, cam_grade, cam_modality = "ffpe", cam_out;
  cam->add_option("--ckpt", cam_ckpt)->required();
  cam->add_option("--image", cam_image)->required();
  cam->add_option("--grade", cam_grade, "Target grade (II, III, IV or an index)")->required();
  cam->add_option("--modality", cam_modality)->check(CLI::IsMember({"ffpe", "frozen"}));
  cam->add_option("--out", cam_out)->required();

  // export-latents
  auto* lat = app.add_subcommand("export-latents", "Write per-crop latent vectors");
  std::string lat_ckpt, lat_data, lat_split = "test", lat_modality = "ffpe", lat_layer = "z_nmc",
                                  lat_out;
  lat->add_option("--ckpt", lat_ckpt)->required();
  lat->add_option("--data", lat_data)->required();
  lat->add_option("--split", lat_split)->check(CLI::IsMember(kSplits));
  lat->add_option("--modality", lat_modality)->check(CLI::IsMember({"ffpe", "frozen"}));
  lat->add_option("--layer", lat_layer)->check(CLI::IsMember({"h", "z_nmc", "z_lr"}));
  lat->add_option("--out", lat_out)->required();

  // synth
  auto* syn = app.add_subcommand("synth", "Synthetic benchmark");
  syn->require_subcommand(1);
  std::string sy_spec, sy_data, sy_out, sy_config, sy_work;
  std::vector<std::string> sy_spec_sets, sy_sets;
  std::vector<std::string> sy_modes{"single", "mixed", "mutual"}, sy_losses{"nmc+lr"};
  std::vector<double> sy_taus{1.0, 0.5, 0.1, 0.05};
  auto* gen = syn->add_subcommand("gen", "Generate a synthetic slide cohort");
  gen->add_option("--spec", sy_spec, "Synthetic spec file");
  gen->add_option("--spec-set", sy_spec_sets, "key=value spec override");
  gen->add_option("--out", sy_out)->required();
  auto* cmp = syn->add_subcommand("compare", "Compare training schemes and losses");
  auto* sweep = syn->add_subcommand("tau-sweep", "Temperature sensitivity sweep");
  for (auto* c : {cmp, sweep}) {
    c->add_option("--spec", sy_spec, "Synthetic spec file");
    c->add_option("--spec-set", sy_spec_sets, "key=value spec override");
    c->add_option("--data", sy_data, "Generated dataset directory")->required();
    c->add_option("--config", sy_config, "Training config file");
    c->add_option("--set", sy_sets, "key=value training override");
    c->add_option("--work", sy_work, "Working directory (default <out>.work)");
    c->add_option("--out", sy_out)->required();
  }
  cmp->add_option("--modes", sy_modes, "single, mixed, mutual")->delimiter(',');
  cmp->add_option("--losses", sy_losses, "ce, nmc, lr, nmc+lr, nt_xent, kl")->delimiter(',');
  sweep->add_option("--taus", sy_taus)->delimiter(',');

  std::vector<std::string> argv_store{"mcl"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cout, std::cerr);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    configure_logging(log_level, log_json);
    if (pre->parsed()) {
      const auto opts = require_resolved(
          resolve_pipeline_options(load_config_file(pre_config), assignments(pre_sets)));
      const auto records = data::read_slide_manifest(pre_manifest, opts.num_classes);
      const auto summary = data::preprocess(records, opts, pre_out);
      spdlog::info("{} slides, {} patches kept, manifest sha256 {}", summary.slides,
                   summary.patches_kept, summary.manifest_sha256);
      return kExitOk;
    }
    if (tr->parsed()) {
      json flags = assignments(tr_sets);
      if (o_mode->count()) flags["mode"] = tr_mode;
      if (o_tau->count()) flags["tau"] = tr_tau;
      if (o_epochs->count()) flags["epochs"] = tr_epochs;
      if (o_batch->count()) flags["batch_size"] = tr_batch;
      if (o_lr->count()) flags["lr_max"] = tr_lr;
      if (o_seed->count()) flags["seed"] = tr_seed;
      if (o_backbone->count()) flags["backbone"] = tr_backbone;
      const json file = load_config_file(tr_config);
      const auto store = data::load_patch_store(tr_data);
      train::TrainConfig base;
      base.model.num_classes = store.num_classes;
      auto resolved = resolve_train_config(base, file, flags);
      if (resolved.ok() && resolved.value.model.num_classes != store.num_classes) {
        resolved.errors.push_back("num_classes " + std::to_string(resolved.value.model.num_classes) +
                                  " does not match the patch store (" +
                                  std::to_string(store.num_classes) + ")");
      }
      auto config = require_resolved(resolved);
      const auto train_cohort = cohort_of(store, store.split.train);
      require(train_cohort.size() > 0, ErrorKind::kConfig, "the patch store has no training patients");
      const auto val_cohort = cohort_of(store, store.split.val);
      const std::filesystem::path out(tr_out);
      train::FitResult result;
      if (tr_resume) {
        auto trainer = train::load_checkpoint(out / "last.ckpt");
        if (!file.empty() || !flags.empty()) {
          require(train::config_hash(trainer.config()) == train::config_hash(config),
                  ErrorKind::kConfig, "--resume: the resolved config differs from the checkpoint's");
        }
        result = train::resume(std::move(trainer), train_cohort, val_cohort, {out});
      } else {
        result = train::fit(config, train_cohort, val_cohort, {out});
      }
      if (result.collapsed) {
        std::cerr << "error: training collapsed at step " << result.collapse->step << " (epoch "
                  << result.collapse->epoch << "): " << result.collapse->reason
                  << "; partial report in " << (out / "train_report.json").string() << "\n";
        return kExitRuntime;
      }
      spdlog::info("report written to {}", (out / "train_report.json").string());
      return kExitOk;
    }
    if (ev->parsed()) {
      auto trainer = train::load_checkpoint(ev_ckpt);
      const auto store = data::load_patch_store(ev_data);
      train::TrainConfig config = trainer.config();
      if (o_soft->count()) config.soft_voting = ev_soft;
      if (o_ev_batch->count()) config.eval_batch_size = ev_batch;
      require(config.eval_batch_size >= 1, ErrorKind::kConfig, "--batch-size must be >= 1");
      require(store.num_classes == config.model.num_classes, ErrorKind::kConfig,
              "checkpoint and patch store disagree on num_classes");
      const auto cohort = cohort_of(store, split_ids(store, ev_split));
      require(cohort.size() > 0, ErrorKind::kConfig, "split '" + ev_split + "' has no patients");
      infer::MetricsReport report;
      for (auto m : modalities_of(ev_modality)) {
        report.modalities.push_back(infer::evaluate_modality(
            trainer.network_for(m), cohort.bags(m), config.model.num_classes,
            {config.soft_voting, config.eval_batch_size}));
      }
      io::write_file_atomic(ev_out, infer::metrics_report_json(report, config.model.num_classes,
                                                               train::config_hash(config)));
      return kExitOk;
    }
    if (cam->parsed()) {
      auto trainer = train::load_checkpoint(cam_ckpt);
      const int classes = trainer.config().model.num_classes;
      int grade = -1;
      const auto idx = parse_value(cam_grade);
      if (idx.is_number_integer()) {
        grade = idx.get<int>();
        require(grade >= 0 && grade < classes, ErrorKind::kInvalidParameter,
                "--grade index out of range");
      } else {
        grade = data::parse_grade(cam_grade, classes);
      }
      const auto image = read_image(cam_image);
      const auto heat = infer::compute_cam(trainer.network_for(data::parse_modality(cam_modality)),
                                           image, grade);
      write_gray_png(cam_out, heat.width, heat.height, infer::heatmap_to_gray(heat));
      write_sidecar(cam_out, {{"config_hash", train::config_hash(trainer.config())},
                              {"grade", data::grade_name(grade, classes)},
                              {"modality", cam_modality},
                              {"image_sha256", io::sha256_hex(io::read_file(cam_image))}});
      return kExitOk;
    }
    if (lat->parsed()) {
      auto trainer = train::load_checkpoint(lat_ckpt);
      const auto store = data::load_patch_store(lat_data);
      const auto& config = trainer.config();
      require(store.num_classes == config.model.num_classes, ErrorKind::kConfig,
              "checkpoint and patch store disagree on num_classes");
      const auto cohort = cohort_of(store, split_ids(store, lat_split));
      require(cohort.size() > 0, ErrorKind::kConfig, "split '" + lat_split + "' has no patients");
      const auto m = data::parse_modality(lat_modality);
      io::write_file_atomic(
          lat_out, infer::export_latents(trainer.network_for(m), cohort.bags(m),
                                         infer::parse_latent_layer(lat_layer),
                                         config.model.num_classes, config.eval_batch_size));
      write_sidecar(lat_out, {{"config_hash", train::config_hash(config)},
                              {"layer", lat_layer},
                              {"modality", lat_modality},
                              {"split", lat_split}});
      return kExitOk;
    }
    if (syn->parsed()) {
      const auto spec = require_resolved(
          resolve_synth_spec(load_config_file(sy_spec), assignments(sy_spec_sets)));
      if (gen->parsed()) {
        const auto records = synth::generate_dataset(spec, sy_out);
        io::write_file_atomic(std::filesystem::path(sy_out) / "spec.json",
                              json({{"spec", synth::spec_to_json(spec)},
                                    {"spec_hash", spec_hash(spec)}})
                                      .dump(2) +
                                  "\n");
        spdlog::info("{} slides written to {}", records.size(), sy_out);
        return kExitOk;
      }
      const auto base = require_resolved(resolve_train_config(
          synth::default_train_config(), load_config_file(sy_config), assignments(sy_sets)));
      const std::filesystem::path work = sy_work.empty() ? sy_out + ".work" : sy_work;
      if (cmp->parsed()) {
        const auto runs = synth::parse_runs(sy_modes, sy_losses);
        const auto report = synth::run_comparison(spec, base, runs, sy_data, work);
        io::write_file_atomic(sy_out, report.json);
        json timing = json::object();
        for (const auto& r : report.runs) timing[r.name] = r.seconds;
        write_sidecar(std::filesystem::path(sy_out).replace_extension(".timing"), timing);
        for (const auto& r : report.runs) {
          if (r.collapsed) spdlog::warn("run {} collapsed", r.name);
        }
        return kExitOk;
      }
      const auto rows = synth::temperature_sweep(spec, base, sy_taus, sy_data, work);
      io::write_file_atomic(sy_out, synth::sweep_csv(rows));
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace mcl::cli

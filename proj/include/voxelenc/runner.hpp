#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "voxelenc/dataset.hpp"
#include "voxelenc/error.hpp"
#include "voxelenc/matio.hpp"
#include "voxelenc/metrics.hpp"
#include "voxelenc/parallel.hpp"
#include "voxelenc/report.hpp"
#include "voxelenc/ridge.hpp"

namespace voxelenc {

enum class ExperimentKind { cv, cross, concept_transfer, sweep };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::cv: return "cv";
    case ExperimentKind::cross: return "cross";
    case ExperimentKind::concept_transfer: return "concept";
    case ExperimentKind::sweep: return "sweep";
  }
  return "cv";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "cv") return ExperimentKind::cv;
  if (s == "cross") return ExperimentKind::cross;
  if (s == "concept") return ExperimentKind::concept_transfer;
  if (s == "sweep") return ExperimentKind::sweep;
  throw ValidationError("unknown experiment kind '" + s + "' (cv|cross|concept|sweep)");
}

inline constexpr const char* kAllLayers = "all-layers";

struct ExperimentConfig {
  fs::path manifest_path;
  ExperimentKind kind = ExperimentKind::cv;
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = kDefaultSeed;
  double lambda = kDefaultLambda;
  std::vector<double> tune_grid;  ///< empty: fixed lambda
  double val_fraction = 0.1;
  Normalization normalization = Normalization::zscore;
  std::string model;               ///< empty: the subject's only model
  std::string layer;               ///< empty: the model's only layer; sweep: all
  std::vector<std::string> rois;   ///< empty: all
  std::vector<std::string> subjects;
  std::vector<std::string> cells;  ///< cross subset, e.g. {"CI"}
  std::vector<std::string> directions;  ///< concept subset
  bool group_by_concept = true;
  std::size_t block_size = kDefaultSolveBlock;
  bool permissive_zero_norm = false;
  bool permissive_nan = false;
  fs::path out_dir;
};

/// Config echo stored in reports; leaves out settings that cannot change
/// results (thread count, output directory).
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["manifest"] = c.manifest_path.string();
  j["kind"] = to_string(c.kind);
  j["k"] = c.k;
  j["seed"] = c.seed;
  if (c.tune_grid.empty()) {
    j["lambda_mode"] = "fixed";
    j["lambda"] = c.lambda;
  } else {
    j["lambda_mode"] = "tuned";
    j["tune_grid"] = c.tune_grid;
    j["val_fraction"] = c.val_fraction;
  }
  j["normalization"] = to_string(c.normalization);
  j["model"] = c.model;
  j["layer"] = c.layer;
  j["rois"] = c.rois;
  j["subjects"] = c.subjects;
  j["cells"] = c.cells;
  j["directions"] = c.directions;
  j["group_by_concept"] = c.group_by_concept;
  j["block_size"] = c.block_size;
  j["permissive_zero_norm"] = c.permissive_zero_norm;
  j["permissive_nan"] = c.permissive_nan;
  return j;
}

/// Reads a config file. Keys mirror to_json() plus "out" for the output
/// directory; relative manifest paths resolve against the config's folder.
inline ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base = {}) {
  ExperimentConfig c;
  try {
    if (j.contains("manifest")) {
      fs::path p = j.at("manifest").get<std::string>();
      c.manifest_path = p.is_absolute() || base.empty() ? p : base / p;
    }
    if (j.contains("kind")) c.kind = parse_experiment_kind(j.at("kind").get<std::string>());
    c.k = j.value("k", c.k);
    c.seed = j.value("seed", c.seed);
    c.lambda = j.value("lambda", c.lambda);
    c.tune_grid = j.value("tune_grid", c.tune_grid);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("normalization"))
      c.normalization = parse_normalization(j.at("normalization").get<std::string>());
    c.model = j.value("model", c.model);
    c.layer = j.value("layer", c.layer);
    c.rois = j.value("rois", c.rois);
    c.subjects = j.value("subjects", c.subjects);
    c.cells = j.value("cells", c.cells);
    c.directions = j.value("directions", c.directions);
    c.group_by_concept = j.value("group_by_concept", c.group_by_concept);
    c.block_size = j.value("block_size", c.block_size);
    c.permissive_zero_norm = j.value("permissive_zero_norm", c.permissive_zero_norm);
    c.permissive_nan = j.value("permissive_nan", c.permissive_nan);
    if (j.contains("out")) c.out_dir = j.at("out").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("experiment config: " + std::string(e.what()));
  }
  return c;
}

inline void validate(const ExperimentConfig& c) {
  detail::require(c.k >= 2, "k must be >= 2");
  detail::require(c.lambda >= 0.0 && std::isfinite(c.lambda), "lambda must be finite and >= 0");
  detail::require(c.block_size >= 1, "block size must be >= 1");
  if (!c.tune_grid.empty())
    detail::require(c.val_fraction > 0.0 && c.val_fraction < 0.5, "val_fraction must be in (0, 0.5)");
  if (c.kind != ExperimentKind::cross)
    detail::require(c.cells.empty(), "cells apply only to cross experiments");
  if (c.kind != ExperimentKind::concept_transfer)
    detail::require(c.directions.empty(), "directions apply only to concept experiments");
}

namespace runner_detail {

struct SubjectData {
  const SubjectSpec* spec = nullptr;
  Matrix x;
  Matrix y;
  std::vector<const RoiSpec*> rois;
};

inline std::vector<const SubjectSpec*> select_subjects(const DatasetManifest& m,
                                                       const ExperimentConfig& c) {
  std::vector<const SubjectSpec*> out;
  if (c.subjects.empty()) {
    for (const auto& s : m.subjects) out.push_back(&s);
  } else {
    for (const auto& name : c.subjects) out.push_back(&m.subject(name));
  }
  return out;
}

inline std::vector<const RoiSpec*> select_rois(const SubjectSpec& s, const ExperimentConfig& c) {
  std::vector<const RoiSpec*> out;
  if (c.rois.empty()) {
    for (const auto& r : s.rois) out.push_back(&r);
  } else {
    for (const auto& name : c.rois) {
      const auto* r = s.find_roi(name);
      detail::require(r != nullptr, "subject '" + s.name + "' has no ROI '" + name + "'");
      out.push_back(r);
    }
  }
  return out;
}

inline std::vector<std::string> models_of(const SubjectSpec& s) {
  std::vector<std::string> out;
  for (const auto& f : s.features)
    if (std::find(out.begin(), out.end(), f.model) == out.end()) out.push_back(f.model);
  return out;
}

inline std::string resolve_model(const SubjectSpec& s, const std::string& requested) {
  if (!requested.empty()) {
    const auto models = models_of(s);
    detail::require(std::find(models.begin(), models.end(), requested) != models.end(),
                    "subject '" + s.name + "' has no features for model '" + requested + "'");
    return requested;
  }
  const auto models = models_of(s);
  detail::require(models.size() == 1,
                  "subject '" + s.name + "' lists several models; choose one with --model");
  return models.front();
}

inline std::vector<const FeatureSpec*> layers_of(const SubjectSpec& s, const std::string& model) {
  std::vector<const FeatureSpec*> out;
  for (const auto& f : s.features)
    if (f.model == model) out.push_back(&f);
  return out;
}

inline const FeatureSpec& select_feature(const SubjectSpec& s, const ExperimentConfig& c) {
  const std::string model = resolve_model(s, c.model);
  const auto layers = layers_of(s, model);
  if (c.layer.empty()) {
    detail::require(layers.size() == 1, "model '" + model + "' has several layers for subject '" +
                                            s.name + "'; choose one with --layer");
    return *layers.front();
  }
  for (const auto* f : layers)
    if (f->layer == c.layer) return *f;
  throw ValidationError("subject '" + s.name + "' has no layer '" + c.layer + "' for model '" +
                        model + "'");
}

inline ReadOptions read_options(const ExperimentConfig& c) {
  return {c.permissive_nan ? NonFinitePolicy::zero_fill : NonFinitePolicy::reject};
}

/// Fits and evaluates every split x ROI; splits run on the worker pool,
/// rows come back in (split, ROI) order.
inline std::vector<LeafRow> run_splits(const SubjectData& data, const FeatureSpec& feature,
                                       const std::vector<SplitSpec>& splits,
                                       const ExperimentConfig& c) {
  const auto& rois = data.rois;
  std::vector<std::vector<LeafRow>> per_split(splits.size());
  const MetricOptions mopts{c.permissive_zero_norm};
  const FitOptions fopts{c.normalization, c.block_size};
  parallel_for(splits.size(), [&](std::size_t s) {
    const SplitSpec& split = splits[s];
    const std::string where = "subject '" + data.spec->name + "', " + feature.model + "/" +
                              feature.layer + ", " + split.label +
                              (split.fold >= 0 ? " fold " + std::to_string(split.fold) : "");
    try {
      validate_split(split);
      const Matrix x_train = data.x.select_rows(split.train_indices);
      const Matrix x_test = data.x.select_rows(split.test_indices);
      const Matrix y_train_all = data.y.select_rows(split.train_indices);
      const Matrix y_test_all = data.y.select_rows(split.test_indices);
      std::optional<PreparedDesign> shared;
      if (c.tune_grid.empty()) shared.emplace(x_train, c.lambda, fopts);
      for (std::size_t r = 0; r < rois.size(); ++r) {
        const RoiSpec& roi = *rois[r];
        try {
          const Matrix y_train = y_train_all.col_block(roi.start, roi.count);
          const Matrix y_test = y_test_all.col_block(roi.start, roi.count);
          EncoderModel model;
          if (shared) {
            model = shared->fit(y_train);
          } else {
            TuneOptions topts;
            topts.grid = c.tune_grid;
            topts.val_fraction = c.val_fraction;
            topts.seed = derive_seed(c.seed, data.spec->name, roi.name + "/" + split.label + "/" +
                                                                  std::to_string(split.fold));
            topts.fit = fopts;
            model = tune_lambda(x_train, y_train, topts).model;
          }
          LeafRow row;
          row.subject = data.spec->name;
          row.model = feature.model;
          row.layer = feature.layer;
          row.cell = split.label;
          row.fold = split.fold;
          row.roi = roi.name;
          row.voxel_start = roi.start;
          row.n_train = split.train_indices.size();
          row.n_test = split.test_indices.size();
          row.lambda = model.lambda;
          row.solver = model.solver.method;
          row.result = evaluate(y_test, predict(model, x_test), mopts);
          per_split[s].push_back(std::move(row));
        } catch (const ValidationError& e) {
          throw ValidationError(where + ", ROI '" + roi.name + "': " + e.what());
        }
      }
    } catch (const ValidationError& e) {
      if (std::string(e.what()).rfind("subject '", 0) == 0) throw;
      throw ValidationError(where + ": " + e.what());
    }
  });
  std::vector<LeafRow> out;
  for (auto& rows : per_split)
    for (auto& row : rows) out.push_back(std::move(row));
  return out;
}

inline SubjectData load_subject(const SubjectSpec& s, const FeatureSpec& feature,
                                const ExperimentConfig& c) {
  SubjectData d;
  d.spec = &s;
  d.x = read_matrix(feature.path, read_options(c));
  d.y = read_matrix(s.response_path, read_options(c));
  d.rois = select_rois(s, c);
  return d;
}

inline nlohmann::json base_metadata(const DatasetManifest& m, const ExperimentConfig& c,
                                    const std::vector<const SubjectSpec*>& subjects) {
  nlohmann::json meta;
  meta["lambda_mode"] = c.tune_grid.empty() ? "fixed" : "tuned (one lambda per ROI and split)";
  meta["fold_seed_derivation"] = "mix(seed, fnv1a(subject, sub_dataset))";
  meta["pearson"] = "mean over samples of across-voxel correlation; degenerate rows count as 0";
  meta["pearson_voxelwise"] = "mean over voxels of across-sample correlation (supplementary)";
  meta["two_v_two_ties"] = "ties count as failures";
  meta["aggregation"] = "fold_mean per subject, then subject_mean across subjects";
  meta["roi_models"] = "one ridge model per ROI voxel block";
  nlohmann::json folds = nlohmann::json::object();
  for (const auto* s : subjects) {
    const bool grouped = c.group_by_concept && !s->stimulus_concepts.empty();
    folds[s->name] = grouped ? "grouped-by-concept" : "per-stimulus";
  }
  meta["fold_mode"] = folds;
  (void)m;
  return meta;
}

}  // namespace runner_detail

/// Shared tail of every experiment: aggregation, timing.
inline void finish_report(EvalReport& report, std::chrono::steady_clock::time_point start) {
  report.aggregates = aggregate(report.leaves);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Full-dataset k-fold CV per subject and ROI.
inline EvalReport run_cv(const ExperimentConfig& c) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  const DatasetManifest manifest = read_manifest(c.manifest_path);
  const auto subjects = runner_detail::select_subjects(manifest, c);
  EvalReport report;
  report.config = to_json(c);
  report.metadata = runner_detail::base_metadata(manifest, c, subjects);
  const FoldOptions fopts{c.k, c.seed, c.group_by_concept};
  for (const auto* s : subjects) {
    const FeatureSpec& feature = runner_detail::select_feature(*s, c);
    const auto data = runner_detail::load_subject(*s, feature, c);
    const auto splits = full_cv_splits(*s, fopts, "all");
    auto rows = runner_detail::run_splits(data, feature, splits, c);
    report.leaves.insert(report.leaves.end(), rows.begin(), rows.end());
  }
  finish_report(report, start);
  return report;
}

/// Same- and cross-sub-dataset transfer cells (e.g. CC, CI, ..., SS).
inline EvalReport run_cross(const ExperimentConfig& c) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  const DatasetManifest manifest = read_manifest(c.manifest_path);
  const auto subjects = runner_detail::select_subjects(manifest, c);
  EvalReport report;
  report.config = to_json(c);
  report.metadata = runner_detail::base_metadata(manifest, c, subjects);
  report.metadata["transfer_training_set"] = "full source sub-dataset";
  const FoldOptions fopts{c.k, c.seed, c.group_by_concept};
  for (const auto* s : subjects) {
    detail::require(s->sub_datasets.size() >= 2,
                    "cross requires >= 2 sub-datasets (subject '" + s->name + "' has " +
                        std::to_string(s->sub_datasets.size()) + ")");
    std::vector<std::pair<std::string, std::string>> cells;
    std::set<std::string> matched;
    for (const auto& train : s->sub_datasets)
      for (const auto& test : s->sub_datasets) {
        const std::string label = cross_label(*s, train.name, test.name);
        if (!c.cells.empty() &&
            std::find(c.cells.begin(), c.cells.end(), label) == c.cells.end())
          continue;
        matched.insert(label);
        cells.emplace_back(train.name, test.name);
      }
    for (const auto& want : c.cells)
      detail::require(matched.count(want) > 0,
                      "subject '" + s->name + "' has no cross cell '" + want + "'");
    const FeatureSpec& feature = runner_detail::select_feature(*s, c);
    const auto data = runner_detail::load_subject(*s, feature, c);
    for (const auto& [train, test] : cells) {
      const auto splits = cross_split(manifest, s->name, train, test, fopts);
      auto rows = runner_detail::run_splits(data, feature, splits, c);
      report.leaves.insert(report.leaves.end(), rows.begin(), rows.end());
    }
  }
  finish_report(report, start);
  return report;
}

inline ConceptDirection parse_direction(const std::string& s) {
  if (s == "concrete->abstract" || s == "concrete_to_abstract" || s == "CA")
    return ConceptDirection::concrete_to_abstract;
  if (s == "abstract->concrete" || s == "abstract_to_concrete" || s == "AC")
    return ConceptDirection::abstract_to_concrete;
  throw ValidationError("unknown concept direction '" + s +
                        "' (concrete->abstract | abstract->concrete)");
}

/// Train on one concept class, test on the other, both directions.
inline EvalReport run_concept(const ExperimentConfig& c) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  const DatasetManifest manifest = read_manifest(c.manifest_path);
  const auto subjects = runner_detail::select_subjects(manifest, c);
  std::vector<ConceptDirection> directions;
  if (c.directions.empty()) {
    directions = {ConceptDirection::concrete_to_abstract, ConceptDirection::abstract_to_concrete};
  } else {
    for (const auto& d : c.directions) directions.push_back(parse_direction(d));
  }
  EvalReport report;
  report.config = to_json(c);
  report.metadata = runner_detail::base_metadata(manifest, c, subjects);
  for (const auto* s : subjects) {
    std::vector<SplitSpec> splits;
    for (auto d : directions) splits.push_back(concept_split(manifest, s->name, d));
    const FeatureSpec& feature = runner_detail::select_feature(*s, c);
    const auto data = runner_detail::load_subject(*s, feature, c);
    auto rows = runner_detail::run_splits(data, feature, splits, c);
    report.leaves.insert(report.leaves.end(), rows.begin(), rows.end());
  }
  finish_report(report, start);
  return report;
}

/// k-fold CV once per layer of one model, plus the best layer per ROI.
inline EvalReport run_sweep(const ExperimentConfig& c) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  const DatasetManifest manifest = read_manifest(c.manifest_path);
  const auto subjects = runner_detail::select_subjects(manifest, c);
  EvalReport report;
  report.config = to_json(c);
  report.metadata = runner_detail::base_metadata(manifest, c, subjects);
  report.metadata["best_layer_rule"] = "highest subject-mean PC per ROI; ties keep the earlier layer";
  const FoldOptions fopts{c.k, c.seed, c.group_by_concept};
  for (const auto* s : subjects) {
    const std::string model = runner_detail::resolve_model(*s, c.model);
    auto layers = runner_detail::layers_of(*s, model);
    if (!c.layer.empty() && c.layer != kAllLayers) {
      std::erase_if(layers, [&](const FeatureSpec* f) { return f->layer != c.layer; });
    }
    detail::require(!layers.empty(), "no layers found for model '" + model + "' in subject '" +
                                         s->name + "'");
    const auto splits = full_cv_splits(*s, fopts, "all");
    Matrix y = read_matrix(s->response_path, runner_detail::read_options(c));
    for (const auto* feature : layers) {
      runner_detail::SubjectData data;
      data.spec = s;
      data.x = read_matrix(feature->path, runner_detail::read_options(c));
      data.y = y;
      data.rois = runner_detail::select_rois(*s, c);
      auto rows = runner_detail::run_splits(data, *feature, splits, c);
      report.leaves.insert(report.leaves.end(), rows.begin(), rows.end());
    }
  }
  finish_report(report, start);
  report.best_layers = best_layers(report.aggregates);
  return report;
}

inline EvalReport run_experiment(const ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::cv: return run_cv(c);
    case ExperimentKind::cross: return run_cross(c);
    case ExperimentKind::concept_transfer: return run_concept(c);
    case ExperimentKind::sweep: return run_sweep(c);
  }
  return run_cv(c);
}

}  // namespace voxelenc

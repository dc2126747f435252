#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/matio.hpp"
#include "voxelenc/metrics.hpp"
#include "voxelenc/stats.hpp"

namespace voxelenc {

/// One (subject, feature, cell, fold, ROI) evaluation.
struct LeafRow {
  std::string subject;
  std::string model;
  std::string layer;
  std::string cell;  ///< "all", a cross label such as "CI", or a concept direction
  int fold = -1;     ///< -1 for direct train/test splits
  std::string roi;
  std::size_t voxel_start = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double lambda = 0.0;
  std::string solver;
  EvalResult result;
};

/// Mean (and sample sd) of leaf metrics over folds, or of fold means over
/// subjects when `subject` is empty.
struct AggregateRow {
  std::string level;  ///< "fold_mean" or "subject_mean"
  std::string subject;
  std::string model;
  std::string layer;
  std::string cell;
  std::string roi;
  std::size_t count = 0;
  double two_v_two = 0.0;
  double pearson = 0.0;
  double pearson_voxelwise = 0.0;
  double mean_mae = 0.0;
  double two_v_two_sd = 0.0;
  double pearson_sd = 0.0;
};

struct BestLayer {
  std::string model;
  std::string cell;
  std::string roi;
  std::string layer;
  double pearson = 0.0;
};

struct EvalReport {
  nlohmann::json config;
  nlohmann::json metadata;
  std::vector<LeafRow> leaves;
  std::vector<AggregateRow> aggregates;
  std::vector<BestLayer> best_layers;
  double wall_seconds = 0.0;

  /// Fold-averaged per-voxel MAE keyed like a fold_mean aggregate.
  std::vector<double> fold_mean_mae(const AggregateRow& key) const {
    std::vector<double> acc;
    std::size_t count = 0;
    for (const auto& leaf : leaves) {
      if (leaf.subject != key.subject || leaf.model != key.model || leaf.layer != key.layer ||
          leaf.cell != key.cell || leaf.roi != key.roi)
        continue;
      if (acc.empty()) acc.assign(leaf.result.mae_per_voxel.size(), 0.0);
      for (std::size_t v = 0; v < acc.size(); ++v) acc[v] += leaf.result.mae_per_voxel[v];
      ++count;
    }
    for (double& e : acc) e /= static_cast<double>(count);
    return acc;
  }
};

namespace report_detail {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

inline std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out;
}

}  // namespace report_detail

/// Rebuilds fold_mean and subject_mean rows from the leaves, in
/// first-appearance order.
inline std::vector<AggregateRow> aggregate(const std::vector<LeafRow>& leaves) {
  using report_detail::moments;
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const LeafRow*>> groups;
  for (const auto& leaf : leaves) {
    Key key{leaf.subject, leaf.model, leaf.layer, leaf.cell, leaf.roi};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    it->second.push_back(&leaf);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& rows = groups.at(key);
    std::vector<double> v2, pc, pv, mae_means;
    for (const auto* r : rows) {
      v2.push_back(r->result.two_v_two);
      pc.push_back(r->result.pearson);
      pv.push_back(r->result.pearson_voxelwise);
      mae_means.push_back(r->result.mean_mae());
    }
    AggregateRow a;
    a.level = "fold_mean";
    std::tie(a.subject, a.model, a.layer, a.cell, a.roi) = key;
    a.count = rows.size();
    const auto m2 = moments(v2);
    const auto mp = moments(pc);
    a.two_v_two = m2.mean;
    a.two_v_two_sd = m2.sd;
    a.pearson = mp.mean;
    a.pearson_sd = mp.sd;
    a.pearson_voxelwise = moments(pv).mean;
    a.mean_mae = moments(mae_means).mean;
    out.push_back(a);
  }

  using SKey = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<SKey> sorder;
  std::map<SKey, std::vector<const AggregateRow*>> sgroups;
  const std::size_t n_fold_rows = out.size();
  for (std::size_t i = 0; i < n_fold_rows; ++i) {
    const auto& a = out[i];
    SKey key{a.model, a.layer, a.cell, a.roi};
    auto [it, inserted] = sgroups.try_emplace(key);
    if (inserted) sorder.push_back(key);
    it->second.push_back(&out[i]);
  }
  std::vector<AggregateRow> subject_rows;
  for (const auto& key : sorder) {
    const auto& rows = sgroups.at(key);
    std::vector<double> v2, pc, pv, mm;
    for (const auto* r : rows) {
      v2.push_back(r->two_v_two);
      pc.push_back(r->pearson);
      pv.push_back(r->pearson_voxelwise);
      mm.push_back(r->mean_mae);
    }
    AggregateRow a;
    a.level = "subject_mean";
    std::tie(a.model, a.layer, a.cell, a.roi) = key;
    a.count = rows.size();
    const auto m2 = moments(v2);
    const auto mp = moments(pc);
    a.two_v_two = m2.mean;
    a.two_v_two_sd = m2.sd;
    a.pearson = mp.mean;
    a.pearson_sd = mp.sd;
    a.pearson_voxelwise = moments(pv).mean;
    a.mean_mae = moments(mm).mean;
    subject_rows.push_back(a);
  }
  out.insert(out.end(), subject_rows.begin(), subject_rows.end());
  return out;
}

/// Best layer per (model, cell, ROI) by subject-mean PC; ties keep the
/// earlier layer.
inline std::vector<BestLayer> best_layers(const std::vector<AggregateRow>& aggregates) {
  std::vector<BestLayer> out;
  for (const auto& a : aggregates) {
    if (a.level != "subject_mean") continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const BestLayer& b) {
      return b.model == a.model && b.cell == a.cell && b.roi == a.roi;
    });
    if (it == out.end()) {
      out.push_back({a.model, a.cell, a.roi, a.layer, a.pearson});
    } else if (a.pearson > it->pearson) {
      it->layer = a.layer;
      it->pearson = a.pearson;
    }
  }
  return out;
}

inline nlohmann::json to_json(const LeafRow& r) {
  nlohmann::json j;
  j["subject"] = r.subject;
  j["model"] = r.model;
  j["layer"] = r.layer;
  j["cell"] = r.cell;
  j["fold"] = r.fold;
  j["roi"] = r.roi;
  j["voxel_start"] = r.voxel_start;
  j["n_train"] = r.n_train;
  j["n_test"] = r.n_test;
  j["lambda"] = r.lambda;
  j["solver"] = r.solver;
  j["two_v_two"] = r.result.two_v_two;
  j["pearson"] = r.result.pearson;
  j["degenerate_sample_count"] = r.result.degenerate_sample_count;
  j["pearson_voxelwise"] = r.result.pearson_voxelwise;
  j["degenerate_voxel_count"] = r.result.degenerate_voxel_count;
  j["mean_mae"] = r.result.mean_mae();
  j["n_voxels"] = r.result.mae_per_voxel.size();
  return j;
}

inline nlohmann::json to_json(const AggregateRow& a) {
  nlohmann::json j;
  j["level"] = a.level;
  j["subject"] = a.subject;
  j["model"] = a.model;
  j["layer"] = a.layer;
  j["cell"] = a.cell;
  j["roi"] = a.roi;
  j["count"] = a.count;
  j["two_v_two"] = a.two_v_two;
  j["two_v_two_sd"] = a.two_v_two_sd;
  j["pearson"] = a.pearson;
  j["pearson_sd"] = a.pearson_sd;
  j["pearson_voxelwise"] = a.pearson_voxelwise;
  j["mean_mae"] = a.mean_mae;
  return j;
}

inline nlohmann::json to_json(const EvalReport& r, bool with_timing = true) {
  nlohmann::json j;
  j["format"] = "voxelenc-report";
  j["version"] = 1;
  j["config"] = r.config;
  j["metadata"] = r.metadata;
  j["leaf_rows"] = nlohmann::json::array();
  for (const auto& leaf : r.leaves) j["leaf_rows"].push_back(to_json(leaf));
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : r.aggregates) j["aggregates"].push_back(to_json(a));
  j["best_layers"] = nlohmann::json::array();
  for (const auto& b : r.best_layers)
    j["best_layers"].push_back(
        {{"model", b.model}, {"cell", b.cell}, {"roi", b.roi}, {"layer", b.layer}, {"pearson", b.pearson}});
  if (with_timing) j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j;
}

inline std::string leaf_rows_csv(const EvalReport& r) {
  using report_detail::csv_field;
  using report_detail::fmt;
  std::ostringstream out;
  out << "subject,model,layer,cell,fold,roi,n_train,n_test,lambda,two_v_two,pearson,"
         "pearson_voxelwise,mean_mae,degenerate_samples\n";
  for (const auto& l : r.leaves) {
    out << csv_field(l.subject) << ',' << csv_field(l.model) << ',' << csv_field(l.layer) << ','
        << csv_field(l.cell) << ',' << l.fold << ',' << csv_field(l.roi) << ',' << l.n_train << ','
        << l.n_test << ',' << fmt(l.lambda) << ',' << fmt(l.result.two_v_two) << ','
        << fmt(l.result.pearson) << ',' << fmt(l.result.pearson_voxelwise) << ','
        << fmt(l.result.mean_mae()) << ',' << l.result.degenerate_sample_count << '\n';
  }
  return out.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

/// Writes report.json, leaf_rows.csv and one mae_<roi>.csv per ROI
/// (columns subject,model,layer,cell,voxel,mae; voxel is the response column,
/// mae the fold mean).
inline void write_report(const EvalReport& r, const fs::path& dir) {
  using report_detail::csv_field;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  write_text(dir / "report.json", to_json(r).dump(2) + "\n");
  write_text(dir / "leaf_rows.csv", leaf_rows_csv(r));

  std::vector<std::string> rois;
  for (const auto& l : r.leaves)
    if (std::find(rois.begin(), rois.end(), l.roi) == rois.end()) rois.push_back(l.roi);
  for (const auto& roi : rois) {
    std::ostringstream out;
    out << "subject,model,layer,cell,voxel,mae\n";
    for (const auto& a : r.aggregates) {
      if (a.level != "fold_mean" || a.roi != roi) continue;
      const auto mae_values = r.fold_mean_mae(a);
      std::size_t start = 0;
      for (const auto& l : r.leaves)
        if (l.subject == a.subject && l.roi == roi) {
          start = l.voxel_start;
          break;
        }
      for (std::size_t v = 0; v < mae_values.size(); ++v)
        out << csv_field(a.subject) << ',' << csv_field(a.model) << ',' << csv_field(a.layer)
            << ',' << csv_field(a.cell) << ',' << start + v << ','
            << report_detail::fmt(mae_values[v]) << '\n';
    }
    write_text(dir / ("mae_" + report_detail::file_safe(roi) + ".csv"), out.str());
  }
}

/// Parses report.json and checks that its aggregates match the leaves.
/// Per-voxel MAE vectors are not stored in report.json, so loaded leaves
/// carry none.
inline EvalReport load_report(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(file)) file /= "report.json";
  const std::string text = detail::read_file_bytes(file);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(file.string() + " is not valid JSON: " + e.what());
  }
  EvalReport r;
  try {
    r.config = j.at("config");
    r.metadata = j.value("metadata", nlohmann::json::object());
    for (const auto& jl : j.at("leaf_rows")) {
      LeafRow l;
      l.subject = jl.at("subject").get<std::string>();
      l.model = jl.at("model").get<std::string>();
      l.layer = jl.at("layer").get<std::string>();
      l.cell = jl.at("cell").get<std::string>();
      l.fold = jl.at("fold").get<int>();
      l.roi = jl.at("roi").get<std::string>();
      l.voxel_start = jl.value("voxel_start", std::size_t{0});
      l.n_train = jl.at("n_train").get<std::size_t>();
      l.n_test = jl.at("n_test").get<std::size_t>();
      l.lambda = jl.at("lambda").get<double>();
      l.solver = jl.value("solver", std::string());
      l.result.two_v_two = jl.at("two_v_two").get<double>();
      l.result.pearson = jl.at("pearson").get<double>();
      l.result.degenerate_sample_count = jl.at("degenerate_sample_count").get<std::size_t>();
      l.result.pearson_voxelwise = jl.at("pearson_voxelwise").get<double>();
      l.result.degenerate_voxel_count = jl.value("degenerate_voxel_count", std::size_t{0});
      l.result.n_samples = l.n_test;
      // Stand-in vector reproducing mean_mae for aggregation checks.
      l.result.mae_per_voxel.assign(1, jl.at("mean_mae").get<double>());
      r.leaves.push_back(std::move(l));
    }
    for (const auto& ja : j.at("aggregates")) {
      AggregateRow a;
      a.level = ja.at("level").get<std::string>();
      a.subject = ja.at("subject").get<std::string>();
      a.model = ja.at("model").get<std::string>();
      a.layer = ja.at("layer").get<std::string>();
      a.cell = ja.at("cell").get<std::string>();
      a.roi = ja.at("roi").get<std::string>();
      a.count = ja.at("count").get<std::size_t>();
      a.two_v_two = ja.at("two_v_two").get<double>();
      a.two_v_two_sd = ja.at("two_v_two_sd").get<double>();
      a.pearson = ja.at("pearson").get<double>();
      a.pearson_sd = ja.at("pearson_sd").get<double>();
      a.pearson_voxelwise = ja.at("pearson_voxelwise").get<double>();
      a.mean_mae = ja.at("mean_mae").get<double>();
      r.aggregates.push_back(std::move(a));
    }
    for (const auto& jb : j.value("best_layers", nlohmann::json::array()))
      r.best_layers.push_back({jb.at("model").get<std::string>(), jb.at("cell").get<std::string>(),
                               jb.at("roi").get<std::string>(), jb.at("layer").get<std::string>(),
                               jb.at("pearson").get<double>()});
    if (j.contains("timing")) r.wall_seconds = j["timing"].value("wall_seconds", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(file.string() + ": malformed report: " + e.what());
  }

  const auto expected = aggregate(r.leaves);
  detail::require(expected.size() == r.aggregates.size(),
                  file.string() + ": aggregate rows do not match leaf rows");
  auto close = [](double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b));
  };
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected[i];
    const auto& a = r.aggregates[i];
    const bool same = e.level == a.level && e.subject == a.subject && e.model == a.model &&
                      e.layer == a.layer && e.cell == a.cell && e.roi == a.roi &&
                      e.count == a.count && close(a.two_v_two, e.two_v_two) &&
                      close(a.pearson, e.pearson) && close(a.two_v_two_sd, e.two_v_two_sd) &&
                      close(a.pearson_sd, e.pearson_sd) &&
                      close(a.pearson_voxelwise, e.pearson_voxelwise) &&
                      close(a.mean_mae, e.mean_mae);
    detail::require(same, file.string() + ": aggregate row " + std::to_string(i) +
                              " is not recomputable from leaf rows");
  }
  return r;
}

/// Per-subject fold means of one metric ("pearson" or "two_v_two"), keyed
/// model -> subject -> roi. `layer` and `cell` select among several when the
/// report holds more than one; empty means "the only one present".
inline void collect_scores(const EvalReport& r, const std::string& metric, ScoreTable& into,
                           const std::string& layer = {}, const std::string& cell = {}) {
  detail::require(metric == "pearson" || metric == "two_v_two",
                  "unknown metric '" + metric + "' (pearson|two_v_two)");
  std::set<std::string> layers, cells;
  for (const auto& a : r.aggregates) {
    if (a.level != "fold_mean") continue;
    if ((layer.empty() || a.layer == layer) && (cell.empty() || a.cell == cell)) {
      layers.insert(a.layer);
      cells.insert(a.cell);
    }
  }
  detail::require(!layers.empty(), "report has no rows matching the layer/cell selection");
  detail::require(layers.size() == 1,
                  "report holds several layers; choose one with --layer");
  detail::require(cells.size() == 1, "report holds several cells; choose one with --cell");
  for (const auto& a : r.aggregates) {
    if (a.level != "fold_mean" || a.layer != *layers.begin() || a.cell != *cells.begin()) continue;
    auto& slot = into[a.model][a.subject];
    detail::require(slot.count(a.roi) == 0, "duplicate scores for model '" + a.model +
                                                "', subject '" + a.subject + "', ROI '" + a.roi +
                                                "' across reports");
    slot[a.roi] = metric == "pearson" ? a.pearson : a.two_v_two;
  }
}

}  // namespace voxelenc

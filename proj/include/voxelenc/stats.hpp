#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "voxelenc/error.hpp"

namespace voxelenc {

namespace stats_detail {

inline constexpr double kCfTolerance = 1e-12;
inline constexpr int kCfMaxIterations = 300;

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kCfMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kCfTolerance) return h;
  }
  throw ValidationError("incomplete beta continued fraction did not converge");
}

}  // namespace stats_detail

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1.
inline double incomplete_beta(double a, double b, double x) {
  detail::require(a > 0.0 && b > 0.0, "incomplete beta needs a, b > 0");
  detail::require(x >= 0.0 && x <= 1.0, "incomplete beta needs 0 <= x <= 1");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * stats_detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * stats_detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-tailed tail mass of Student's t with `df` degrees of freedom.
inline double student_t_two_tailed(double t, double df) {
  detail::require(df > 0.0, "degrees of freedom must be > 0");
  if (t == 0.0) return 1.0;
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return std::clamp(incomplete_beta(df / 2.0, 0.5, x), 0.0, 1.0);
}

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  double mean_difference = 0.0;
  bool degenerate = false;  ///< zero variance; p forced to 0 or 1
};

/// Per-subject scores of two models on one ROI, aligned by subject.
struct PairedScores {
  std::string model_a;
  std::string model_b;
  std::string roi;
  std::vector<double> scores_a;
  std::vector<double> scores_b;
};

/// Paired two-tailed t-test on d_i = a_i - b_i.
inline TTestResult paired_ttest(const PairedScores& p) {
  detail::require(p.scores_a.size() == p.scores_b.size(),
                  "paired t-test needs equal-length score lists");
  const std::size_t n = p.scores_a.size();
  detail::require(n >= 2, "paired t-test needs at least 2 subjects");
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = p.scores_a[i] - p.scores_b[i];
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.df = n - 1;
  r.mean_difference = mean;
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p_value = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p_value = 0.0;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_value = student_t_two_tailed(r.t, static_cast<double>(r.df));
  return r;
}

/// Two-sample Student t-test with pooled variance (df = na + nb - 2).
inline TTestResult unpaired_ttest(const PairedScores& p) {
  const std::size_t na = p.scores_a.size();
  const std::size_t nb = p.scores_b.size();
  detail::require(na >= 2 && nb >= 2, "unpaired t-test needs at least 2 scores per model");
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double ma = mean_of(p.scores_a);
  const double mb = mean_of(p.scores_b);
  double ss = 0.0;
  for (double x : p.scores_a) ss += (x - ma) * (x - ma);
  for (double x : p.scores_b) ss += (x - mb) * (x - mb);
  TTestResult r;
  r.df = na + nb - 2;
  r.mean_difference = ma - mb;
  const double pooled = ss / static_cast<double>(r.df);
  const double se = std::sqrt(pooled * (1.0 / static_cast<double>(na) + 1.0 / static_cast<double>(nb)));
  if (se == 0.0) {
    r.degenerate = true;
    r.t = r.mean_difference == 0.0
              ? 0.0
              : std::copysign(std::numeric_limits<double>::infinity(), r.mean_difference);
    r.p_value = r.mean_difference == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = r.mean_difference / se;
  r.p_value = student_t_two_tailed(r.t, static_cast<double>(r.df));
  return r;
}

inline constexpr double kSignificanceLevel = 0.05;

/// Three significant digits, starred below 0.05: 0.044 -> "0.044*".
inline std::string format_p_value(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", p);
  std::string s(buf);
  if (p < kSignificanceLevel) s += '*';
  return s;
}

/// model -> subject -> roi -> score (fold-averaged).
using ScoreTable = std::map<std::string, std::map<std::string, std::map<std::string, double>>>;

struct SignificanceRow {
  std::string model_a;
  std::string model_b;
  std::vector<TTestResult> cells;  ///< one per ROI, in table order
};

struct SignificanceTable {
  std::string metric;
  bool paired = true;
  std::vector<std::string> rois;
  std::vector<std::string> subjects;
  std::vector<SignificanceRow> rows;
};

/// One row per model pair, one column per ROI.
inline SignificanceTable significance_table(
    const ScoreTable& scores, const std::vector<std::pair<std::string, std::string>>& pairs,
    const std::vector<std::string>& rois, const std::string& metric, bool paired = true) {
  detail::require(!pairs.empty(), "no model pairs requested");
  detail::require(!rois.empty(), "no ROIs to compare");
  SignificanceTable table;
  table.metric = metric;
  table.paired = paired;
  table.rois = rois;

  auto model_scores = [&](const std::string& model) -> const auto& {
    auto it = scores.find(model);
    if (it == scores.end()) throw ValidationError("no scores for model '" + model + "'");
    return it->second;
  };

  for (const auto& [a, b] : pairs) {
    const auto& sa = model_scores(a);
    const auto& sb = model_scores(b);
    std::vector<std::string> subjects;
    for (const auto& [subject, _] : sa) {
      detail::require(sb.count(subject) > 0, "subject '" + subject + "' has scores for '" + a +
                                                 "' but not for '" + b + "'");
      subjects.push_back(subject);
    }
    for (const auto& [subject, _] : sb)
      detail::require(sa.count(subject) > 0, "subject '" + subject + "' has scores for '" + b +
                                                 "' but not for '" + a + "'");
    if (table.subjects.empty()) table.subjects = subjects;

    SignificanceRow row{a, b, {}};
    for (const auto& roi : rois) {
      PairedScores ps{a, b, roi, {}, {}};
      for (const auto& subject : subjects) {
        auto lookup = [&](const auto& per_subject, const std::string& model) {
          const auto& per_roi = per_subject.at(subject);
          auto it = per_roi.find(roi);
          if (it == per_roi.end())
            throw ValidationError("missing score for model '" + model + "', subject '" +
                                  subject + "', ROI '" + roi + "'");
          return it->second;
        };
        ps.scores_a.push_back(lookup(sa, a));
        ps.scores_b.push_back(lookup(sb, b));
      }
      row.cells.push_back(paired ? paired_ttest(ps) : unpaired_ttest(ps));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline std::string pair_label(const SignificanceRow& row) {
  return row.model_a + " vs " + row.model_b;
}

inline std::string to_csv(const SignificanceTable& t) {
  std::ostringstream out;
  out << "models";
  for (const auto& roi : t.rois) out << ',' << roi;
  out << '\n';
  for (const auto& row : t.rows) {
    out << pair_label(row);
    for (const auto& cell : row.cells) out << ',' << format_p_value(cell.p_value);
    out << '\n';
  }
  return out.str();
}

inline std::string to_text(const SignificanceTable& t) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"Models compared"});
  for (const auto& roi : t.rois) grid.back().push_back(roi);
  for (const auto& row : t.rows) {
    grid.push_back({pair_label(row)});
    for (const auto& cell : row.cells) grid.back().push_back(format_p_value(cell.p_value));
  }
  std::vector<std::size_t> width(grid.front().size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      out << line[c] << std::string(width[c] - line[c].size(), ' ');
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const SignificanceTable& t) {
  nlohmann::json j;
  j["metric"] = t.metric;
  j["test"] = t.paired ? "paired two-tailed t" : "unpaired (pooled) two-tailed t";
  j["aggregation"] = "per-subject fold mean";
  j["rois"] = t.rois;
  j["subjects"] = t.subjects;
  for (const auto& row : t.rows) {
    nlohmann::json jr;
    jr["model_a"] = row.model_a;
    jr["model_b"] = row.model_b;
    for (std::size_t c = 0; c < row.cells.size(); ++c) {
      const auto& cell = row.cells[c];
      nlohmann::json jc;
      jc["roi"] = t.rois[c];
      jc["t"] = std::isfinite(cell.t) ? nlohmann::json(cell.t) : nlohmann::json(cell.t > 0 ? "inf" : "-inf");
      jc["df"] = cell.df;
      jc["p_value"] = cell.p_value;
      jc["degenerate"] = cell.degenerate;
      jr["cells"].push_back(jc);
    }
    j["rows"].push_back(jr);
  }
  return j;
}

}  // namespace voxelenc

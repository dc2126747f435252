#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace voxelenc;

namespace {

// Independent oracle: two-tailed p by adaptive Simpson integration of the
// Student-t density over [|t|, inf) after the substitution u = 1/(1+x).
double t_density(double x, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
                   std::sqrt(df * std::numbers::pi);
  return c * std::pow(1 + x * x / df, -(df + 1) / 2);
}

double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3;
}

double oracle_p(double t, double df) {
  const double a = std::abs(t);
  // x = a + u / (1 - u), dx = du / (1 - u)^2, u in [0, 1).
  auto g = [&](double u) {
    // Limit at u = 1 is nonzero only for the Cauchy case.
    if (u >= 1.0) return df == 1.0 ? 1 / std::numbers::pi : 0.0;
    const double x = a + u / (1 - u);
    return t_density(x, df) / ((1 - u) * (1 - u));
  };
  return 2 * simpson(g, 0.0, 1.0, 200000);
}

}  // namespace

TEST(StudentT, ReferenceValues) {
  EXPECT_NEAR(student_t_two_tailed(5.0, 3), 0.01539, 1e-4);
  EXPECT_NEAR(student_t_two_tailed(2.145, 14), 0.0500, 1e-3);
  EXPECT_NEAR(student_t_two_tailed(5.0, 3), oracle_p(5.0, 3), 1e-6);
  EXPECT_NEAR(student_t_two_tailed(2.145, 14), oracle_p(2.145, 14), 1e-6);
}

TEST(StudentT, AgreesWithOracleAcrossGrid) {
  for (double df : {1.0, 2.0, 3.0, 7.0, 30.0})
    for (double t : {0.1, 0.7, 1.5, 3.0, 8.0})
      EXPECT_NEAR(student_t_two_tailed(t, df), oracle_p(t, df), 1e-6) << t << " " << df;
}

TEST(StudentT, ClosedFormsForOneDf) {
  // df = 1 is Cauchy: p = 1 - 2 atan(|t|) / pi.
  for (double t : {0.5, 1.0, 4.0})
    EXPECT_NEAR(student_t_two_tailed(t, 1), 1 - 2 * std::atan(t) / std::numbers::pi, 1e-12);
}

TEST(StudentT, ZeroAndMonotone) {
  for (double df : {1.0, 3.0, 100.0}) EXPECT_EQ(student_t_two_tailed(0.0, df), 1.0);
  double prev = 1.0;
  for (double t = 0.25; t < 10; t += 0.25) {
    const double p = student_t_two_tailed(t, 5);
    EXPECT_LT(p, prev);
    prev = p;
  }
  EXPECT_EQ(student_t_two_tailed(-2.0, 4), student_t_two_tailed(2.0, 4));
  EXPECT_THROW(student_t_two_tailed(1.0, 0), ValidationError);
}

TEST(IncompleteBeta, Endpoints) {
  EXPECT_EQ(incomplete_beta(2, 3, 0), 0.0);
  EXPECT_EQ(incomplete_beta(2, 3, 1), 1.0);
  // I_x(1, 1) = x; I_x(a, 1) = x^a.
  EXPECT_NEAR(incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
  EXPECT_NEAR(incomplete_beta(3, 1, 0.5), 0.125, 1e-14);
  EXPECT_THROW(incomplete_beta(0, 1, 0.5), ValidationError);
}

TEST(PairedT, HandExample) {
  const TTestResult r = paired_ttest({"A", "B", "roi", {2, 2, 2, 3}, {1, 1, 1, 1}});
  EXPECT_DOUBLE_EQ(r.t, 5.0);
  EXPECT_EQ(r.df, 3u);
  EXPECT_NEAR(r.p_value, 0.01539, 1e-4);
  EXPECT_FALSE(r.degenerate);
}

TEST(PairedT, DegenerateCases) {
  const TTestResult same = paired_ttest({"A", "B", "r", {1, 2, 3}, {1, 2, 3}});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_TRUE(same.degenerate);
  const TTestResult shift = paired_ttest({"A", "B", "r", {2, 3, 4}, {1, 2, 3}});
  EXPECT_EQ(shift.p_value, 0.0);
  EXPECT_TRUE(shift.degenerate);
  EXPECT_THROW(paired_ttest({"A", "B", "r", {1}, {1}}), ValidationError);
  EXPECT_THROW(paired_ttest({"A", "B", "r", {1, 2}, {1}}), ValidationError);
}

TEST(PairedT, Antisymmetry) {
  const PairedScores ab{"A", "B", "r", {0.51, 0.62, 0.55, 0.70}, {0.50, 0.58, 0.56, 0.61}};
  const PairedScores ba{"B", "A", "r", ab.scores_b, ab.scores_a};
  const TTestResult x = paired_ttest(ab), y = paired_ttest(ba);
  EXPECT_EQ(x.t, -y.t);
  EXPECT_EQ(x.p_value, y.p_value);
}

TEST(UnpairedT, PooledVariance) {
  // a = {1,2,3}, b = {4,5,6}: diff -3, pooled var 1, se = sqrt(2/3).
  const TTestResult r = unpaired_ttest({"A", "B", "r", {1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(r.df, 4u);
  EXPECT_NEAR(r.t, -3.0 / std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(r.p_value, oracle_p(r.t, 4), 1e-6);
}

TEST(Format, StarsBelowFivePercent) {
  EXPECT_EQ(format_p_value(0.044), "0.044*");
  EXPECT_EQ(format_p_value(0.05), "0.05");
  EXPECT_EQ(format_p_value(0.5123), "0.512");
  EXPECT_EQ(format_p_value(1.0), "1");
  EXPECT_EQ(format_p_value(0.000123), "0.000123*");
}

namespace {

ScoreTable two_models_four_subjects() {
  ScoreTable t;
  const double a[4][2] = {{0.61, 0.52}, {0.64, 0.50}, {0.60, 0.55}, {0.66, 0.49}};
  const double b[4][2] = {{0.55, 0.51}, {0.57, 0.52}, {0.58, 0.54}, {0.57, 0.47}};
  for (int s = 0; s < 4; ++s) {
    const std::string subj = "S" + std::to_string(s + 1);
    t["A"][subj] = {{"EarlyVis", a[s][0]}, {"PPA", a[s][1]}};
    t["B"][subj] = {{"EarlyVis", b[s][0]}, {"PPA", b[s][1]}};
  }
  return t;
}

}  // namespace

TEST(SignificanceTable, ShapeAndRendering) {
  const ScoreTable scores = two_models_four_subjects();
  const auto table = significance_table(scores, {{"A", "B"}}, {"EarlyVis", "PPA"}, "pearson");
  ASSERT_EQ(table.rows.size(), 1u);
  ASSERT_EQ(table.rows[0].cells.size(), 2u);
  EXPECT_EQ(table.subjects.size(), 4u);
  for (const auto& c : table.rows[0].cells) EXPECT_EQ(c.df, 3u);
  const std::string csv = to_csv(table);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "models,EarlyVis,PPA");
  EXPECT_NE(csv.find("A vs B,"), std::string::npos);
  EXPECT_NE(csv.find('*'), std::string::npos);
  EXPECT_NE(to_text(table).find("Models compared"), std::string::npos);
  EXPECT_EQ(to_json(table)["rows"][0]["cells"].size(), 2u);
}

TEST(SignificanceTable, IdenticalModelsGiveOne) {
  ScoreTable scores = two_models_four_subjects();
  scores["C"] = scores["A"];
  const auto table = significance_table(scores, {{"A", "C"}}, {"EarlyVis", "PPA"}, "pearson");
  for (const auto& c : table.rows[0].cells) EXPECT_EQ(c.p_value, 1.0);
}

TEST(SignificanceTable, MissingData) {
  ScoreTable scores = two_models_four_subjects();
  EXPECT_THROW(significance_table(scores, {{"A", "Z"}}, {"PPA"}, "pearson"), ValidationError);
  EXPECT_THROW(significance_table(scores, {{"A", "B"}}, {"LOC"}, "pearson"), ValidationError);
  scores["B"].erase("S4");
  EXPECT_THROW(significance_table(scores, {{"A", "B"}}, {"PPA"}, "pearson"), ValidationError);
}

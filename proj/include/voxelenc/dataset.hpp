#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/matio.hpp"
#include "voxelenc/rng.hpp"

namespace voxelenc {

inline constexpr std::uint64_t kDefaultSeed = 42;
inline constexpr std::size_t kDefaultFolds = 10;

/// Assignment of n items to k folds.
struct FoldPlan {
  std::size_t n = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  bool grouped = false;
  std::vector<std::size_t> assignment;  ///< fold index per item, in [0, k)

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t f : assignment) ++sizes[f];
    return sizes;
  }

  /// Item positions in fold f, ascending.
  std::vector<std::size_t> test_positions(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (assignment[i] == f) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> train_positions(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i)
      if (assignment[i] != f) out.push_back(i);
    return out;
  }
};

namespace detail {

// Shuffles [0, units) and deals the shuffled sequence into k contiguous
// chunks; the first (units % k) chunks get one extra unit.
inline std::vector<std::size_t> shuffled_chunks(std::size_t units, std::size_t k,
                                                std::uint64_t seed) {
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  shuffle(order.data(), order.size(), rng);
  std::vector<std::size_t> fold_of(units);
  const std::size_t base = units / k;
  const std::size_t extra = units % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) fold_of[order[pos++]] = f;
  }
  return fold_of;
}

}  // namespace detail

/// Seeded shuffle of [0, n) split into k folds whose sizes differ by at most
/// one. Depends only on (n, k, seed).
inline FoldPlan make_folds(std::size_t n, std::size_t k,
                           std::uint64_t seed = kDefaultSeed) {
  detail::require(k >= 2, "fold count k=" + std::to_string(k) + " must be >= 2");
  detail::require(k <= n, "fold count k=" + std::to_string(k) +
                              " exceeds item count n=" + std::to_string(n));
  FoldPlan plan{n, k, seed, false, detail::shuffled_chunks(n, k, seed)};
  return plan;
}

/// Folds over groups: items sharing a group label always share a fold. Fold
/// sizes are balanced in groups (differ by at most one group).
inline FoldPlan make_grouped_folds(std::span<const std::string> groups,
                                   std::size_t k, std::uint64_t seed = kDefaultSeed) {
  std::unordered_map<std::string_view, std::size_t> group_id;
  std::vector<std::size_t> item_group(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    auto [it, inserted] = group_id.try_emplace(groups[i], group_id.size());
    item_group[i] = it->second;
  }
  const std::size_t n_groups = group_id.size();
  detail::require(k >= 2, "fold count k=" + std::to_string(k) + " must be >= 2");
  detail::require(k <= n_groups, "fold count k=" + std::to_string(k) +
                                     " exceeds group count " + std::to_string(n_groups));
  const auto group_fold = detail::shuffled_chunks(n_groups, k, seed);
  FoldPlan plan{groups.size(), k, seed, true, {}};
  plan.assignment.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i)
    plan.assignment[i] = group_fold[item_group[i]];
  return plan;
}

/// Fold seeds keyed by (subject, sub-dataset) so that adding subjects or
/// sub-datasets never reshuffles existing ones.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view subject,
                                 std::string_view sub_dataset) {
  std::uint64_t h = fnv1a(subject);
  h = fnv1a("\x1f", h);
  h = fnv1a(sub_dataset, h);
  return mix64(seed ^ mix64(h));
}

/// One train/test partition of stimulus rows.
struct SplitSpec {
  std::string label;
  int fold = -1;  ///< fold index for k-fold splits, -1 for a direct split
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline nlohmann::json to_json(const SplitSpec& s) {
  nlohmann::json j;
  j["label"] = s.label;
  j["fold"] = s.fold;
  j["train_indices"] = s.train_indices;
  j["test_indices"] = s.test_indices;
  return j;
}

inline void validate_split(const SplitSpec& s) {
  detail::require(!s.train_indices.empty() && !s.test_indices.empty(),
                  "split '" + s.label + "' has an empty side");
  std::vector<std::size_t> a = s.train_indices;
  std::vector<std::size_t> b = s.test_indices;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(common));
  detail::require(common.empty(), "split '" + s.label + "' train and test overlap");
}

struct FoldOptions {
  std::size_t k = kDefaultFolds;
  std::uint64_t seed = kDefaultSeed;
  bool group_by_concept = true;
};

/// K-fold plan over `universe` (stimulus rows of one subject). Grouped by
/// concept when requested and the subject carries concept labels.
inline FoldPlan plan_folds(const SubjectSpec& subject,
                           std::span<const std::size_t> universe,
                           std::string_view sub_dataset, const FoldOptions& opts) {
  const std::uint64_t seed = derive_seed(opts.seed, subject.name, sub_dataset);
  if (opts.group_by_concept && !subject.stimulus_concepts.empty()) {
    std::vector<std::string> groups;
    groups.reserve(universe.size());
    for (std::size_t idx : universe) groups.push_back(subject.stimulus_concepts[idx]);
    return make_grouped_folds(groups, opts.k, seed);
  }
  return make_folds(universe.size(), opts.k, seed);
}

/// Expands a fold plan over `universe` into k SplitSpecs labelled `label`.
inline std::vector<SplitSpec> splits_from_plan(const FoldPlan& plan,
                                               std::span<const std::size_t> universe,
                                               const std::string& label) {
  detail::require(plan.n == universe.size(), "fold plan size mismatch");
  std::vector<SplitSpec> out;
  for (std::size_t f = 0; f < plan.k; ++f) {
    SplitSpec s;
    s.label = label;
    s.fold = static_cast<int>(f);
    for (std::size_t i = 0; i < plan.n; ++i)
      (plan.assignment[i] == f ? s.test_indices : s.train_indices).push_back(universe[i]);
    out.push_back(std::move(s));
  }
  return out;
}

/// All stimuli of one subject, k-fold.
inline std::vector<SplitSpec> full_cv_splits(const SubjectSpec& subject,
                                             const FoldOptions& opts,
                                             const std::string& label = "all") {
  std::vector<std::size_t> universe(subject.n_stimuli);
  std::iota(universe.begin(), universe.end(), std::size_t{0});
  const FoldPlan plan = plan_folds(subject, universe, "", opts);
  return splits_from_plan(plan, universe, label);
}

/// Short cell label from sub-dataset initials, e.g. COCO->ImageNet = "CI".
/// Falls back to "train->test" when initials collide.
inline std::string cross_label(const SubjectSpec& subject, std::string_view train,
                               std::string_view test) {
  std::vector<char> initials;
  for (const auto& d : subject.sub_datasets)
    initials.push_back(d.name.empty() ? '?' : static_cast<char>(std::toupper(
                                                  static_cast<unsigned char>(d.name[0]))));
  std::vector<char> sorted = initials;
  std::sort(sorted.begin(), sorted.end());
  const bool unique = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
  if (!unique) return std::string(train) + "->" + std::string(test);
  auto initial = [](std::string_view s) {
    return static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  };
  return std::string{initial(train), initial(test)};
}

/// Train on one sub-dataset, test on another. When both names are the same
/// the result is the k-fold plan within that sub-dataset.
inline std::vector<SplitSpec> cross_split(const DatasetManifest& manifest,
                                          std::string_view subject_name,
                                          std::string_view train_sub,
                                          std::string_view test_sub,
                                          const FoldOptions& opts = {}) {
  const SubjectSpec& subject = manifest.subject(subject_name);
  const auto* train = subject.find_sub_dataset(train_sub);
  const auto* test = subject.find_sub_dataset(test_sub);
  detail::require(train != nullptr, "unknown sub-dataset '" + std::string(train_sub) +
                                        "' for subject '" + subject.name + "'");
  detail::require(test != nullptr, "unknown sub-dataset '" + std::string(test_sub) +
                                       "' for subject '" + subject.name + "'");
  const std::string label = cross_label(subject, train_sub, test_sub);
  if (train == test) {
    const FoldPlan plan = plan_folds(subject, train->indices, train->name, opts);
    return splits_from_plan(plan, train->indices, label);
  }
  SplitSpec s;
  s.label = label;
  s.train_indices = train->indices;
  s.test_indices = test->indices;
  validate_split(s);
  return {std::move(s)};
}

enum class ConceptDirection { concrete_to_abstract, abstract_to_concrete };

inline std::string to_string(ConceptDirection d) {
  return d == ConceptDirection::concrete_to_abstract ? "concrete->abstract"
                                                     : "abstract->concrete";
}

/// Train on one concept class, test on the other.
inline SplitSpec concept_split(const DatasetManifest& manifest,
                               std::string_view subject_name,
                               ConceptDirection direction) {
  const SubjectSpec& subject = manifest.subject(subject_name);
  detail::require(!subject.stimulus_classes.empty(),
                  "subject '" + subject.name +
                      "' has no concept class tags (stimulus_concepts + concept_classes)");
  const ConceptClass train_class = direction == ConceptDirection::concrete_to_abstract
                                       ? ConceptClass::concrete
                                       : ConceptClass::abstract;
  SplitSpec s;
  s.label = to_string(direction);
  for (std::size_t i = 0; i < subject.n_stimuli; ++i)
    (subject.stimulus_classes[i] == train_class ? s.train_indices : s.test_indices)
        .push_back(i);
  validate_split(s);
  return s;
}

}  // namespace voxelenc

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voxelenc/error.hpp"
#include "voxelenc/matrix.hpp"

namespace voxelenc {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// VEMF binary matrix format
//
//   offset  size  field
//   0       4     magic "VEMF"
//   4       4     version, u32 LE (= 1)
//   8       1     dtype, u8 (0 = float32, 1 = float64)
//   9       3     zero padding
//   12      8     rows, u64 LE
//   20      8     cols, u64 LE
//   28      ...   rows * cols values, row-major, IEEE-754 LE
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kVemfMagic{'V', 'E', 'M', 'F'};
inline constexpr std::uint32_t kVemfVersion = 1;
inline constexpr std::size_t kVemfHeaderSize = 28;

enum class NonFinitePolicy {
  reject,     ///< any NaN/Inf is an error (default)
  zero_fill,  ///< replace with 0 and report the count on stderr
};

struct ReadOptions {
  NonFinitePolicy non_finite = NonFinitePolicy::reject;
};

struct WriteOptions {
  bool strict = true;  ///< refuse to write NaN/Inf
};

struct MatrixInfo {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Dtype dtype = Dtype::float64;
  bool csv = false;
};

namespace detail {

template <typename U>
inline void put_le(std::string& out, U value) {
  for (std::size_t b = 0; b < sizeof(U); ++b)
    out.push_back(static_cast<char>((value >> (8 * b)) & 0xFF));
}

template <typename U>
inline U get_le(const unsigned char* p) {
  U value = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b)
    value |= static_cast<U>(p[b]) << (8 * b);
  return value;
}

inline bool is_csv_path(const fs::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".csv" || ext == ".txt";
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
  return std::move(buffer).str();
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view token, const std::string& where) {
  token = trim(token);
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double value = 0.0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (token.empty() || ec != std::errc() || ptr != end)
    throw ValidationError("cannot parse number '" + std::string(token) + "' " +
                          where);
  return value;
}

inline Matrix parse_csv(const std::string& text, const std::string& origin) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line = trim(std::string_view(text).substr(pos, eol - pos));
    ++line_no;
    pos = eol + 1;
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const auto token = line.substr(start, comma == std::string_view::npos
                                                ? std::string_view::npos
                                                : comma - start);
      values.push_back(parse_double(
          token, "at " + origin + ":" + std::to_string(line_no)));
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (rows == 0) {
      cols = count;
    } else if (count != cols) {
      throw ValidationError("ragged CSV " + origin + ": line " +
                            std::to_string(line_no) + " has " +
                            std::to_string(count) + " fields, expected " +
                            std::to_string(cols));
    }
    ++rows;
  }
  if (rows == 0) throw ValidationError("empty CSV " + origin);
  return Matrix(rows, cols, std::move(values));
}

inline MatrixInfo parse_vemf_header(const unsigned char* bytes, std::size_t size,
                                    const std::string& origin) {
  if (size < 4 || std::memcmp(bytes, kVemfMagic.data(), 4) != 0)
    throw ValidationError("bad magic in " + origin + " (expected 'VEMF')");
  if (size < kVemfHeaderSize)
    throw ValidationError("truncated header in " + origin + ": expected " +
                          std::to_string(kVemfHeaderSize) + " bytes, got " +
                          std::to_string(size));
  const auto version = get_le<std::uint32_t>(bytes + 4);
  if (version != kVemfVersion)
    throw ValidationError("unsupported VEMF version " + std::to_string(version) +
                          " in " + origin);
  const std::uint8_t dtype = bytes[8];
  if (dtype > 1)
    throw ValidationError("unsupported dtype code " + std::to_string(dtype) +
                          " in " + origin);
  MatrixInfo info;
  info.dtype = static_cast<Dtype>(dtype);
  info.rows = static_cast<std::size_t>(get_le<std::uint64_t>(bytes + 12));
  info.cols = static_cast<std::size_t>(get_le<std::uint64_t>(bytes + 20));
  if (info.rows == 0 || info.cols == 0)
    throw ValidationError("empty matrix shape " + std::to_string(info.rows) +
                          "x" + std::to_string(info.cols) + " in " + origin);
  return info;
}

inline std::size_t apply_non_finite(Matrix& m, NonFinitePolicy policy,
                                    const std::string& origin) {
  std::size_t bad = 0;
  for (double& v : m.values()) {
    if (std::isfinite(v)) continue;
    if (policy == NonFinitePolicy::reject)
      throw ValidationError("non-finite value in " + origin +
                            " (use permissive mode to zero-fill)");
    v = 0.0;
    ++bad;
  }
  if (bad > 0)
    std::cerr << "voxelenc: replaced " << bad << " non-finite values with 0 in "
              << origin << "\n";
  return bad;
}

}  // namespace detail

/// Serializes to VEMF using the matrix's dtype.
inline std::string encode_vemf(const Matrix& m, const WriteOptions& opts = {}) {
  detail::require(m.rows() >= 1 && m.cols() >= 1,
                  "cannot encode empty matrix " + shape_string(m));
  if (opts.strict && !m.all_finite())
    throw ValidationError("refusing to write non-finite values in strict mode");
  std::string out;
  out.reserve(kVemfHeaderSize + m.size() * dtype_size(m.dtype()));
  out.append(kVemfMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, kVemfVersion);
  out.push_back(static_cast<char>(m.dtype()));
  out.append(3, '\0');
  detail::put_le<std::uint64_t>(out, m.rows());
  detail::put_le<std::uint64_t>(out, m.cols());
  if (m.dtype() == Dtype::float32) {
    for (double v : m.values()) {
      const auto f = static_cast<float>(v);
      if (opts.strict && !std::isfinite(f))
        throw ValidationError("value " + std::to_string(v) + " overflows float32");
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  } else {
    for (double v : m.values())
      detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

inline Matrix decode_vemf(const std::string& bytes, const std::string& origin,
                          const ReadOptions& opts = {}) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const MatrixInfo info = detail::parse_vemf_header(p, bytes.size(), origin);
  const std::size_t width = dtype_size(info.dtype);
  const std::size_t expected = kVemfHeaderSize + info.rows * info.cols * width;
  if (bytes.size() != expected)
    throw ValidationError(
        std::string(bytes.size() < expected ? "truncated payload" : "trailing bytes") +
        " in " + origin + ": expected " + std::to_string(expected) +
        " bytes, got " + std::to_string(bytes.size()));
  std::vector<double> values(info.rows * info.cols);
  const unsigned char* payload = p + kVemfHeaderSize;
  if (info.dtype == Dtype::float32) {
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload + 4 * i));
  } else {
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(payload + 8 * i));
  }
  Matrix m(info.rows, info.cols, std::move(values), info.dtype);
  detail::apply_non_finite(m, opts.non_finite, origin);
  return m;
}

inline void write_matrix(const Matrix& m, const fs::path& path,
                         const WriteOptions& opts = {}) {
  const std::string bytes = encode_vemf(m, opts);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

/// Reads VEMF, or header-less comma-separated text when the extension is
/// .csv / .txt.
inline Matrix read_matrix(const fs::path& path, const ReadOptions& opts = {}) {
  const std::string bytes = detail::read_file_bytes(path);
  if (detail::is_csv_path(path)) {
    Matrix m = detail::parse_csv(bytes, path.string());
    detail::apply_non_finite(m, opts.non_finite, path.string());
    return m;
  }
  return decode_vemf(bytes, path.string(), opts);
}

/// Shape and dtype without loading the payload (CSV files are parsed fully).
inline MatrixInfo read_matrix_info(const fs::path& path) {
  if (detail::is_csv_path(path)) {
    const Matrix m = read_matrix(path);
    return {m.rows(), m.cols(), Dtype::float64, true};
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::array<unsigned char, kVemfHeaderSize> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  return detail::parse_vemf_header(header.data(),
                                   static_cast<std::size_t>(in.gcount()),
                                   path.string());
}

/// One value per line, full round-trip precision.
inline void write_csv(const Matrix& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char buf[32];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, m(i, j));
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct RoiSpec {
  std::string name;
  std::size_t start = 0;
  std::size_t count = 0;
};

struct SubDatasetSpec {
  std::string name;
  std::vector<std::size_t> indices;  ///< stimulus rows, in file order
};

struct FeatureSpec {
  std::string model;
  std::string layer;
  fs::path path;
  std::optional<std::uint64_t> param_count;
};

enum class ConceptClass { concrete, abstract };

inline std::string to_string(ConceptClass c) {
  return c == ConceptClass::concrete ? "concrete" : "abstract";
}

struct SubjectSpec {
  std::string name;
  std::size_t n_stimuli = 0;
  std::vector<SubDatasetSpec> sub_datasets;
  std::vector<RoiSpec> rois;
  fs::path response_path;
  std::size_t response_cols = 0;
  std::vector<FeatureSpec> features;
  /// Per-stimulus concept label; empty when the manifest has none.
  std::vector<std::string> stimulus_concepts;
  /// Per-stimulus class, resolved through `concept_classes`; empty when
  /// the manifest does not tag concepts.
  std::vector<ConceptClass> stimulus_classes;

  const SubDatasetSpec* find_sub_dataset(std::string_view n) const {
    for (const auto& s : sub_datasets)
      if (s.name == n) return &s;
    return nullptr;
  }
  const RoiSpec* find_roi(std::string_view n) const {
    for (const auto& r : rois)
      if (r.name == n) return &r;
    return nullptr;
  }
};

struct DatasetManifest {
  fs::path source;
  std::vector<SubjectSpec> subjects;

  const SubjectSpec* find_subject(std::string_view n) const {
    for (const auto& s : subjects)
      if (s.name == n) return &s;
    return nullptr;
  }
  const SubjectSpec& subject(std::string_view n) const {
    if (const auto* s = find_subject(n)) return *s;
    throw ValidationError("unknown subject '" + std::string(n) + "'");
  }
};

namespace detail {

using nlohmann::json;

inline const json& field(const json& obj, const char* key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key))
    throw ValidationError(ctx + ": missing key '" + key + "'");
  return obj.at(key);
}

template <typename T>
inline T field_as(const json& obj, const char* key, const std::string& ctx) {
  const json& v = field(obj, key, ctx);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError(ctx + ": key '" + key + "' has the wrong type");
  }
}

inline std::vector<std::size_t> read_index_file(const fs::path& path) {
  const std::string text = read_file_bytes(path);
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  auto is_sep = [](char c) { return c == ',' || c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
  while (pos < text.size()) {
    while (pos < text.size() && is_sep(text[pos])) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !is_sep(text[end])) ++end;
    if (end == pos) break;
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + end, value);
    if (ec != std::errc() || ptr != text.data() + end)
      throw ValidationError("bad index '" + text.substr(pos, end - pos) + "' in " +
                            path.string());
    out.push_back(value);
    pos = end;
  }
  return out;
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path raw(p);
  return raw.is_absolute() ? raw : base / raw;
}

inline void check_matrix_rows(const fs::path& path, std::size_t n_stimuli,
                              const std::string& ctx, std::size_t* cols = nullptr) {
  if (!fs::exists(path))
    throw IoError(ctx + ": missing file '" + path.string() + "'");
  const MatrixInfo info = read_matrix_info(path);
  if (info.rows != n_stimuli)
    throw ValidationError(ctx + ": row-count mismatch in '" + path.string() +
                          "': " + std::to_string(info.rows) +
                          " rows vs n_stimuli " + std::to_string(n_stimuli));
  if (cols) *cols = info.cols;
}

inline SubjectSpec parse_subject(const json& js, const fs::path& base) {
  SubjectSpec s;
  s.name = field_as<std::string>(js, "name", "subject");
  const std::string ctx = "subject '" + s.name + "'";
  s.n_stimuli = field_as<std::size_t>(js, "n_stimuli", ctx);
  require(s.n_stimuli >= 1, ctx + ": n_stimuli must be >= 1");

  s.response_path = resolve(base, field_as<std::string>(js, "response_path", ctx));
  check_matrix_rows(s.response_path, s.n_stimuli, ctx + " response", &s.response_cols);

  // ROIs: disjoint, inside the response column range.
  for (const auto& jr : field(js, "rois", ctx)) {
    RoiSpec r;
    r.name = field_as<std::string>(jr, "name", ctx + " roi");
    r.start = field_as<std::size_t>(jr, "start", ctx + " roi '" + r.name + "'");
    r.count = field_as<std::size_t>(jr, "count", ctx + " roi '" + r.name + "'");
    require(r.count >= 1, ctx + ": roi '" + r.name + "' has zero voxels");
    require(r.start + r.count <= s.response_cols,
            ctx + ": roi '" + r.name + "' range [" + std::to_string(r.start) + "," +
                std::to_string(r.start + r.count) + ") exceeds response columns " +
                std::to_string(s.response_cols));
    require(s.find_roi(r.name) == nullptr, ctx + ": duplicate roi '" + r.name + "'");
    s.rois.push_back(std::move(r));
  }
  require(!s.rois.empty(), ctx + ": no rois");
  {
    std::vector<const RoiSpec*> sorted;
    for (const auto& r : s.rois) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(),
              [](auto* a, auto* b) { return a->start < b->start; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
      require(sorted[i - 1]->start + sorted[i - 1]->count <= sorted[i]->start,
              ctx + ": overlapping ROI ranges ('" + sorted[i - 1]->name + "' and '" +
                  sorted[i]->name + "')");
  }

  for (const auto& jf : field(js, "features", ctx)) {
    FeatureSpec f;
    f.model = field_as<std::string>(jf, "model", ctx + " feature");
    f.layer = field_as<std::string>(jf, "layer", ctx + " feature");
    f.path = resolve(base, field_as<std::string>(jf, "path", ctx + " feature"));
    if (jf.contains("param_count"))
      f.param_count = field_as<std::uint64_t>(jf, "param_count", ctx + " feature");
    for (const auto& other : s.features)
      require(!(other.model == f.model && other.layer == f.layer),
              ctx + ": duplicate layer '" + f.layer + "' for model '" + f.model + "'");
    check_matrix_rows(f.path, s.n_stimuli,
                      ctx + " feature " + f.model + "/" + f.layer);
    s.features.push_back(std::move(f));
  }
  require(!s.features.empty(), ctx + ": no features");

  if (js.contains("sub_datasets")) {
    for (const auto& jd : js.at("sub_datasets")) {
      SubDatasetSpec d;
      d.name = field_as<std::string>(jd, "name", ctx + " sub_dataset");
      const std::string dctx = ctx + " sub_dataset '" + d.name + "'";
      if (jd.contains("indices_path")) {
        const fs::path p = resolve(base, field_as<std::string>(jd, "indices_path", dctx));
        if (!fs::exists(p)) throw IoError(dctx + ": missing file '" + p.string() + "'");
        d.indices = read_index_file(p);
      } else if (jd.contains("indices")) {
        d.indices = field_as<std::vector<std::size_t>>(jd, "indices", dctx);
      } else {
        const auto start = field_as<std::size_t>(jd, "start", dctx);
        const auto count = field_as<std::size_t>(jd, "count", dctx);
        for (std::size_t i = 0; i < count; ++i) d.indices.push_back(start + i);
      }
      require(!d.indices.empty(), dctx + ": no stimuli");
      std::set<std::size_t> seen;
      for (std::size_t idx : d.indices) {
        require(idx < s.n_stimuli, dctx + ": stimulus index " + std::to_string(idx) +
                                       " out of range");
        require(seen.insert(idx).second,
                dctx + ": duplicate stimulus index " + std::to_string(idx));
      }
      require(s.find_sub_dataset(d.name) == nullptr,
              ctx + ": duplicate sub_dataset '" + d.name + "'");
      s.sub_datasets.push_back(std::move(d));
    }
  }

  if (js.contains("stimulus_concepts")) {
    s.stimulus_concepts =
        field_as<std::vector<std::string>>(js, "stimulus_concepts", ctx);
    require(s.stimulus_concepts.size() == s.n_stimuli,
            ctx + ": stimulus_concepts has " +
                std::to_string(s.stimulus_concepts.size()) + " entries, expected " +
                std::to_string(s.n_stimuli));
    if (js.contains("concept_classes")) {
      const json& classes = js.at("concept_classes");
      require(classes.is_object(), ctx + ": concept_classes must be an object");
      for (const auto& concept_name : s.stimulus_concepts) {
        require(classes.contains(concept_name),
                ctx + ": concept '" + concept_name + "' has no class tag");
        const auto tag = classes.at(concept_name).get<std::string>();
        if (tag == "concrete") {
          s.stimulus_classes.push_back(ConceptClass::concrete);
        } else if (tag == "abstract") {
          s.stimulus_classes.push_back(ConceptClass::abstract);
        } else {
          throw ValidationError(ctx + ": concept '" + concept_name +
                                "' has unknown class '" + tag + "'");
        }
      }
    }
  } else {
    require(!js.contains("concept_classes"),
            ctx + ": concept_classes given without stimulus_concepts");
  }
  return s;
}

}  // namespace detail

/// Parses and validates a manifest from JSON text. Relative paths resolve
/// against `base_dir`. Every referenced matrix header is checked.
inline DatasetManifest parse_manifest(const std::string& text,
                                      const fs::path& base_dir,
                                      const fs::path& source = {}) {
  nlohmann::json js;
  try {
    js = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.source = source;
  const auto& subjects = detail::field(js, "subjects", "manifest");
  detail::require(subjects.is_array() && !subjects.empty(),
                  "manifest: 'subjects' must be a non-empty array");
  for (const auto& jsub : subjects) {
    SubjectSpec s = detail::parse_subject(jsub, base_dir);
    detail::require(m.find_subject(s.name) == nullptr,
                    "manifest: duplicate subject '" + s.name + "'");
    m.subjects.push_back(std::move(s));
  }
  return m;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  const std::string text = detail::read_file_bytes(path);
  return parse_manifest(text, path.parent_path(), path);
}

/// Human-readable outline: subjects, stimulus counts, ROI voxel counts.
inline std::string manifest_summary(const DatasetManifest& m) {
  std::ostringstream out;
  for (const auto& s : m.subjects) {
    out << "subject " << s.name << ": " << s.n_stimuli << " stimuli, "
        << s.response_cols << " response columns\n";
    for (const auto& r : s.rois)
      out << "  roi " << r.name << ": " << r.count << " voxels [" << r.start << ","
          << r.start + r.count << ")\n";
    for (const auto& d : s.sub_datasets)
      out << "  sub_dataset " << d.name << ": " << d.indices.size() << " stimuli\n";
    for (const auto& f : s.features) {
      out << "  feature " << f.model << "/" << f.layer;
      if (f.param_count) out << " (" << *f.param_count << " params)";
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace voxelenc

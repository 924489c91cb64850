#pragma once

#include <unistd.h>

#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "pairint/core/error.hpp"
#include "pairint/core/types.hpp"

namespace pairint::io {

namespace fs = std::filesystem;

/// Shortest-safe decimal form with 17 significant digits (round-trips exactly).
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes through a temporary sibling and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Sample CSV: no header, one sample per row, comma-separated decimals.
inline SampleMatrix read_sample_csv(const fs::path& path, const std::string& label) {
  const std::string text = read_file(path);
  std::vector<double> values;
  Index cols = -1;
  Index rows = 0;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (cols < 0) cols = static_cast<Index>(fields.size());
    if (static_cast<Index>(fields.size()) != cols)
      throw DataError(label + ": " + path.string() + " row " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " columns, expected " + std::to_string(cols));
    for (auto f : fields) {
      auto v = parse_double(f);
      if (!v)
        throw DataError(label + ": " + path.string() + " row " + std::to_string(line_no) +
                        ": malformed value '" + std::string(f) + "'");
      if (!std::isfinite(*v))
        throw DataError(label + ": " + path.string() + " row " + std::to_string(line_no) +
                        ": non-finite value '" + std::string(f) + "'");
      values.push_back(*v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(label + ": " + path.string() + " contains no samples");
  RowMatrix m = Eigen::Map<RowMatrix>(values.data(), rows, cols);
  return SampleMatrix(std::move(m));
}

inline std::string sample_csv_text(const SampleMatrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.rows() * m.dim() * 24));
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.dim(); ++c) {
      if (c) out += ',';
      out += format_double(m.data()(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::string condition_file_stem(const Condition& c) {
  switch (c.kind()) {
    case Condition::Kind::Control: return "control";
    case Condition::Kind::Single: return "single_" + std::to_string(c.i());
    case Condition::Kind::Double: return "double_" + std::to_string(c.i()) + "_" + std::to_string(c.j());
  }
  return "unknown";
}

inline Condition condition_from_json(const nlohmann::json& entry) {
  if (!entry.is_object() || !entry.contains("kind") || !entry["kind"].is_string())
    throw DataError("manifest condition entry lacks a 'kind' string");
  const std::string kind = entry["kind"];
  auto index = [&](const char* key) {
    if (!entry.contains(key) || !entry[key].is_number_integer())
      throw DataError("manifest " + kind + " condition lacks integer '" + key + "'");
    return entry[key].get<int>();
  };
  if (kind == "control") return Condition::control();
  if (kind == "single") return Condition::single(index("i"));
  if (kind == "double") return Condition::pair(index("i"), index("j"));
  throw DataError("unknown condition kind '" + kind + "'");
}

inline nlohmann::json condition_to_json(const Condition& c) {
  nlohmann::json e;
  switch (c.kind()) {
    case Condition::Kind::Control: e["kind"] = "control"; break;
    case Condition::Kind::Single: e["kind"] = "single"; e["i"] = c.i(); break;
    case Condition::Kind::Double: e["kind"] = "double"; e["i"] = c.i(); e["j"] = c.j(); break;
  }
  return e;
}

/// Parsed manifest without the sample payloads.
struct Manifest {
  int n_perturbations = 0;
  Index dim = 0;
  std::vector<std::pair<Condition, fs::path>> files;  // absolute or manifest-relative resolved
  std::vector<std::string> names;
  std::vector<Pair> ground_truth_pairs;
};

inline Manifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw DataError("manifest must be a JSON object");
  for (const char* key : {"n_perturbations", "dim", "conditions"})
    if (!j.contains(key)) throw DataError(std::string("manifest lacks '") + key + "'");
  Manifest m;
  m.n_perturbations = j["n_perturbations"].get<int>();
  m.dim = j["dim"].get<Index>();
  const fs::path base = path.parent_path();
  std::set<Condition> seen;
  for (const auto& entry : j["conditions"]) {
    Condition c = condition_from_json(entry);
    if (!entry.contains("file") || !entry["file"].is_string())
      throw DataError("manifest condition " + c.to_string() + " lacks 'file'");
    if (!seen.insert(c).second) throw DataError("duplicate condition " + c.to_string() + " in manifest");
    m.files.emplace_back(c, base / entry["file"].get<std::string>());
  }
  if (!seen.contains(Condition::control())) throw DataError("control condition absent");
  if (j.contains("names")) m.names = j["names"].get<std::vector<std::string>>();
  if (j.contains("ground_truth_pairs"))
    for (const auto& p : j["ground_truth_pairs"]) m.ground_truth_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  return m;
}

/// Loads a manifest plus its per-condition CSV files and validates the result.
inline ExperimentDataset dataset_load(const fs::path& manifest_path) {
  Manifest man = read_manifest(manifest_path);
  std::map<Condition, SampleMatrix> samples;
  for (const auto& [c, file] : man.files) {
    SampleMatrix s = read_sample_csv(file, c.to_string());
    if (s.dim() != man.dim)
      throw DataError(c.to_string() + ": " + file.string() + " has dimension " + std::to_string(s.dim()) +
                      ", manifest declares " + std::to_string(man.dim));
    samples.emplace(c, std::move(s));
  }
  return ExperimentDataset(man.n_perturbations, std::move(samples), man.names, man.ground_truth_pairs);
}

inline nlohmann::json manifest_json(const ExperimentDataset& ds) {
  nlohmann::json j;
  j["n_perturbations"] = ds.n_perturbations();
  j["dim"] = ds.dim();
  nlohmann::json conds = nlohmann::json::array();
  for (const auto& [c, m] : ds.samples()) {
    auto e = condition_to_json(c);
    e["file"] = condition_file_stem(c) + ".csv";
    conds.push_back(e);
  }
  j["conditions"] = conds;
  if (!ds.names().empty()) j["names"] = ds.names();
  if (!ds.ground_truth_pairs().empty()) {
    nlohmann::json gt = nlohmann::json::array();
    for (const auto& p : ds.ground_truth_pairs()) gt.push_back({p.i, p.j});
    j["ground_truth_pairs"] = gt;
  }
  return j;
}

/// Writes `dir/manifest.json` plus one CSV per condition.
inline void dataset_save(const ExperimentDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& [c, m] : ds.samples())
    write_file_atomic(dir / (condition_file_stem(c) + ".csv"), sample_csv_text(m));
  write_file_atomic(dir / "manifest.json", manifest_json(ds).dump(2) + "\n");
}

/// Score-matrix CSV: header of n indices, then n rows of n fields; upper triangle
/// populated, blank fields unobserved.
inline std::string score_matrix_text(const ScoreMatrix& s) {
  std::string out;
  const int n = s.n();
  for (int c = 0; c < n; ++c) {
    if (c) out += ',';
    out += std::to_string(c);
  }
  out += '\n';
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (c) out += ',';
      if (c > r) {
        if (auto v = s.get(r, c)) out += format_double(*v);
      }
    }
    out += '\n';
  }
  return out;
}

inline void write_score_matrix(const ScoreMatrix& s, const fs::path& path) {
  write_file_atomic(path, score_matrix_text(s));
}

inline ScoreMatrix parse_score_matrix(const std::string& text, const std::string& label) {
  std::vector<std::string> lines;
  std::istringstream ss(text);
  for (std::string line; std::getline(ss, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw DataError(label + ": empty score matrix file");
  const auto header = split(lines[0]);
  const int n = static_cast<int>(header.size());
  if (static_cast<int>(lines.size()) - 1 != n)
    throw DataError(label + ": dimension mismatch, header has " + std::to_string(n) + " columns but " +
                    std::to_string(lines.size() - 1) + " rows follow");
  ScoreMatrix s(n);
  std::vector<std::vector<std::optional<double>>> cells(n, std::vector<std::optional<double>>(n));
  for (int r = 0; r < n; ++r) {
    auto fields = split(lines[static_cast<std::size_t>(r) + 1]);
    if (static_cast<int>(fields.size()) != n)
      throw DataError(label + ": dimension mismatch in row " + std::to_string(r));
    for (int c = 0; c < n; ++c) {
      std::string_view f = fields[static_cast<std::size_t>(c)];
      while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
      while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
      if (f.empty() || r == c) continue;
      auto v = parse_double(f);
      if (!v || !std::isfinite(*v))
        throw DataError(label + ": bad value '" + std::string(f) + "' at (" + std::to_string(r) + "," +
                        std::to_string(c) + ")");
      cells[r][c] = *v;
    }
  }
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) {
      const auto& up = cells[r][c];
      const auto& lo = cells[c][r];
      if (up && lo && *up != *lo)
        throw DataError(label + ": asymmetric entry (" + std::to_string(r) + "," + std::to_string(c) + ")");
      if (up) s.set(r, c, *up);
      else if (lo) s.set(r, c, *lo);
    }
  return s;
}

inline ScoreMatrix read_score_matrix(const fs::path& path) {
  return parse_score_matrix(read_file(path), path.string());
}

/// Relation file: one "i,j" pair per line; blank lines and '#' comments ignored.
inline RelationSet read_relations(const fs::path& path) {
  RelationSet out;
  std::istringstream ss(read_file(path));
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = split(line);
    int a = 0, b = 0;
    auto parse_int = [&](std::string_view s, int& dst) {
      while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
      while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), dst);
      return ec == std::errc() && p == s.data() + s.size();
    };
    if (f.size() != 2 || !parse_int(f[0], a) || !parse_int(f[1], b))
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected 'i,j'");
    out.insert(Pair(a, b));
  }
  return out;
}

inline void write_relations(const RelationSet& rel, const fs::path& path) {
  std::string out;
  for (const auto& p : rel) out += std::to_string(p.i) + "," + std::to_string(p.j) + "\n";
  write_file_atomic(path, out);
}

}  // namespace pairint::io

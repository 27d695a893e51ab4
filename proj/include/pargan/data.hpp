#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pargan/error.hpp"
#include "pargan/parameters.hpp"

namespace pargan {

inline constexpr int kManifestSchemaVersion = 1;

/// One named axis of the parametrization space. Values are validated against
/// [min, max]; `unit` is only a display hint for real-world magnitudes.
struct Axis {
  std::string name;
  double min = 0.0;
  double max = 1.0;
  std::string unit;

  friend bool operator==(const Axis&, const Axis&) = default;
};

/// A conditioning vector together with its axis descriptors.
struct Parametrization {
  std::vector<double> values;
  std::vector<Axis> axes;

  std::size_t dim() const { return values.size(); }

  /// Builds a parametrization, rejecting dimension mismatches and out-of-range
  /// values instead of clamping them.
  static Parametrization make(std::vector<double> values, std::vector<Axis> axes) {
    if (values.size() != axes.size()) {
      throw Error(ErrorCode::validation, "parametrization has " + std::to_string(values.size()) + " values for " +
                                             std::to_string(axes.size()) + " axes");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::isfinite(values[i]) || values[i] < axes[i].min || values[i] > axes[i].max) {
        std::ostringstream os;
        os << "value " << values[i] << " on axis '" << axes[i].name << "' outside [" << axes[i].min << ", "
           << axes[i].max << "]";
        throw Error(ErrorCode::validation, os.str());
      }
    }
    return {std::move(values), std::move(axes)};
  }
};

inline std::vector<Axis> unit_axes(const std::vector<std::string>& names) {
  std::vector<Axis> axes;
  for (const auto& n : names) axes.push_back({n, 0.0, 1.0, ""});
  return axes;
}

struct SampleRecord {
  std::filesystem::path image_path;
  std::string domain;
  std::optional<std::vector<double>> p;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::vector<Axis> axes;
  int schema_version = kManifestSchemaVersion;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  Parametrization parametrization(std::size_t i) const {
    const auto& r = records.at(i);
    if (!r.p) throw Error(ErrorCode::validation, "record '" + r.image_path.string() + "' has no parametrization");
    return Parametrization::make(*r.p, axes);
  }
};

struct Violation {
  std::optional<std::size_t> record;  // empty for manifest-level rules
  std::string rule;
  std::string message;
};

inline std::string describe(const Violation& v) {
  return (v.record ? "record " + std::to_string(*v.record) : std::string("manifest")) + " [" + v.rule + "] " +
         v.message;
}

/// Checks every manifest invariant; the result is empty iff all hold.
inline std::vector<Violation> validate_manifest(const Manifest& m) {
  std::vector<Violation> out;
  if (m.schema_version != kManifestSchemaVersion) {
    out.push_back({std::nullopt, "schema_version",
                   "unsupported schema_version " + std::to_string(m.schema_version)});
  }
  if (m.records.empty()) out.push_back({std::nullopt, "non_empty", "manifest has no records"});
  for (std::size_t a = 0; a < m.axes.size(); ++a) {
    if (!(m.axes[a].min <= m.axes[a].max)) {
      out.push_back({std::nullopt, "axis_range", "axis '" + m.axes[a].name + "' has min > max"});
    }
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const std::string key = r.image_path.lexically_normal().string();
    if (!seen.insert(key).second) out.push_back({i, "duplicate_path", "path '" + key + "' appears more than once"});
    if (!r.p) continue;
    if (r.p->size() != m.axes.size()) {
      out.push_back({i, "dimension", "p has " + std::to_string(r.p->size()) + " values but manifest declares " +
                                         std::to_string(m.axes.size()) + " axes"});
      continue;
    }
    for (std::size_t a = 0; a < r.p->size(); ++a) {
      const double v = (*r.p)[a];
      if (!std::isfinite(v) || v < m.axes[a].min || v > m.axes[a].max) {
        std::ostringstream os;
        os << "p[" << a << "] = " << v << " outside axis '" << m.axes[a].name << "' [" << m.axes[a].min << ", "
           << m.axes[a].max << "]";
        out.push_back({i, "range", os.str()});
      }
    }
  }
  return out;
}

/// Validation for manifests used as a parametrized training target.
inline std::vector<Violation> validate_target_manifest(const Manifest& m) {
  auto out = validate_manifest(m);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (!m.records[i].p) out.push_back({i, "missing_p", "target record has no parametrization"});
  }
  return out;
}

inline void throw_if_violations(const std::vector<Violation>& violations, const std::string& what) {
  if (violations.empty()) return;
  std::string msg = what + " failed validation:";
  for (const auto& v : violations) msg += " " + describe(v) + ";";
  throw Error(ErrorCode::validation, msg);
}

// Manifest file: first line is a header object {"schema_version", "axes"},
// every following non-empty line one record {"path", "domain", "p"?}.
// Relative paths resolve against the manifest's directory.

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {}) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, "manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!header) {
        m.schema_version = j.at("schema_version").get<int>();
        for (const auto& a : j.value("axes", nlohmann::json::array())) {
          m.axes.push_back({a.at("name").get<std::string>(), a.value("min", 0.0), a.value("max", 1.0),
                            a.value("unit", std::string())});
        }
        header = true;
        continue;
      }
      SampleRecord r;
      std::filesystem::path p = j.at("path").get<std::string>();
      r.image_path = (p.is_relative() && !base_dir.empty()) ? (base_dir / p).lexically_normal() : p;
      r.domain = j.value("domain", std::string());
      if (j.contains("p") && !j["p"].is_null()) r.p = j["p"].get<std::vector<double>>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse, "manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw Error(ErrorCode::parse, "manifest has no header line");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read manifest '" + path.string() + "'");
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& out, const Manifest& m, const std::filesystem::path& base_dir = {}) {
  nlohmann::json header;
  header["schema_version"] = m.schema_version;
  header["axes"] = nlohmann::json::array();
  for (const auto& a : m.axes) {
    nlohmann::json ja = {{"name", a.name}, {"min", a.min}, {"max", a.max}};
    if (!a.unit.empty()) ja["unit"] = a.unit;
    header["axes"].push_back(ja);
  }
  out << header.dump() << '\n';
  for (const auto& r : m.records) {
    std::filesystem::path p = r.image_path;
    if (!base_dir.empty() && p.is_absolute()) {
      auto rel = p.lexically_relative(base_dir);
      if (!rel.empty()) p = rel;
    }
    nlohmann::json j = {{"path", p.generic_string()}, {"domain", r.domain}};
    if (r.p) j["p"] = *r.p;
    out << j.dump() << '\n';
  }
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write manifest '" + path.string() + "'");
  auto base = std::filesystem::absolute(path).parent_path();
  write_manifest(out, m, base);
  if (!out) throw Error(ErrorCode::io, "failed writing manifest '" + path.string() + "'");
}

/// Turns an unlabeled source domain and k unlabeled target domains into one
/// parametrized target set: source records get the zero vector, records of the
/// j-th target get the j-th standard basis vector.
inline Manifest build_soft_labels(const Manifest& source, const std::vector<Manifest>& targets) {
  if (targets.empty()) throw Error(ErrorCode::validation, "build_soft_labels: at least one target domain is required");
  if (source.empty()) throw Error(ErrorCode::validation, "build_soft_labels: source manifest is empty");
  for (std::size_t j = 0; j < targets.size(); ++j) {
    if (targets[j].empty()) {
      throw Error(ErrorCode::validation, "build_soft_labels: target manifest " + std::to_string(j) + " is empty");
    }
  }
  for (const auto& r : source.records) {
    if (r.p) throw Error(ErrorCode::validation, "build_soft_labels: source record '" + r.image_path.string() +
                                                    "' already carries a parametrization");
  }

  const std::size_t k = targets.size();
  std::map<std::string, std::vector<std::string>> owners;
  auto note = [&](const SampleRecord& r, const std::string& where) {
    owners[std::filesystem::absolute(r.image_path).lexically_normal().string()].push_back(where);
  };
  for (const auto& r : source.records) note(r, "source");
  for (std::size_t j = 0; j < k; ++j)
    for (const auto& r : targets[j].records) note(r, "target " + std::to_string(j));
  std::string dupes;
  for (const auto& [path, where] : owners) {
    if (where.size() < 2) continue;
    dupes += " " + path + " (";
    for (std::size_t i = 0; i < where.size(); ++i) dupes += (i ? ", " : "") + where[i];
    dupes += ");";
  }
  if (!dupes.empty()) throw Error(ErrorCode::validation, "build_soft_labels: duplicate image paths:" + dupes);

  Manifest out;
  for (std::size_t j = 0; j < k; ++j) {
    std::string name = targets[j].records.front().domain;
    if (name.empty()) name = "target" + std::to_string(j);
    out.axes.push_back({name, 0.0, 1.0, ""});
  }
  for (const auto& r : source.records) {
    SampleRecord s = r;
    s.p = std::vector<double>(k, 0.0);
    out.records.push_back(std::move(s));
  }
  for (std::size_t j = 0; j < k; ++j) {
    for (const auto& r : targets[j].records) {
      SampleRecord s = r;
      std::vector<double> onehot(k, 0.0);
      onehot[j] = 1.0;
      s.p = std::move(onehot);
      out.records.push_back(std::move(s));
    }
  }
  return out;
}

struct TrainingTuple {
  SampleRecord x;
  SampleRecord y;
  Parametrization p;
};

struct TupleIndices {
  std::size_t x = 0;
  std::size_t y = 0;
};

/// Draws one source and one target index uniformly, with replacement.
inline TupleIndices sample_tuple_indices(std::size_t source_size, std::size_t target_size, Rng& rng) {
  if (source_size == 0 || target_size == 0) {
    throw Error(ErrorCode::validation, "sample_training_tuple: empty manifest");
  }
  std::uniform_int_distribution<std::size_t> xs(0, source_size - 1);
  std::uniform_int_distribution<std::size_t> ys(0, target_size - 1);
  TupleIndices t;
  t.x = xs(rng);
  t.y = ys(rng);
  return t;
}

/// Samples (x, y, p): x uniform from the source, y uniform from the target and
/// p the target record's parametrization. Deterministic given `rng`.
inline TrainingTuple sample_training_tuple(const Manifest& source, const Manifest& target, Rng& rng) {
  const auto idx = sample_tuple_indices(source.size(), target.size(), rng);
  const auto& y = target.records[idx.y];
  if (!y.p) {
    throw Error(ErrorCode::validation, "sample_training_tuple: target record '" + y.image_path.string() +
                                           "' has no parametrization");
  }
  return {source.records[idx.x], y, Parametrization::make(*y.p, target.axes)};
}

}  // namespace pargan

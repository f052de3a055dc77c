#pragma once

// Multi-domain datasets: synthetic rotated-domain generators, CSV ingestion
// and export, leave-one-domain-out splits and per-domain minibatching.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fedalign/error.hpp"
#include "fedalign/format.hpp"
#include "fedalign/models.hpp"
#include "fedalign/numcore.hpp"

namespace fedalign {

struct DomainDataset {
  std::string domain_id;
  RealMat features;
  std::vector<int> labels;

  DomainDataset() = default;
  DomainDataset(std::string id, RealMat x, std::vector<int> y)
      : domain_id(std::move(id)), features(std::move(x)), labels(std::move(y)) {
    if (labels.size() != features.rows()) {
      throw Error(ErrorKind::DimensionMismatch, "domain '" + domain_id + "': labels/rows mismatch");
    }
  }

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t dim() const noexcept { return features.cols(); }

  friend bool operator==(const DomainDataset&, const DomainDataset&) = default;
};

struct DomainSuite {
  std::vector<DomainDataset> domains;
  std::size_t num_classes = 2;
  // Original label values in dense-index order (empty for synthetic suites).
  std::vector<std::string> label_names;

  void validate() const {
    if (domains.size() < 2) {
      throw Error(ErrorKind::InsufficientDomains,
                  "a suite needs at least 2 domains, got " + std::to_string(domains.size()));
    }
    if (num_classes < 2) throw Error(ErrorKind::InvalidSpec, "num_classes must be >= 2");
    std::unordered_set<std::string> seen;
    const std::size_t dim = domains.front().dim();
    for (const auto& d : domains) {
      if (!seen.insert(d.domain_id).second) {
        throw Error(ErrorKind::InvalidSpec, "duplicate domain id '" + d.domain_id + "'");
      }
      if (d.dim() != dim) {
        throw Error(ErrorKind::InconsistentDimension, "domain '" + d.domain_id + "' has feature dimension " +
                                                          std::to_string(d.dim()) + ", expected " +
                                                          std::to_string(dim));
      }
      for (int y : d.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
          throw Error(ErrorKind::InvalidSpec, "label out of range in domain '" + d.domain_id + "'");
        }
      }
    }
  }

  const DomainDataset* find(const std::string& id) const {
    for (const auto& d : domains) {
      if (d.domain_id == id) return &d;
    }
    return nullptr;
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& d : domains) out.push_back(d.domain_id);
    return out;
  }

  friend bool operator==(const DomainSuite&, const DomainSuite&) = default;
};

enum class SyntheticFamily { rotated_gaussians, rotated_two_moons };

inline std::string to_string(SyntheticFamily f) {
  return f == SyntheticFamily::rotated_gaussians ? "rotated_gaussians" : "rotated_two_moons";
}

struct SyntheticSpec {
  SyntheticFamily family = SyntheticFamily::rotated_two_moons;
  std::size_t num_domains = 4;
  std::size_t samples_per_domain = 500;
  std::vector<double> rotation_degrees{0.0, 15.0, 30.0, 45.0};
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_domains < 2) throw Error(ErrorKind::InvalidSpec, "num_domains must be >= 2");
    if (samples_per_domain == 0) throw Error(ErrorKind::InvalidSpec, "samples_per_domain must be positive");
    if (rotation_degrees.size() != num_domains) {
      throw Error(ErrorKind::InvalidSpec, "rotation_degrees must have num_domains entries");
    }
    for (double r : rotation_degrees) {
      if (!std::isfinite(r)) throw Error(ErrorKind::InvalidSpec, "rotation angles must be finite");
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
      throw Error(ErrorKind::InvalidSpec, "noise_sigma must be nonnegative");
    }
  }

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// cos/sin of an angle in degrees; quarter turns are exact so that a 180
// degree rotation maps x to -x bit-exactly.
inline std::pair<double, double> rotation_cos_sin(double degrees) {
  double d = std::fmod(degrees, 360.0);
  if (d < 0) d += 360.0;
  if (d == 0.0) return {1.0, 0.0};
  if (d == 90.0) return {0.0, 1.0};
  if (d == 180.0) return {-1.0, 0.0};
  if (d == 270.0) return {0.0, -1.0};
  const double rad = d * (3.14159265358979323846 / 180.0);
  return {std::cos(rad), std::sin(rad)};
}

inline void rotate_in_place(RealMat& x, double degrees) {
  const auto [c, s] = rotation_cos_sin(degrees);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double a = x(r, 0);
    const double b = x(r, 1);
    x(r, 0) = c * a - s * b;
    x(r, 1) = s * a + c * b;
  }
}

namespace detail {

// Labels alternate 0,1,0,1,... so every domain is balanced and starts with class 0.
inline RealMat base_sample(SyntheticFamily family, std::size_t n, Rng& rng, std::vector<int>& labels) {
  RealMat x(n, 2);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    labels[i] = y;
    if (family == SyntheticFamily::rotated_gaussians) {
      // Class means at (-1, 0) and (+1, 0), unit-half spread.
      x(i, 0) = (y == 0 ? -1.0 : 1.0) + 0.5 * rng.normal();
      x(i, 1) = 0.5 * rng.normal();
    } else {
      // Interleaved half circles, centred on the origin.
      const double t = 3.14159265358979323846 * rng.uniform();
      if (y == 0) {
        x(i, 0) = std::cos(t) - 0.5;
        x(i, 1) = std::sin(t) - 0.25;
      } else {
        x(i, 0) = 1.0 - std::cos(t) - 0.5;
        x(i, 1) = 0.5 - std::sin(t) - 0.25;
      }
    }
  }
  return x;
}

}  // namespace detail

// Domain d is drawn from the child stream derive_seed(seed, d): base sample,
// rotation about the origin, then additive N(0, sigma^2) noise.
inline DomainSuite generate(const SyntheticSpec& spec) {
  spec.validate();
  DomainSuite suite;
  suite.num_classes = 2;
  for (std::size_t d = 0; d < spec.num_domains; ++d) {
    Rng rng(derive_seed(spec.seed, d));
    std::vector<int> labels;
    RealMat x = detail::base_sample(spec.family, spec.samples_per_domain, rng, labels);
    rotate_in_place(x, spec.rotation_degrees[d]);
    if (spec.noise_sigma > 0.0) {
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) += spec.noise_sigma * rng.normal();
      }
    }
    suite.domains.emplace_back("domain" + std::to_string(d), std::move(x), std::move(labels));
  }
  suite.validate();
  return suite;
}

struct LeaveOneOut {
  std::vector<DomainDataset> sources;
  DomainDataset target;
};

inline LeaveOneOut leave_one_out(const DomainSuite& suite, const std::string& target) {
  LeaveOneOut split;
  bool found = false;
  for (const auto& d : suite.domains) {
    if (d.domain_id == target) {
      split.target = d;
      found = true;
    } else {
      split.sources.push_back(d);
    }
  }
  if (!found) throw Error(ErrorKind::UnknownDomain, "no domain named '" + target + "'");
  return split;
}

// Without replacement (a prefix of a fresh permutation) when the dataset is
// large enough, otherwise with replacement.
inline Batch minibatch(const DomainDataset& data, std::size_t batch_size, Rng& rng) {
  if (data.size() == 0) throw Error(ErrorKind::EmptyDataset, "domain '" + data.domain_id + "' is empty");
  if (batch_size == 0) throw Error(ErrorKind::InvalidSpec, "batch_size must be >= 1");
  std::vector<std::size_t> rows;
  if (batch_size <= data.size()) {
    rows = shuffle(rng, data.size());
    rows.resize(batch_size);
  } else {
    rows.resize(batch_size);
    for (auto& r : rows) r = static_cast<std::size_t>(rng.uniform_int(data.size()));
  }
  Batch b{RealMat(batch_size, data.dim()), std::vector<int>(batch_size)};
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto src = data.features.row(rows[i]);
    std::copy(src.begin(), src.end(), b.features.row(i).begin());
    b.labels[i] = data.labels[rows[i]];
  }
  return b;
}

// Concatenates datasets in order under a new id.
inline DomainDataset pool(const std::vector<DomainDataset>& parts, std::string id) {
  if (parts.empty()) throw Error(ErrorKind::EmptyDataset, "nothing to pool");
  const std::size_t dim = parts.front().dim();
  std::vector<double> data;
  std::vector<int> labels;
  for (const auto& p : parts) {
    if (p.dim() != dim) throw Error(ErrorKind::InconsistentDimension, "pooled domains differ in dimension");
    data.insert(data.end(), p.features.data().begin(), p.features.data().end());
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  const std::size_t rows = labels.size();
  return {std::move(id), RealMat(rows, dim, std::move(data)), std::move(labels)};
}

struct CsvSchema {
  std::vector<std::string> feature_cols;  // empty: every column except label and domain
  std::string label_col = "label";
  std::string domain_col = "domain";
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t\r");
    const auto e = c.find_last_not_of(" \t\r");
    c = b == std::string::npos ? std::string{} : c.substr(b, e - b + 1);
  }
  return cells;
}

inline std::optional<double> parse_real(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

// Rows are grouped by the domain column in first-appearance order; labels
// are mapped to dense integers in first-appearance order and the original
// values are kept in label_names.
inline DomainSuite load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, 1, "missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);

  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ParseError(1, 1, "column '" + name + "' not found in header");
  };
  const std::size_t label_idx = column_of(schema.label_col);
  const std::size_t domain_idx = column_of(schema.domain_col);
  std::vector<std::size_t> feature_idx;
  if (schema.feature_cols.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != label_idx && i != domain_idx) feature_idx.push_back(i);
    }
  } else {
    for (const auto& f : schema.feature_cols) feature_idx.push_back(column_of(f));
  }
  if (feature_idx.empty()) throw ParseError(1, 1, "no feature columns");

  struct Group {
    std::vector<double> x;
    std::vector<int> y;
  };
  std::vector<std::string> domain_order;
  std::unordered_map<std::string, Group> groups;
  std::vector<std::string> label_names;
  std::unordered_map<std::string, int> label_ids;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::InconsistentDimension, "line " + std::to_string(line_no) + ": expected " +
                                                        std::to_string(header.size()) + " cells, got " +
                                                        std::to_string(cells.size()));
    }
    const std::string& dom = cells[domain_idx];
    auto [it, inserted] = groups.try_emplace(dom);
    if (inserted) domain_order.push_back(dom);
    for (std::size_t f : feature_idx) {
      const auto v = detail::parse_real(cells[f]);
      if (!v) throw ParseError(line_no, f + 1, "non-numeric feature value '" + cells[f] + "'");
      it->second.x.push_back(*v);
    }
    const std::string& lab = cells[label_idx];
    auto [lit, new_label] = label_ids.try_emplace(lab, static_cast<int>(label_names.size()));
    if (new_label) label_names.push_back(lab);
    it->second.y.push_back(lit->second);
  }

  DomainSuite suite;
  suite.num_classes = std::max<std::size_t>(2, label_names.size());
  suite.label_names = label_names;
  for (const auto& name : domain_order) {
    auto& g = groups[name];
    const std::size_t rows = g.y.size();
    suite.domains.emplace_back(name, RealMat(rows, feature_idx.size(), std::move(g.x)), std::move(g.y));
  }
  suite.validate();
  return suite;
}

// Columns: domain, x0..x{d-1}, label. Reals use 17 significant digits.
inline void write_csv(const DomainSuite& suite, std::ostream& out) {
  if (suite.domains.empty()) return;
  const std::size_t dim = suite.domains.front().dim();
  out << "domain";
  for (std::size_t c = 0; c < dim; ++c) out << ",x" << c;
  out << ",label\n";
  for (const auto& d : suite.domains) {
    for (std::size_t r = 0; r < d.size(); ++r) {
      out << d.domain_id;
      for (std::size_t c = 0; c < dim; ++c) out << ',' << format_real(d.features(r, c));
      const auto y = static_cast<std::size_t>(d.labels[r]);
      out << ',' << (y < suite.label_names.size() ? suite.label_names[y] : std::to_string(y)) << '\n';
    }
  }
}

inline void write_csv(const DomainSuite& suite, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  write_csv(suite, out);
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

}  // namespace fedalign

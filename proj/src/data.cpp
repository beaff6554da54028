#include "fisherjscc/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "fisherjscc/error.hpp"
#include "fisherjscc/format.hpp"
#include "fisherjscc/rng.hpp"

namespace fisherjscc {

namespace {

std::vector<std::string> default_label_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back(std::to_string(c));
  return names;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, delim)) out.push_back(cell);
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::string_view split_name(Split s) { return s == Split::train ? "train" : "test"; }

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (features.rows() != labels.size()) throw DataError("dataset: feature rows do not match label count");
  if (classes < 2) throw DataError("dataset: need at least two classes");
  for (std::size_t y : labels)
    if (y >= classes) throw DataError("dataset: label " + std::to_string(y) + " out of range");
  if (!features.all_finite()) throw DataError("dataset: non-finite feature value");
}

Dataset make_blobs(const BlobsParams& p, std::uint64_t seed, Split split) {
  if (p.classes < 2) throw std::invalid_argument("make_blobs: need at least two classes");
  if (p.dim < 1 || p.per_class < 1) throw std::invalid_argument("make_blobs: dim and per_class must be >= 1");

  CounterRng center_rng(derive_seed(seed, "blobs.centers"));
  Tensor centers(p.classes, p.dim);
  for (std::size_t c = 0; c < p.classes; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& v : centers.row(c)) {
        v = center_rng.normal();
        norm += v * v;
      }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& v : centers.row(c)) v *= p.radius / norm;
  }

  CounterRng rng(derive_seed(seed, "blobs.samples", {split == Split::train ? 0u : 1u}));
  Dataset d;
  d.features = Tensor(p.classes * p.per_class, p.dim);
  d.classes = p.classes;
  d.split = split;
  d.label_names = default_label_names(p.classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.classes; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i, ++row) {
      for (std::size_t j = 0; j < p.dim; ++j) d.features(row, j) = centers(c, j) + p.spread * rng.normal();
      d.labels.push_back(c);
    }
  }
  return d;
}

Dataset make_rings(const RingsParams& p, std::uint64_t seed, Split split) {
  if (p.classes < 2) throw std::invalid_argument("make_rings: need at least two classes");
  if (p.per_class < 1) throw std::invalid_argument("make_rings: per_class must be >= 1");
  CounterRng rng(derive_seed(seed, "rings.samples", {split == Split::train ? 0u : 1u}));
  Dataset d;
  d.features = Tensor(p.classes * p.per_class, 2);
  d.classes = p.classes;
  d.split = split;
  d.label_names = default_label_names(p.classes);
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.classes; ++c) {
    for (std::size_t i = 0; i < p.per_class; ++i, ++row) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      const double r = static_cast<double>(c + 1) + p.noise * rng.normal();
      d.features(row, 0) = r * std::cos(angle);
      d.features(row, 1) = r * std::sin(angle);
      d.labels.push_back(c);
    }
  }
  return d;
}

Dataset load_table(const std::filesystem::path& path, const TableOptions& options, Split split,
                   const Dataset* reference) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open table " + path.string());

  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    lines.push_back(line);
  }
  const std::size_t first = options.header ? 1 : 0;
  if (lines.size() <= first) throw DataError(path.string() + ": table has no data rows");

  const std::size_t width = split_line(lines[first], options.delimiter).size();
  if (width < 2) throw DataError(path.string() + ": need at least one feature and one label column");
  const long lc = options.label_column < 0 ? static_cast<long>(width) + options.label_column
                                           : options.label_column;
  if (lc < 0 || lc >= static_cast<long>(width)) throw DataError(path.string() + ": label column out of range");
  const auto label_col = static_cast<std::size_t>(lc);

  std::unordered_map<std::string, std::size_t> label_ids;
  std::vector<std::string> names;
  if (reference) {
    names = reference->label_names;
    for (std::size_t c = 0; c < names.size(); ++c) label_ids.emplace(names[c], c);
  }

  Dataset d;
  d.split = split;
  d.features = Tensor(lines.size() - first, width - 1);
  for (std::size_t r = first; r < lines.size(); ++r) {
    const auto cells = split_line(lines[r], options.delimiter);
    const std::size_t line_no = r + 1;
    if (cells.size() != width) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": ragged row (" +
                      std::to_string(cells.size()) + " fields, expected " + std::to_string(width) + ")");
    }
    std::size_t out_col = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (c == label_col) continue;
      const std::string cell = trim(cells[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric feature '" + cell +
                        "' in column " + std::to_string(c));
      }
      d.features(r - first, out_col++) = v;
    }
    const std::string token = trim(cells[label_col]);
    auto it = label_ids.find(token);
    if (it == label_ids.end()) {
      if (reference) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": label mismatch, '" + token +
                        "' does not occur in the reference split");
      }
      it = label_ids.emplace(token, names.size()).first;
      names.push_back(token);
    }
    d.labels.push_back(it->second);
  }
  d.classes = names.size();
  d.label_names = std::move(names);
  if (d.classes < 2) throw DataError(path.string() + ": need at least two distinct labels");
  return d;
}

void write_table(const Dataset& data, const std::filesystem::path& path, const TableOptions& options) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write table " + path.string());
  const std::size_t m = data.dim();
  if (options.header) {
    for (std::size_t j = 0; j < m; ++j) out << 'x' << j << options.delimiter;
    out << "label\n";
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) out << format_double(data.features(i, j)) << options.delimiter;
    out << data.label_names.at(data.labels[i]) << '\n';
  }
}

}  // namespace fisherjscc

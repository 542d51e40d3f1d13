// SPDX-License-Identifier: Apache-2.0

#include "backflow/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <openssl/evp.h>

#include "backflow/rng.hpp"

namespace backflow {

namespace {

using Index = Eigen::Index;

std::string hex(const unsigned char* bytes, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(kDigits[bytes[i] >> 4]);
    out.push_back(kDigits[bytes[i] & 0xF]);
  }
  return out;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, std::size_t row, std::size_t col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw DataError("row " + std::to_string(row) + ", column " + std::to_string(col) +
                    ": cannot parse '" + s + "' as a number");
  }
  return v;
}

/// Standardizes columns of `raw` using statistics of `rows_for_stats`.
Matrix standardized(const Matrix& raw, std::span<const std::size_t> rows_for_stats) {
  Matrix out = raw;
  const auto n = static_cast<double>(rows_for_stats.size());
  for (Index j = 0; j < raw.cols(); ++j) {
    double mu = 0.0;
    for (std::size_t r : rows_for_stats) mu += raw(static_cast<Index>(r), j);
    mu /= n;
    double var = 0.0;
    for (std::size_t r : rows_for_stats) {
      const double e = raw(static_cast<Index>(r), j) - mu;
      var += e * e;
    }
    var /= n;
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    out.col(j) = ((raw.col(j).array() - mu) / sd).matrix();
  }
  return out;
}

void finalize_counts(Dataset& ds) {
  int max_label = -1;
  for (int y : ds.labels) {
    if (y < 0) throw DataError("negative label " + std::to_string(y));
    max_label = std::max(max_label, y);
  }
  ds.num_classes = static_cast<std::size_t>(max_label + 1);
  if (ds.num_classes < 2) throw DataError("dataset needs at least two classes");
  ds.train.resize(ds.size());
  std::iota(ds.train.begin(), ds.train.end(), std::size_t{0});
  ds.probe.clear();
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "label") {
    throw DataError(path.string() + ": header must be 'label,f0,f1,...'");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != d + 1) {
      throw DataError(path.string() + ": row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(d + 1));
    }
    const double label = parse_number(fields[0], row, 0);
    if (label != std::floor(label) || label < 0) {
      throw DataError(path.string() + ": row " + std::to_string(row) +
                      ": label must be a non-negative integer");
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t j = 1; j <= d; ++j) values.push_back(parse_number(fields[j], row, j));
  }
  if (labels.empty()) throw DataError(path.string() + ": no data rows");
  Dataset ds;
  ds.raw_features = Eigen::Map<Matrix>(values.data(), static_cast<Index>(labels.size()),
                                       static_cast<Index>(d));
  ds.labels = std::move(labels);
  ds.provenance = {"csv", path.string(), sha256_hex(path), {}};
  return ds;
}

std::uint32_t read_be32(const std::vector<char>& buf, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(buf[offset + i]);
  }
  return v;
}

struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

IdxArray parse_idx(const std::filesystem::path& path) {
  const auto buf = read_bytes(path);
  if (buf.size() < 4 || buf[0] != 0 || buf[1] != 0) {
    throw DataError(path.string() + ": offset 0: bad IDX magic");
  }
  const auto type = static_cast<unsigned char>(buf[2]);
  const auto ndim = static_cast<std::size_t>(static_cast<unsigned char>(buf[3]));
  std::size_t width = 0;
  switch (type) {
    case 0x08: case 0x09: width = 1; break;
    case 0x0B: width = 2; break;
    case 0x0C: case 0x0D: width = 4; break;
    case 0x0E: width = 8; break;
    default: throw DataError(path.string() + ": offset 2: unknown IDX element type");
  }
  if (ndim == 0 || buf.size() < 4 + 4 * ndim) {
    throw DataError(path.string() + ": offset 3: truncated IDX header");
  }
  IdxArray arr;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    arr.dims.push_back(read_be32(buf, 4 + 4 * i));
    count *= arr.dims.back();
  }
  const std::size_t offset = 4 + 4 * ndim;
  if (buf.size() != offset + count * width) {
    throw DataError(path.string() + ": offset " + std::to_string(offset) + ": expected " +
                    std::to_string(count * width) + " data bytes, found " +
                    std::to_string(buf.size() - offset));
  }
  arr.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = offset + i * width;
    std::uint64_t raw = 0;
    for (std::size_t b = 0; b < width; ++b) raw = (raw << 8) | static_cast<unsigned char>(buf[at + b]);
    double v = 0.0;
    switch (type) {
      case 0x08: v = static_cast<double>(raw); break;
      case 0x09: v = static_cast<double>(static_cast<std::int8_t>(raw)); break;
      case 0x0B: v = static_cast<double>(static_cast<std::int16_t>(raw)); break;
      case 0x0C: v = static_cast<double>(static_cast<std::int32_t>(raw)); break;
      case 0x0D: {
        const auto bits = static_cast<std::uint32_t>(raw);
        float f;
        std::memcpy(&f, &bits, sizeof f);
        v = f;
        break;
      }
      default: std::memcpy(&v, &raw, sizeof v); break;
    }
    arr.values[i] = v;
  }
  return arr;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels_path) {
  if (labels_path.empty()) throw DataError("idx_pair needs a labels file");
  const IdxArray img = parse_idx(images);
  const IdxArray lab = parse_idx(labels_path);
  if (lab.dims.size() != 1) throw DataError(labels_path.string() + ": labels must be 1-D");
  const std::size_t m = img.dims[0];
  if (lab.dims[0] != m) {
    throw DataError("label count " + std::to_string(lab.dims[0]) + " does not match " +
                    std::to_string(m) + " images");
  }
  const std::size_t d = m == 0 ? 0 : img.values.size() / m;
  if (m == 0 || d == 0) throw DataError(images.string() + ": no image data");
  Dataset ds;
  ds.raw_features = Eigen::Map<const Matrix>(img.values.data(), static_cast<Index>(m),
                                             static_cast<Index>(d));
  for (double y : lab.values) {
    if (y < 0 || y != std::floor(y)) throw DataError(labels_path.string() + ": bad label");
    ds.labels.push_back(static_cast<int>(y));
  }
  if (img.dims.size() == 3) {
    ds.image_shape = ImageShape{1, img.dims[1], img.dims[2]};
  } else if (img.dims.size() == 4) {
    ds.image_shape = ImageShape{img.dims[1], img.dims[2], img.dims[3]};
  }
  ds.provenance = {"idx", images.string() + " + " + labels_path.string(), sha256_hex(images),
                   sha256_hex(labels_path)};
  return ds;
}

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

Matrix Dataset::rows(std::span<const std::size_t> idx) const {
  Matrix out(static_cast<Index>(idx.size()), features.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Index>(i)) = features.row(static_cast<Index>(idx[i]));
  }
  return out;
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(labels[i]);
  return out;
}

std::string sha256_hex(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("SHA-256 failed for '" + path.string() + "'");
  }
  return hex(digest.data(), len);
}

Dataset make_synthetic(std::size_t dim, std::size_t num_classes, std::size_t per_class,
                       double spread, std::uint64_t seed) {
  if (dim < 2) throw DataError("synthetic dataset needs dim >= 2");
  if (num_classes < 2) throw DataError("synthetic dataset needs at least two classes");
  if (per_class == 0) throw DataError("synthetic dataset needs per_class >= 1");
  if (!(spread >= 0.0) || !std::isfinite(spread)) throw DataError("spread must be finite and >= 0");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(static_cast<Index>(num_classes), static_cast<Index>(dim));
  for (Index c = 0; c < means.rows(); ++c) {
    for (Index j = 0; j < means.cols(); ++j) means(c, j) = normal(rng);
    means.row(c) *= spread / means.row(c).norm();
  }
  Dataset ds;
  const std::size_t m = num_classes * per_class;
  ds.features.resize(static_cast<Index>(m), static_cast<Index>(dim));
  ds.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t c = i / per_class;
    ds.labels[i] = static_cast<int>(c);
    for (Index j = 0; j < static_cast<Index>(dim); ++j) {
      ds.features(static_cast<Index>(i), j) = means(static_cast<Index>(c), j) + normal(rng);
    }
  }
  finalize_counts(ds);
  std::ostringstream desc;
  desc << "gaussian mixture d=" << dim << " C=" << num_classes << " per_class=" << per_class
       << " spread=" << spread << " seed=" << seed;
  ds.provenance = {"synthetic", desc.str(), {}, {}};
  return ds;
}

Dataset load_table(const std::filesystem::path& path, TableFormat format,
                   const std::filesystem::path& labels_path) {
  Dataset ds = format == TableFormat::csv_labeled ? load_csv(path) : load_idx(path, labels_path);
  finalize_counts(ds);
  ds.standardize = true;
  ds.features = standardized(ds.raw_features, ds.train);
  return ds;
}

Dataset split_probe(Dataset ds, std::size_t n, std::uint64_t seed) {
  const std::size_t m = ds.size();
  if (n == 0 || n >= m) {
    throw DataError("probe size " + std::to_string(n) + " must lie in [1, " +
                    std::to_string(m) + ")");
  }
  const std::size_t classes = ds.num_classes;
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < m; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  // Largest-remainder proportional quotas.
  std::vector<std::size_t> quota(classes, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double exact = static_cast<double>(n) * static_cast<double>(by_class[c].size()) /
                         static_cast<double>(m);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i) {
    const std::size_t c = remainders[i % classes].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }
  // Give every non-empty class one probe example when the budget allows.
  if (n >= classes) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (quota[c] > 0 || by_class[c].empty()) continue;
      const auto donor = static_cast<std::size_t>(
          std::max_element(quota.begin(), quota.end()) - quota.begin());
      if (quota[donor] <= 1) break;
      --quota[donor];
      ++quota[c];
    }
  }

  Rng rng(seed);
  std::vector<bool> in_probe(m, false);
  for (std::size_t c = 0; c < classes; ++c) {
    auto pool = by_class[c];
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t i = 0; i < quota[c]; ++i) in_probe[pool[i]] = true;
  }
  ds.probe.clear();
  ds.train.clear();
  for (std::size_t i = 0; i < m; ++i) (in_probe[i] ? ds.probe : ds.train).push_back(i);

  if (ds.standardize) ds.features = standardized(ds.raw_features, ds.train);

  std::uint64_t h = hash_label(ds.provenance.description, seed);
  for (std::size_t i : ds.probe) h = splitmix64(h ^ i);
  std::ostringstream id;
  id << "probe-" << n << "-" << std::hex << h;
  ds.probe_id = id.str();
  return ds;
}

}  // namespace backflow

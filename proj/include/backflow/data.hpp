// SPDX-License-Identifier: Apache-2.0
//
// Dataset provisioning: seeded Gaussian-mixture generator, CSV / IDX ingestion
// and the fixed, class-stratified probe split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "backflow/model.hpp"

namespace backflow {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Channel-major image geometry for rows that are flattened grids.
struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t size() const { return channels * height * width; }
};

struct Provenance {
  std::string source;  // "synthetic", "csv", "idx"
  std::string description;
  std::string sha256;  // hex, empty for synthetic
  std::string labels_sha256;
};

struct Dataset {
  Matrix features;              // M x d, standardized when `standardize`
  std::vector<int> labels;      // M labels in [0, num_classes)
  std::size_t num_classes = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> probe;
  std::string probe_id;
  Provenance provenance;
  std::optional<ImageShape> image_shape;

  /// Loaded tables keep their raw values so the probe split can re-derive
  /// standardization from train rows only.
  bool standardize = false;
  Matrix raw_features;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  std::vector<std::size_t> class_counts() const;

  Matrix rows(std::span<const std::size_t> idx) const;
  std::vector<int> labels_of(std::span<const std::size_t> idx) const;
  Matrix probe_features() const { return rows(probe); }
};

/// Gaussian mixture: C class means at radius `spread` in random directions,
/// unit isotropic noise. All rows start in the train split.
Dataset make_synthetic(std::size_t dim, std::size_t num_classes, std::size_t per_class,
                       double spread, std::uint64_t seed);

enum class TableFormat { csv_labeled, idx_pair };

/// csv_labeled: header `label,f0,f1,...`.
/// idx_pair: `path` is the images file; `labels_path` the label file.
Dataset load_table(const std::filesystem::path& path, TableFormat format,
                   const std::filesystem::path& labels_path = {});

/// Draws a class-stratified probe of size n without replacement; the rest is
/// the train split.
Dataset split_probe(Dataset dataset, std::size_t n, std::uint64_t seed);

std::string sha256_hex(const std::filesystem::path& path);

}  // namespace backflow

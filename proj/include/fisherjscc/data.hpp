#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fisherjscc/tensor.hpp"

namespace fisherjscc {

enum class Split { train, test };

std::string_view split_name(Split s);

struct Dataset {
  Tensor features;                     // N × m
  std::vector<std::size_t> labels;     // N entries in [0, classes)
  std::size_t classes = 0;
  Split split = Split::train;
  std::vector<std::string> label_names;  // label_names[c] is the original token of class c

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;
};

struct BlobsParams {
  std::size_t classes = 4;
  std::size_t per_class = 200;
  std::size_t dim = 2;
  double spread = 0.5;
  double radius = 3.0;
};

struct RingsParams {
  std::size_t classes = 3;
  std::size_t per_class = 200;
  double noise = 0.05;
};

/// Class c is centered on a seeded point of the radius-3 sphere; centers depend
/// only on `seed`, samples on (seed, split), so train and test share centers but
/// never share draws.
Dataset make_blobs(const BlobsParams& params, std::uint64_t seed, Split split);

/// Class c lies on the circle of radius c+1 in ℝ² with Gaussian radial noise.
Dataset make_rings(const RingsParams& params, std::uint64_t seed, Split split);

struct TableOptions {
  char delimiter = ',';
  bool header = true;
  // Column index of the label; negative counts from the end (-1 = last).
  int label_column = -1;
};

/// Parses a delimited table. Labels are relabeled 0..C−1 in first-appearance
/// order, unless `reference` is given, in which case its label tokens are
/// reused and an unseen token is rejected.
Dataset load_table(const std::filesystem::path& path, const TableOptions& options,
                   Split split = Split::train, const Dataset* reference = nullptr);

/// Writes features as shortest round-trip decimals followed by the label token.
void write_table(const Dataset& data, const std::filesystem::path& path, const TableOptions& options = {});

}  // namespace fisherjscc

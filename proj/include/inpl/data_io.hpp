#pragma once

#include "inpl/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace inpl {

/// Reads edges.tsv, features.csv, labels.csv and splits.json from `dir`.
/// Throws IoError for a missing or unreadable file and InputError for any
/// content that violates the Dataset invariants.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the four files (each via a temporary file renamed into place).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

Masks read_masks(const std::filesystem::path& path, Index n);
void write_masks(const Masks& masks, const std::filesystem::path& path);

/// Optional row normalization (each feature row scaled to unit L1 norm).
void row_normalize(Matrix& features);

struct SplitResult {
  Masks masks;
  std::vector<std::string> warnings;
};

/// Per-class stratified shuffle: for a class of size m, floor(f_train m)
/// nodes go to train, floor(f_val m) to val and the rest to test.
/// Throws InputError unless the fractions are non-negative and sum to 1.
SplitResult standard_split(const LabelVector& labels, const std::array<double, 3>& fractions, std::uint64_t seed);

/// Class-conditioned stochastic block model with Gaussian class means.
struct SynthSpec {
  Index n = 500;
  int classes = 2;
  double p_intra = 0.01;
  double p_inter = 0.05;
  Index feature_dim = 16;
  double feature_separation = 1.0;
  std::uint64_t seed = 0;
};

Dataset gen_synth(const SynthSpec& spec);

}  // namespace inpl

#pragma once

// On-disk layout of a NoisyDataset directory:
//
//   meta.json   format/version, class split, every NoiseSpec field, shapes
//   train.bin   examples of the noisy training set
//   test.bin    clean known-class test examples
//
// Both .bin files share one layout (all integers little-endian):
//
//   8 bytes   magic "CECLDAT1"
//   uint64    row count n
//   uint64    feature dimension d
//   n rows of { d x float64 feature, int32 given, int32 truth, int32 source }
//
// For test.bin, given == truth. truth == c marks an open-set example.
// Features are written as raw IEEE-754 doubles, so a load reproduces the
// saved dataset bit for bit.

#include <filesystem>

#include "cecl/datagen.hpp"

namespace cecl {

inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const NoisyDataset& dataset, const std::filesystem::path& dir);
NoisyDataset load_dataset(const std::filesystem::path& dir);

}  // namespace cecl

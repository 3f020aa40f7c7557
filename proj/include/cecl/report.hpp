#pragma once

// Report rendering for a finished run directory: SVG figures and the CSV
// tables behind them. Every plotted point carries its exact values in
// data-x / data-y attributes, formatted like the CSV cells.

#include <filesystem>
#include <string>
#include <vector>

#include "cecl/types.hpp"

namespace cecl {

// Files a run directory must contain before reports can be emitted.
std::vector<std::string> required_run_artifacts();

// Projection onto the two leading principal axes. Axis signs are fixed so
// the largest-magnitude loading is positive.
Matrix pca_2d(const Matrix& x);

// Writes into <run>/report and returns the written paths. Throws
// MissingArtifactsError listing every absent input.
std::vector<std::filesystem::path> emit_reports(const std::filesystem::path& run_dir);

}  // namespace cecl

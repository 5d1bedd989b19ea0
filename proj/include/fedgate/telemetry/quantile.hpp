#pragma once

#include <span>

namespace fedgate::telemetry {

/// Quantile by linear interpolation between closest ranks: position
/// q * (n - 1) in the sorted sample. `sorted` must be ascending. Returns 0
/// for an empty sample.
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace fedgate::telemetry

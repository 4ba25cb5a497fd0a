#pragma once

#include <cstddef>
#include <vector>

#include "tst/masking.hpp"

namespace tst::testing {

struct Runs {
  std::vector<std::size_t> masked, unmasked;
};

/// Completed runs of one column; runs touching either end are dropped since
/// they are truncated.
Runs column_runs(const NoiseMask& mask, std::size_t col);

double masked_fraction(const NoiseMask& mask, std::size_t col);

/// Asymptotic Kolmogorov survival function with the small-sample correction.
double ks_p_value(double d, std::size_t n);

/// One-sample KS statistic against Geometric(p) on {1, 2, ...}.
double ks_geometric(std::vector<std::size_t> runs, double p);

}  // namespace tst::testing

#pragma once

#include <algorithm>
#include <vector>

#include "pvmap/errors.hpp"

namespace pvmap {

// Linear-interpolation sample quantile: rank q * (n - 1) between order
// statistics.  q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw InternalError("quantile of empty sample");
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = q * static_cast<double>(v.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  if (lo >= v.size() - 1) return v.back();
  double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

}  // namespace pvmap

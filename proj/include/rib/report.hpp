#pragma once

#include <string>
#include <vector>

#include "format.hpp"

namespace rib {

/// One row of a verification report.
struct MetricRow {
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
  double tolerance = 0.0;
  bool pass = true;
};

inline std::string metric_csv(const std::vector<MetricRow>& rows, int digits = 10) {
  std::string out = "metric,value,std_error,tolerance,pass\n";
  for (const auto& r : rows) {
    out += r.metric + "," + fmt_g(r.value, digits) + "," + fmt_g(r.std_error, digits) + "," +
           fmt_g(r.tolerance, digits) + "," + (r.pass ? "pass" : "fail") + "\n";
  }
  return out;
}

}  // namespace rib

#pragma once

#include <string>
#include <vector>

#include "spd/ad.hpp"

namespace spd::eval {

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
};

// Standard counting with the security class (1) as positive. Throws on
// empty or mismatched inputs.
Confusion confusion(const std::vector<int>& predictions, const std::vector<int>& labels);

// A metric value that may be undefined (zero denominator); undefined values
// render as 0.0 with a warning mark.
struct MetricValue {
  double value = 0.0;
  bool defined = true;
};

struct MetricsReport {
  std::string group = "overall";
  Confusion counts;
  MetricValue accuracy, precision, recall, f1, fp_rate;
};

MetricsReport metrics(const Confusion& c, const std::string& group = "overall");

// Linear centered-kernel-alignment similarity between two representation
// matrices with one row per sample: after column-centering,
// |Y'X|_F^2 / (|X'X|_F * |Y'Y|_F). Throws when a centered matrix is
// all-zero or the row counts differ.
double linear_cka(const ad::Mat& X, const ad::Mat& Y);

}  // namespace spd::eval

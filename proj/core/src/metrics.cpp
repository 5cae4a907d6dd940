#include "spd/metrics.hpp"

#include <cmath>

#include "spd/errors.hpp"

namespace spd::eval {

Confusion confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("confusion: prediction/label length mismatch");
  }
  if (predictions.empty()) throw ValidationError("confusion: empty input");
  Confusion c;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw ValidationError("confusion: entries must be 0 or 1");
    }
    if (p == 1 && y == 1) ++c.tp;
    else if (p == 1 && y == 0) ++c.fp;
    else if (p == 0 && y == 0) ++c.tn;
    else ++c.fn;
  }
  return c;
}

namespace {

MetricValue ratio(long num, long den) {
  MetricValue v;
  if (den == 0) {
    v.defined = false;
    v.value = 0.0;
  } else {
    v.value = static_cast<double>(num) / static_cast<double>(den);
  }
  return v;
}

}  // namespace

MetricsReport metrics(const Confusion& c, const std::string& group) {
  MetricsReport r;
  r.group = group;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.fp_rate = ratio(c.fp, c.fp + c.tn);
  if (!r.precision.defined || !r.recall.defined ||
      r.precision.value + r.recall.value == 0.0) {
    r.f1.defined = false;
    r.f1.value = 0.0;
  } else {
    r.f1.value = 2.0 * r.precision.value * r.recall.value /
                 (r.precision.value + r.recall.value);
  }
  return r;
}

double linear_cka(const ad::Mat& X, const ad::Mat& Y) {
  if (X.rows() != Y.rows()) throw ValidationError("linear_cka: row counts differ");
  if (X.rows() < 2) throw ValidationError("linear_cka: need at least two rows");

  ad::Mat Xc = X;
  ad::Mat Yc = Y;
  Xc.rowwise() -= X.colwise().mean();
  Yc.rowwise() -= Y.colwise().mean();

  const double xx = (Xc.transpose() * Xc).norm();
  const double yy = (Yc.transpose() * Yc).norm();
  if (xx == 0.0 || yy == 0.0) {
    throw ValidationError("linear_cka: a centered matrix is all-zero");
  }
  const double cross = (Yc.transpose() * Xc).squaredNorm();
  return cross / (xx * yy);
}

}  // namespace spd::eval

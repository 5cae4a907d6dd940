#include "doctest.h"

#include <Eigen/QR>
#include <cmath>

#include "spd/errors.hpp"
#include "spd/evalreport.hpp"
#include "spd/metrics.hpp"
#include "spd/rng.hpp"
#include "spd/synthgen.hpp"
#include "test_support.hpp"

using namespace spd;
using ad::Mat;
using testsup::random_mat;

namespace {

// Brute-force per-element counting oracle.
eval::Confusion oracle_confusion(const std::vector<int>& p, const std::vector<int>& y) {
  eval::Confusion c;
  for (size_t i = 0; i < p.size(); ++i) {
    if (y[i] == 1) {
      if (p[i] == 1) ++c.tp; else ++c.fn;
    } else {
      if (p[i] == 1) ++c.fp; else ++c.tn;
    }
  }
  return c;
}

Mat random_orthogonal(int n, Rng& rng) {
  Mat a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  return q;
}

}  // namespace

TEST_CASE("confusion matches the counting oracle on the worked example") {
  const std::vector<int> preds = {1, 1, 0, 1, 0, 0, 0};
  const std::vector<int> labels = {1, 0, 0, 1, 1, 0, 1};
  const auto c = eval::confusion(preds, labels);
  const auto o = oracle_confusion(preds, labels);
  CHECK(c.tp == o.tp);
  CHECK(c.fp == o.fp);
  CHECK(c.tn == o.tn);
  CHECK(c.fn == o.fn);
  // Frozen values from the oracle.
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.tn == 2);
  CHECK(c.fn == 2);
}

TEST_CASE("confusion degenerate patterns") {
  const std::vector<int> labels = {1, 0, 1, 1, 0};
  const auto perfect = eval::confusion(labels, labels);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);

  std::vector<int> inverted;
  for (int y : labels) inverted.push_back(1 - y);
  const auto worst = eval::confusion(inverted, labels);
  CHECK(worst.tp == 0);
  CHECK(worst.tn == 0);

  CHECK_THROWS_AS(eval::confusion({}, {}), ValidationError);
  CHECK_THROWS_AS(eval::confusion({1}, {1, 0}), ValidationError);
  CHECK_THROWS_AS(eval::confusion({2}, {1}), ValidationError);
}

TEST_CASE("metrics worked example") {
  eval::Confusion c{3, 1, 4, 2};
  const auto r = eval::metrics(c);
  CHECK(r.accuracy.value == doctest::Approx(0.7));
  CHECK(r.precision.value == doctest::Approx(0.75));
  CHECK(r.recall.value == doctest::Approx(0.6));
  CHECK(r.f1.value == doctest::Approx(2.0 * 0.75 * 0.6 / 1.35));
  CHECK(r.fp_rate.value == doctest::Approx(0.2));
  for (const auto* v : {&r.accuracy, &r.precision, &r.recall, &r.f1, &r.fp_rate}) {
    CHECK(v->defined);
  }
}

TEST_CASE("zero denominators flag metrics undefined, rendered as 0.0") {
  eval::Confusion c{0, 0, 3, 2};  // nothing predicted positive
  const auto r = eval::metrics(c);
  CHECK_FALSE(r.precision.defined);
  CHECK(r.precision.value == 0.0);
  CHECK_FALSE(r.f1.defined);

  eval::Confusion perfect{4, 0, 3, 0};
  const auto p = eval::metrics(perfect);
  CHECK(p.accuracy.value == doctest::Approx(1.0));
  CHECK(p.f1.value == doctest::Approx(1.0));
  CHECK(p.fp_rate.value == doctest::Approx(0.0));

  const std::string table = eval::render_table({r});
  CHECK(table.find("0.000*") != std::string::npos);
  CHECK(table.find("undefined") != std::string::npos);
}

TEST_CASE("metrics match brute force on 1000 random prediction sets") {
  Rng rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.below(200);
    std::vector<int> p(n), y(n);
    for (size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.below(2));
      y[i] = static_cast<int>(rng.below(2));
    }
    const auto c = eval::confusion(p, y);
    const auto o = oracle_confusion(p, y);
    CHECK(c.tp == o.tp);
    CHECK(c.fp == o.fp);
    CHECK(c.tn == o.tn);
    CHECK(c.fn == o.fn);

    const auto r = eval::metrics(c);
    if (r.accuracy.defined) {
      CHECK(r.accuracy.value ==
            doctest::Approx(static_cast<double>(o.tp + o.tn) / static_cast<double>(n)));
    }
    if (r.precision.defined && r.recall.defined &&
        r.precision.value + r.recall.value > 0.0) {
      CHECK(r.f1.value == doctest::Approx(2.0 * r.precision.value * r.recall.value /
                                          (r.precision.value + r.recall.value)));
    }
  }
}

TEST_CASE("table format check reproduces the printed reference values") {
  // Counts chosen so the rendered row shows exactly these three-decimal
  // values: Acc 0.854, F1 0.885, FPR 0.293.
  eval::Confusion c{967, 208, 502, 43};
  const auto r = eval::metrics(c);
  const std::string table = eval::render_table({r});
  CHECK(table.find("0.854") != std::string::npos);
  CHECK(table.find("0.885") != std::string::npos);
  CHECK(table.find("0.293") != std::string::npos);
  CHECK(table.find("0.823") != std::string::npos);  // precision
  CHECK(table.find("0.957") != std::string::npos);  // recall
}

TEST_CASE("linear CKA identity, rotation and scale invariance") {
  Rng rng(31337);
  const Mat x = random_mat(40, 6, rng, -2.0, 2.0);
  CHECK(eval::linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  for (int trial = 0; trial < 200; ++trial) {
    const int n = 10 + static_cast<int>(rng.below(30));
    const int p = 2 + static_cast<int>(rng.below(5));
    const Mat a = random_mat(n, p, rng);
    const Mat r = random_orthogonal(p, rng);
    CHECK(eval::linear_cka(a, a * r) == doctest::Approx(1.0).epsilon(1e-9));

    const Mat b = random_mat(n, p, rng);
    const double base = eval::linear_cka(a, b);
    CHECK(eval::linear_cka(3.7 * a, -0.25 * b) == doctest::Approx(base).epsilon(1e-9));
    CHECK(base >= -1e-9);
    CHECK(base <= 1.0 + 1e-9);
    // Symmetry.
    CHECK(eval::linear_cka(b, a) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("linear CKA agrees with the scalar formula oracle") {
  Rng rng(999);
  Mat x(200, 8), y(200, 8);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      x(i, j) = rng.normal();
      y(i, j) = rng.normal();
    }
  }
  const double got = eval::linear_cka(x, y);
  const double expect = testsup::oracle_linear_cka(testsup::to_vec(x), testsup::to_vec(y));
  CHECK(std::abs(got - expect) < 1e-9);
  CHECK(got < 0.2);  // independent noise has low alignment
}

TEST_CASE("linear CKA error cases") {
  CHECK_THROWS_AS(eval::linear_cka(Mat::Zero(5, 3), Mat::Ones(5, 3)), ValidationError);
  CHECK_THROWS_AS(eval::linear_cka(Mat::Random(4, 3), Mat::Random(5, 3)), ValidationError);
  CHECK_THROWS_AS(eval::linear_cka(Mat::Random(1, 3), Mat::Random(1, 3)), ValidationError);
  // Constant columns center to zero.
  Mat c = Mat::Constant(6, 2, 3.0);
  CHECK_THROWS_AS(eval::linear_cka(c, Mat::Random(6, 2)), ValidationError);
}

TEST_CASE("groupwise evaluation: one shared group equals the overall row") {
  // Samples all share one opt_level, so grouping yields exactly one group
  // whose metrics match the overall row.
  model::ModelConfig mc;
  mc.lm.n_layers = 1;
  mc.lm.d_model = 16;
  mc.lm.n_heads = 2;
  mc.lm.d_ff = 32;
  mc.lm.max_positions = 512;
  mc.lm.max_len = 384;
  mc.graph.dim = 8;
  mc.graph.layers = 1;
  mc.graph.out_dim = 8;
  mc.graph.encoder.dim = 8;
  mc.graph.encoder.buckets = 32;
  auto m = model::JointModel::make(mc, 3);

  synth::GenConfig gc;
  gc.n_samples = 8;
  gc.seed = 12;
  gc.min_blocks = 3;
  gc.max_blocks = 6;
  auto samples = synth::gen_dataset(gc);
  for (auto& s : samples) s.meta.opt_level = "O0";

  const auto out = eval::evaluate(m, samples, data::GroupBy::opt_level);
  REQUIRE(out.groups.size() == 2);  // overall + the single O0 group
  CHECK(out.groups[0].group == "overall");
  CHECK(out.groups[1].group == "O0");
  CHECK(out.groups[0].counts.tp == out.groups[1].counts.tp);
  CHECK(out.groups[0].counts.fp == out.groups[1].counts.fp);
  CHECK(out.groups[0].counts.tn == out.groups[1].counts.tn);
  CHECK(out.groups[0].counts.fn == out.groups[1].counts.fn);
  CHECK(out.groups[0].accuracy.value == out.groups[1].accuracy.value);
  CHECK(out.predictions.size() == samples.size());

  // Branch-representation CKA on the same samples is a valid similarity.
  const double cka = eval::representation_cka(m, samples);
  CHECK(cka >= -1e-9);
  CHECK(cka <= 1.0 + 1e-9);
}

TEST_CASE("report json and prediction dump are deterministic") {
  eval::EvalOutput out;
  out.predictions = {{"a", 0.9, 1, 1}, {"b", 0.2, 0, 0}};
  out.groups = {eval::metrics(eval::Confusion{1, 0, 1, 0}, "overall")};
  const std::string j1 = eval::report_json(out, data::GroupBy::none);
  const std::string j2 = eval::report_json(out, data::GroupBy::none);
  CHECK(j1 == j2);
  const std::string p1 = eval::predictions_jsonl(out.predictions);
  CHECK(p1.find("\"id\":\"a\"") != std::string::npos);
  CHECK(p1.find("\"decision\":1") != std::string::npos);

  const std::string svg = eval::render_svg_bars(out.groups, "accuracy");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("overall") != std::string::npos);
}

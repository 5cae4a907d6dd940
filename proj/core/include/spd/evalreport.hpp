#pragma once

#include <string>
#include <vector>

#include "spd/datamodel.hpp"
#include "spd/metrics.hpp"
#include "spd/model.hpp"

namespace spd::eval {

struct PredictionRow {
  std::string id;
  double score = 0.0;   // p_yes for stage-1 models, sigmoid(z) for stage 2
  int decision = 0;     // score > 0.5; an exact 0.5 counts as negative
  int label = 0;
};

struct EvalOutput {
  std::vector<PredictionRow> predictions;
  std::vector<MetricsReport> groups;   // "overall" first, then group rows
};

// Runs inference over the samples and aggregates per-group metrics.
// Stage-2 checkpoints use the fused classifier; earlier stages score the
// prompt with the plain LM.
EvalOutput evaluate(model::JointModel& m, const std::vector<data::PatchSample>& samples,
                    data::GroupBy group_by);

// Fixed-width plain-text table (three decimals); undefined metrics show as
// 0.000* with a footnote.
std::string render_table(const std::vector<MetricsReport>& rows);

// Machine-readable report; deterministic key order and formatting.
std::string report_json(const EvalOutput& out, data::GroupBy group_by);

// One JSON object per line: {id, score, decision, label}.
std::string predictions_jsonl(const std::vector<PredictionRow>& rows);

// Minimal deterministic SVG bar chart of one metric across groups.
std::string render_svg_bars(const std::vector<MetricsReport>& rows, const std::string& metric);

// Linear CKA between pooled graph-side node encodings and the LM's pooled
// final hidden states over the same samples.
double representation_cka(model::JointModel& m, const std::vector<data::PatchSample>& samples);

std::string group_by_to_string(data::GroupBy g);
data::GroupBy group_by_from_string(const std::string& s);

}  // namespace spd::eval

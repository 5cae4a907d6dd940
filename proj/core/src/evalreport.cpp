#include "spd/evalreport.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "json.hpp"
#include "spd/errors.hpp"

using nlohmann::json;

namespace spd::eval {

std::string group_by_to_string(data::GroupBy g) {
  switch (g) {
    case data::GroupBy::none: return "none";
    case data::GroupBy::opt_level: return "opt_level";
    case data::GroupBy::project: return "project";
    case data::GroupBy::cwe: return "cwe";
  }
  return "none";
}

data::GroupBy group_by_from_string(const std::string& s) {
  if (s == "none") return data::GroupBy::none;
  if (s == "opt_level") return data::GroupBy::opt_level;
  if (s == "project") return data::GroupBy::project;
  if (s == "cwe") return data::GroupBy::cwe;
  throw ValidationError("unknown group key '" + s + "'");
}

EvalOutput evaluate(model::JointModel& m, const std::vector<data::PatchSample>& samples,
                    data::GroupBy group_by) {
  if (samples.empty()) throw ValidationError("evaluate: empty sample list");

  EvalOutput out;
  out.predictions.reserve(samples.size());
  for (const auto& s : samples) {
    PredictionRow row;
    row.id = s.id;
    row.label = s.label;
    if (m.stage >= 2) {
      const double z = model::fused_logit_value(m, s);
      row.score = 1.0 / (1.0 + std::exp(-z));
    } else {
      row.score = model::llm_score(m, s).p_yes;
    }
    row.decision = row.score > 0.5 ? 1 : 0;
    out.predictions.push_back(std::move(row));
  }

  auto keys_of = [&](const data::PatchSample& s) -> std::vector<std::string> {
    switch (group_by) {
      case data::GroupBy::none: return {};
      case data::GroupBy::opt_level: return {s.meta.opt_level};
      case data::GroupBy::project: return {s.meta.project};
      case data::GroupBy::cwe:
        if (s.meta.cwe.empty()) return {"(none)"};
        return s.meta.cwe;
    }
    return {};
  };

  std::vector<int> all_preds, all_labels;
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> per_group;
  for (size_t i = 0; i < samples.size(); ++i) {
    all_preds.push_back(out.predictions[i].decision);
    all_labels.push_back(out.predictions[i].label);
    for (const auto& key : keys_of(samples[i])) {
      per_group[key].first.push_back(out.predictions[i].decision);
      per_group[key].second.push_back(out.predictions[i].label);
    }
  }
  out.groups.push_back(metrics(confusion(all_preds, all_labels), "overall"));
  for (const auto& [key, pl] : per_group) {
    out.groups.push_back(metrics(confusion(pl.first, pl.second), key));
  }
  return out;
}

namespace {

std::string fmt_metric(const MetricValue& v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f%s", v.value, v.defined ? " " : "*");
  return buf;
}

double metric_by_name(const MetricsReport& r, const std::string& name) {
  if (name == "accuracy") return r.accuracy.value;
  if (name == "precision") return r.precision.value;
  if (name == "recall") return r.recall.value;
  if (name == "f1") return r.f1.value;
  if (name == "fp_rate") return r.fp_rate.value;
  throw ValidationError("unknown metric '" + name + "'");
}

}  // namespace

std::string render_table(const std::vector<MetricsReport>& rows) {
  std::ostringstream out;
  size_t gw = 7;
  for (const auto& r : rows) gw = std::max(gw, r.group.size());
  out << std::string(gw - 5, ' ') << "group      n    Acc     Pre     Rec     F1      FPR\n";
  bool any_undefined = false;
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%*s %6ld  ", static_cast<int>(gw), r.group.c_str(),
                  r.counts.total());
    out << buf << fmt_metric(r.accuracy) << "  " << fmt_metric(r.precision) << "  "
        << fmt_metric(r.recall) << "  " << fmt_metric(r.f1) << "  " << fmt_metric(r.fp_rate)
        << "\n";
    any_undefined = any_undefined || !r.accuracy.defined || !r.precision.defined ||
                    !r.recall.defined || !r.f1.defined || !r.fp_rate.defined;
  }
  if (any_undefined) {
    out << "* undefined metric (zero denominator), shown as 0.0\n";
  }
  return out.str();
}

std::string report_json(const EvalOutput& out, data::GroupBy group_by) {
  json j;
  j["group_by"] = group_by_to_string(group_by);
  j["n_samples"] = out.predictions.size();
  json groups = json::array();
  for (const auto& r : out.groups) {
    json g;
    g["group"] = r.group;
    g["tp"] = r.counts.tp;
    g["fp"] = r.counts.fp;
    g["tn"] = r.counts.tn;
    g["fn"] = r.counts.fn;
    auto put = [&g](const char* name, const MetricValue& v) {
      g[name] = v.value;
      g[std::string(name) + "_defined"] = v.defined;
    };
    put("accuracy", r.accuracy);
    put("precision", r.precision);
    put("recall", r.recall);
    put("f1", r.f1);
    put("fp_rate", r.fp_rate);
    groups.push_back(std::move(g));
  }
  j["groups"] = std::move(groups);
  return j.dump(2) + "\n";
}

std::string predictions_jsonl(const std::vector<PredictionRow>& rows) {
  std::ostringstream out;
  for (const auto& r : rows) {
    json j;
    j["id"] = r.id;
    j["score"] = r.score;
    j["decision"] = r.decision;
    j["label"] = r.label;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::string render_svg_bars(const std::vector<MetricsReport>& rows, const std::string& metric) {
  const int bar_w = 48, gap = 16, h = 240, base = 200, left = 40;
  const int width = left + static_cast<int>(rows.size()) * (bar_w + gap) + gap;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << h
      << "\">\n";
  out << "<text x=\"4\" y=\"16\" font-size=\"12\">" << metric << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << base << "\" x2=\"" << width - gap << "\" y2=\""
      << base << "\" stroke=\"black\"/>\n";
  int x = left + gap;
  for (const auto& r : rows) {
    const double v = metric_by_name(r, metric);
    const int bh = static_cast<int>(std::lround(v * 160.0));
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"#4477aa\"/>\n"
                  "<text x=\"%d\" y=\"%d\" font-size=\"10\">%s</text>\n"
                  "<text x=\"%d\" y=\"%d\" font-size=\"10\">%.3f</text>\n",
                  x, base - bh, bar_w, bh, x, base + 14, r.group.c_str(), x, base - bh - 4,
                  v);
    out << buf;
    x += bar_w + gap;
  }
  out << "</svg>\n";
  return out.str();
}

double representation_cka(model::JointModel& m, const std::vector<data::PatchSample>& samples) {
  if (samples.size() < 2) throw ValidationError("representation_cka: need at least two samples");
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  ad::Mat X(n, m.cfg.graph.dim);
  ad::Mat Y(n, m.cfg.lm.d_model);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) = model::graph_pooled_encoding(m, samples[static_cast<size_t>(i)]);
    Y.row(i) = model::llm_pooled_hidden(m, samples[static_cast<size_t>(i)]);
  }
  return linear_cka(X, Y);
}

}  // namespace spd::eval

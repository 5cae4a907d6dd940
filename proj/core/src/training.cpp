#include "spd/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "spd/errors.hpp"
#include "spd/rng.hpp"

namespace spd::train {

ParamPartition partition(model::JointModel& m) {
  ParamPartition p;
  p.llm = m.llm_parameters();
  p.graph = m.graph_parameters();
  return p;
}

double bce_loss(double z, int y) {
  const double softplus_neg = std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0);
  return softplus_neg + (1.0 - static_cast<double>(y)) * z;
}

namespace {

constexpr double kClipNorm = 1.0;

std::vector<ad::Mat> snapshot(const std::vector<ad::Parameter*>& params) {
  std::vector<ad::Mat> vals;
  vals.reserve(params.size());
  for (const ad::Parameter* p : params) vals.push_back(p->value);
  return vals;
}

void restore(const std::vector<ad::Parameter*>& params, const std::vector<ad::Mat>& vals) {
  for (size_t i = 0; i < params.size(); ++i) params[i]->value = vals[i];
}

// Per-sample loss builders for the two stages.
ad::Var stage1_sample_loss(ad::Graph& g, model::JointModel& m, const data::PatchSample& s) {
  const std::vector<int> ids = lm::tokenize(lm::build_prompt(s), m.cfg.lm.max_len);
  ad::Var hidden = lm::forward_hidden(g, m.lm, ids);
  ad::Var logits = lm::logits_from_hidden(g, m.lm, hidden);
  return g.cross_entropy(logits, lm::answer_targets(ids.size(), s.label), lm::kPad);
}

ad::Var stage2_sample_loss(ad::Graph& g, model::JointModel& m, const data::PatchSample& s) {
  ad::Var z = model::fused_logit(g, m, s);
  return g.bce_with_logits(z, static_cast<double>(s.label));
}

struct StageHooks {
  // Builds the tape loss for one sample.
  ad::Var (*sample_loss)(ad::Graph&, model::JointModel&, const data::PatchSample&);
  // Validation metrics at the current parameters.
  double (*val_loss)(model::JointModel&, const data::PatchSample&);
  bool (*val_correct)(model::JointModel&, const data::PatchSample&);
};

double stage1_val_loss(model::JointModel& m, const data::PatchSample& s) {
  ad::Graph g;
  return stage1_sample_loss(g, m, s).scalar();
}

bool stage1_val_correct(model::JointModel& m, const data::PatchSample& s) {
  const lm::YesNoScore score = model::llm_score(m, s);
  return (score.yes ? 1 : 0) == s.label;
}

double stage2_val_loss(model::JointModel& m, const data::PatchSample& s) {
  return bce_loss(model::fused_logit_value(m, s), s.label);
}

bool stage2_val_correct(model::JointModel& m, const data::PatchSample& s) {
  const double p = 1.0 / (1.0 + std::exp(-model::fused_logit_value(m, s)));
  return ((p > 0.5) ? 1 : 0) == s.label;
}

TrainResult run_stage(model::JointModel& m, const std::vector<data::PatchSample>& train_set,
                      const std::vector<data::PatchSample>& val_set,
                      const std::vector<ad::Parameter*>& trainables, const StageConfig& stage,
                      uint64_t seed, const char* tag, const StageHooks& hooks, bool quiet) {
  if (train_set.empty() || val_set.empty()) {
    throw ValidationError(std::string(tag) + ": train and validation sets must be non-empty");
  }

  ad::AdamW opt(trainables, stage.lr);
  Rng order_rng = Rng(seed).derive(std::string(tag) + ":order");

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<ad::Mat> best_params = snapshot(trainables);
  int since_best = 0;

  for (int epoch = 0; epoch < stage.epochs; ++epoch) {
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    double epoch_loss = 0.0;
    size_t n_batches = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(stage.batch)) {
      const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(stage.batch));
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      opt.zero_grad();
      double batch_loss = 0.0;
      for (size_t i = b0; i < b1; ++i) {
        ad::Graph g;
        ad::Var loss = hooks.sample_loss(g, m, train_set[order[i]]);
        batch_loss += loss.scalar() * inv;
        g.backward(g.scale(loss, inv));
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergence(std::string(tag) + ": non-finite loss " +
                                 std::to_string(batch_loss) + " at epoch " +
                                 std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(n_batches + 1));
      }
      ad::clip_grad_norm(trainables, kClipNorm);
      opt.step();
      epoch_loss += batch_loss;
      ++n_batches;
    }
    epoch_loss /= static_cast<double>(n_batches);

    double val_loss = 0.0;
    size_t correct = 0;
    for (const auto& s : val_set) {
      val_loss += hooks.val_loss(m, s);
      if (hooks.val_correct(m, s)) ++correct;
    }
    val_loss /= static_cast<double>(val_set.size());
    const double val_acc = static_cast<double>(correct) / static_cast<double>(val_set.size());

    EpochLog log;
    log.epoch = epoch + 1;
    log.train_loss = epoch_loss;
    log.val_loss = val_loss;
    log.val_accuracy = val_acc;
    result.log.push_back(log);
    if (!quiet) {
      std::fprintf(stderr, "[%s] epoch %d/%d train_loss=%.6f val_loss=%.6f val_acc=%.4f\n", tag,
                   epoch + 1, stage.epochs, epoch_loss, val_loss, val_acc);
    }

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch + 1;
      best_params = snapshot(trainables);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= stage.patience) break;
    }
  }

  restore(trainables, best_params);
  return result;
}

}  // namespace

TrainResult train_stage1(model::JointModel& m, const std::vector<data::PatchSample>& train_set,
                         const std::vector<data::PatchSample>& val_set, const TrainConfig& cfg,
                         bool quiet) {
  cfg.validate();
  StageHooks hooks{&stage1_sample_loss, &stage1_val_loss, &stage1_val_correct};
  std::vector<ad::Parameter*> trainables = m.lm.trainable_parameters();
  TrainResult r =
      run_stage(m, train_set, val_set, trainables, cfg.stage1, cfg.seed, "stage1", hooks, quiet);
  m.stage = 1;
  return r;
}

TrainResult train_stage2(model::JointModel& m, const std::vector<data::PatchSample>& train_set,
                         const std::vector<data::PatchSample>& val_set, const TrainConfig& cfg,
                         bool quiet) {
  cfg.validate();
  StageHooks hooks{&stage2_sample_loss, &stage2_val_loss, &stage2_val_correct};
  std::vector<ad::Parameter*> trainables = m.graph_parameters();
  TrainResult r =
      run_stage(m, train_set, val_set, trainables, cfg.stage2, cfg.seed, "stage2", hooks, quiet);
  m.stage = 2;
  return r;
}

JointDiagnostics train_joint_ablation(model::JointModel& m,
                                      const std::vector<data::PatchSample>& train_set,
                                      const std::vector<data::PatchSample>& val_set,
                                      const TrainConfig& cfg, bool quiet) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) {
    throw ValidationError("joint: train and validation sets must be non-empty");
  }
  std::vector<ad::Parameter*> llm_params = m.lm.trainable_parameters();
  std::vector<ad::Parameter*> graph_params = m.graph_parameters();
  std::vector<ad::Parameter*> all;
  all.insert(all.end(), llm_params.begin(), llm_params.end());
  all.insert(all.end(), graph_params.begin(), graph_params.end());

  ad::AdamW opt(all, cfg.stage2.lr);
  Rng order_rng = Rng(cfg.seed).derive("joint:order");
  JointDiagnostics diag;

  auto combined_loss = [&](ad::Graph& g, const data::PatchSample& s) {
    return g.add(stage1_sample_loss(g, m, s), stage2_sample_loss(g, m, s));
  };

  for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
    std::vector<size_t> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);

    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.stage2.batch)) {
      const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.stage2.batch));
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      opt.zero_grad();
      for (size_t i = b0; i < b1; ++i) {
        ad::Graph g;
        g.backward(g.scale(combined_loss(g, train_set[order[i]]), inv));
      }
      ad::clip_grad_norm(all, kClipNorm);
      opt.step();
    }

    // Gradient-direction diagnostic: cosine between the CE- and BCE-induced
    // gradients over all trainables, probed on the first batch.
    const size_t probe = std::min(train_set.size(), static_cast<size_t>(cfg.stage2.batch));
    opt.zero_grad();
    for (size_t i = 0; i < probe; ++i) {
      ad::Graph g;
      g.backward(stage1_sample_loss(g, m, train_set[i]));
    }
    std::vector<ad::Mat> ce_grads;
    ce_grads.reserve(all.size());
    for (ad::Parameter* p : all) ce_grads.push_back(p->grad);
    opt.zero_grad();
    for (size_t i = 0; i < probe; ++i) {
      ad::Graph g;
      g.backward(stage2_sample_loss(g, m, train_set[i]));
    }
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (size_t i = 0; i < all.size(); ++i) {
      dot += (ce_grads[i].array() * all[i]->grad.array()).sum();
      n1 += ce_grads[i].squaredNorm();
      n2 += all[i]->grad.squaredNorm();
    }
    opt.zero_grad();
    const double cosine = (n1 > 0.0 && n2 > 0.0) ? dot / std::sqrt(n1 * n2) : 0.0;

    double val_loss = 0.0;
    for (const auto& s : val_set) {
      val_loss += stage2_val_loss(m, s) + stage1_val_loss(m, s);
    }
    val_loss /= static_cast<double>(val_set.size());

    diag.val_losses.push_back(val_loss);
    diag.grad_cosines.push_back(cosine);
    if (!quiet) {
      std::fprintf(stderr, "[joint] epoch %d/%d val_loss=%.6f grad_cosine=%.3e\n", epoch + 1,
                   cfg.stage2.epochs, val_loss, cosine);
    }
  }
  return diag;
}

void holdout_split(const std::vector<data::PatchSample>& all, double val_fraction, uint64_t seed,
                   std::vector<data::PatchSample>* train_out,
                   std::vector<data::PatchSample>* val_out) {
  if (all.size() < 2) throw ValidationError("holdout_split: need at least two samples");
  std::vector<size_t> order(all.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = Rng(seed).derive("holdout");
  rng.shuffle(order);
  size_t n_val = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(all.size())));
  n_val = std::max<size_t>(1, std::min(n_val, all.size() - 1));
  train_out->clear();
  val_out->clear();
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < all.size() - n_val) {
      train_out->push_back(all[order[i]]);
    } else {
      val_out->push_back(all[order[i]]);
    }
  }
}

}  // namespace spd::train

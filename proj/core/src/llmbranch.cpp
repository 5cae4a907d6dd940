#include "spd/llmbranch.hpp"

#include <cmath>

#include "spd/errors.hpp"

namespace spd::lm {

namespace {

constexpr const char* kInstruction =
    "### Instruction: Determine whether the change from the pre-patch function to the "
    "post-patch function fixes a security vulnerability. Answer yes or no.\n";
constexpr const char* kPreMarker = "### Pre:\n";
constexpr const char* kPostMarker = "\n### Post:\n";
constexpr const char* kAnswerMarker = "\n### Answer:";

constexpr double kMaskValue = -1e30;

ad::Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  ad::Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace

std::string build_prompt(const data::PatchSample& sample) {
  std::string out;
  out.reserve(256 + sample.pre_pseudo.size() + sample.post_pseudo.size());
  out += kInstruction;
  out += kPreMarker;
  out += sample.pre_pseudo;
  out += kPostMarker;
  out += sample.post_pseudo;
  out += kAnswerMarker;
  return out;
}

size_t count_text_tokens(const std::string& text) { return text.size(); }

std::vector<int> tokenize(const std::string& text, int max_len) {
  if (max_len < 8) throw ValidationError("tokenize: max_len must be at least 8");
  const size_t budget = static_cast<size_t>(max_len) - 2;  // room for BOS/EOS

  std::string payload = text;
  if (payload.size() > budget) {
    // Template-aware truncation: keep the scaffolding, shrink the two code
    // sections proportionally, keeping their leading bytes.
    const size_t pre_start = payload.find(kPreMarker);
    size_t post_marker = std::string::npos;
    if (pre_start != std::string::npos) {
      post_marker = payload.find(kPostMarker, pre_start + std::strlen(kPreMarker));
    }
    const std::string answer(kAnswerMarker);
    const bool ends_with_answer =
        payload.size() >= answer.size() &&
        payload.compare(payload.size() - answer.size(), answer.size(), answer) == 0;

    if (pre_start != std::string::npos && post_marker != std::string::npos && ends_with_answer) {
      const size_t pre_begin = pre_start + std::strlen(kPreMarker);
      const size_t post_begin = post_marker + std::strlen(kPostMarker);
      const size_t post_end = payload.size() - answer.size();
      const std::string head = payload.substr(0, pre_begin);
      const std::string pre_code = payload.substr(pre_begin, post_marker - pre_begin);
      const std::string post_code = payload.substr(post_begin, post_end - post_begin);
      const size_t scaffold = head.size() + std::strlen(kPostMarker) + answer.size();
      if (scaffold > budget) {
        throw ValidationError("tokenize: max_len too small to hold the template scaffolding");
      }
      const size_t code_budget = budget - scaffold;
      const size_t total_code = pre_code.size() + post_code.size();
      size_t keep_pre = pre_code.size(), keep_post = post_code.size();
      if (total_code > code_budget) {
        keep_pre = code_budget * pre_code.size() / total_code;
        keep_post = code_budget - keep_pre;
        if (keep_post > post_code.size()) {
          keep_post = post_code.size();
          keep_pre = code_budget - keep_post;
        }
        if (keep_pre > pre_code.size()) {
          keep_pre = pre_code.size();
          keep_post = code_budget - keep_pre;
        }
      }
      payload = head + pre_code.substr(0, keep_pre) + kPostMarker +
                post_code.substr(0, keep_post) + answer;
    } else {
      payload = payload.substr(0, budget);
    }
  }

  std::vector<int> ids;
  ids.reserve(payload.size() + 2);
  ids.push_back(kBos);
  for (unsigned char c : payload) ids.push_back(static_cast<int>(c));
  ids.push_back(kEos);
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
  }
  return out;
}

MiniLm MiniLm::make(const MiniLmConfig& cfg, Rng& rng) {
  if (cfg.d_model % cfg.n_heads != 0) {
    throw ValidationError("minilm: d_model must be divisible by n_heads");
  }
  MiniLm m;
  m.cfg = cfg;
  const int d = cfg.d_model;
  const double bd = 1.0 / std::sqrt(static_cast<double>(d));
  const double bff = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));

  m.tok_emb = ad::Parameter("lm.tok_emb", uniform_init(kVocabSize, d, bd, rng));
  m.pos_emb = ad::Parameter("lm.pos_emb", uniform_init(cfg.max_positions, d, bd, rng));

  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "lm.layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_g = ad::Parameter(p + "ln1.g", ad::Mat::Ones(1, d));
    lp.ln1_b = ad::Parameter(p + "ln1.b", ad::Mat::Zero(1, d));
    lp.attn.wq = ad::Parameter(p + "attn.wq", uniform_init(d, d, bd, rng));
    lp.attn.bq = ad::Parameter(p + "attn.bq", ad::Mat::Zero(1, d));
    lp.attn.wk = ad::Parameter(p + "attn.wk", uniform_init(d, d, bd, rng));
    lp.attn.bk = ad::Parameter(p + "attn.bk", ad::Mat::Zero(1, d));
    lp.attn.wv = ad::Parameter(p + "attn.wv", uniform_init(d, d, bd, rng));
    lp.attn.bv = ad::Parameter(p + "attn.bv", ad::Mat::Zero(1, d));
    lp.attn.wo = ad::Parameter(p + "attn.wo", uniform_init(d, d, bd, rng));
    lp.attn.bo = ad::Parameter(p + "attn.bo", ad::Mat::Zero(1, d));
    if (cfg.lora) {
      lp.attn.has_lora = true;
      const int r = cfg.lora_rank;
      lp.attn.lora_aq = ad::Parameter(p + "attn.lora_aq", uniform_init(d, r, bd, rng));
      lp.attn.lora_bq = ad::Parameter(p + "attn.lora_bq", ad::Mat::Zero(r, d));
      lp.attn.lora_ak = ad::Parameter(p + "attn.lora_ak", uniform_init(d, r, bd, rng));
      lp.attn.lora_bk = ad::Parameter(p + "attn.lora_bk", ad::Mat::Zero(r, d));
      lp.attn.lora_av = ad::Parameter(p + "attn.lora_av", uniform_init(d, r, bd, rng));
      lp.attn.lora_bv = ad::Parameter(p + "attn.lora_bv", ad::Mat::Zero(r, d));
      lp.attn.lora_ao = ad::Parameter(p + "attn.lora_ao", uniform_init(d, r, bd, rng));
      lp.attn.lora_bo = ad::Parameter(p + "attn.lora_bo", ad::Mat::Zero(r, d));
    }
    lp.ln2_g = ad::Parameter(p + "ln2.g", ad::Mat::Ones(1, d));
    lp.ln2_b = ad::Parameter(p + "ln2.b", ad::Mat::Zero(1, d));
    lp.ffn_w1 = ad::Parameter(p + "ffn.w1", uniform_init(d, cfg.d_ff, bd, rng));
    lp.ffn_b1 = ad::Parameter(p + "ffn.b1", ad::Mat::Zero(1, cfg.d_ff));
    lp.ffn_w2 = ad::Parameter(p + "ffn.w2", uniform_init(cfg.d_ff, d, bff, rng));
    lp.ffn_b2 = ad::Parameter(p + "ffn.b2", ad::Mat::Zero(1, d));
    m.layers.push_back(std::move(lp));
  }

  m.lnf_g = ad::Parameter("lm.lnf.g", ad::Mat::Ones(1, d));
  m.lnf_b = ad::Parameter("lm.lnf.b", ad::Mat::Zero(1, d));
  m.out_w = ad::Parameter("lm.out.w", uniform_init(d, kVocabSize, bd, rng));
  m.out_b = ad::Parameter("lm.out.b", ad::Mat::Zero(1, kVocabSize));
  return m;
}

std::vector<ad::Parameter*> MiniLm::parameters() {
  std::vector<ad::Parameter*> ps = {&tok_emb, &pos_emb};
  for (auto& l : layers) {
    ps.push_back(&l.ln1_g);
    ps.push_back(&l.ln1_b);
    auto& a = l.attn;
    for (ad::Parameter* p : {&a.wq, &a.bq, &a.wk, &a.bk, &a.wv, &a.bv, &a.wo, &a.bo}) {
      ps.push_back(p);
    }
    if (a.has_lora) {
      for (ad::Parameter* p : {&a.lora_aq, &a.lora_bq, &a.lora_ak, &a.lora_bk, &a.lora_av,
                               &a.lora_bv, &a.lora_ao, &a.lora_bo}) {
        ps.push_back(p);
      }
    }
    ps.push_back(&l.ln2_g);
    ps.push_back(&l.ln2_b);
    ps.push_back(&l.ffn_w1);
    ps.push_back(&l.ffn_b1);
    ps.push_back(&l.ffn_w2);
    ps.push_back(&l.ffn_b2);
  }
  ps.push_back(&lnf_g);
  ps.push_back(&lnf_b);
  ps.push_back(&out_w);
  ps.push_back(&out_b);
  return ps;
}

std::vector<ad::Parameter*> MiniLm::trainable_parameters() {
  if (!cfg.lora) return parameters();
  std::vector<ad::Parameter*> ps;
  for (auto& l : layers) {
    auto& a = l.attn;
    for (ad::Parameter* p : {&a.lora_aq, &a.lora_bq, &a.lora_ak, &a.lora_bk, &a.lora_av,
                             &a.lora_bv, &a.lora_ao, &a.lora_bo}) {
      ps.push_back(p);
    }
  }
  return ps;
}

namespace {

// x * W (+ x * A * B with LoRA) + b
ad::Var project(ad::Graph& g, ad::Var x, ad::Parameter& w, ad::Parameter& b,
                ad::Parameter* lora_a, ad::Parameter* lora_b) {
  ad::Var y = g.matmul(x, g.param(w));
  if (lora_a) {
    y = g.add(y, g.matmul(g.matmul(x, g.param(*lora_a)), g.param(*lora_b)));
  }
  return g.add_rowvec(y, g.param(b));
}

// Additive attention mask: causal over the token keys, with an optional
// graph slot in column 0 that is visible to every query unless masked out.
ad::Mat attention_mask(Eigen::Index q_len, bool with_slot, bool slot_masked) {
  const Eigen::Index k_len = q_len + (with_slot ? 1 : 0);
  ad::Mat mask = ad::Mat::Zero(q_len, k_len);
  const Eigen::Index off = with_slot ? 1 : 0;
  for (Eigen::Index i = 0; i < q_len; ++i) {
    for (Eigen::Index j = i + 1; j < q_len; ++j) mask(i, off + j) = kMaskValue;
    if (with_slot && slot_masked) mask(i, 0) = kMaskValue;
  }
  return mask;
}

}  // namespace

ad::Var forward_hidden(ad::Graph& g, MiniLm& m, const std::vector<int>& ids,
                       const FusionContext* fusion_ctx, LlmHiddenStates* hooks) {
  if (ids.empty()) throw ValidationError("forward: empty input");
  if (static_cast<int>(ids.size()) > m.cfg.max_positions) {
    throw ValidationError("forward: input length " + std::to_string(ids.size()) +
                          " exceeds max positions " + std::to_string(m.cfg.max_positions));
  }
  const Eigen::Index L = static_cast<Eigen::Index>(ids.size());
  const int n_heads = m.cfg.n_heads;
  const int dh = m.cfg.d_model / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);

  ad::Var x = g.add(g.gather_rows(g.param(m.tok_emb), ids),
                    g.gather_rows(g.param(m.pos_emb), positions));

  const bool fusing = fusion_ctx && fusion_ctx->vars && fusion_ctx->options;

  for (int l = 0; l < m.cfg.n_layers; ++l) {
    LayerParams& lp = m.layers[static_cast<size_t>(l)];
    ad::Var a_in = g.layer_norm_rows(x, g.param(lp.ln1_g), g.param(lp.ln1_b));

    auto* la = lp.attn.has_lora ? &lp.attn : nullptr;
    ad::Var q = project(g, a_in, lp.attn.wq, lp.attn.bq, la ? &la->lora_aq : nullptr,
                        la ? &la->lora_bq : nullptr);
    ad::Var k = project(g, a_in, lp.attn.wk, lp.attn.bk, la ? &la->lora_ak : nullptr,
                        la ? &la->lora_bk : nullptr);
    ad::Var v = project(g, a_in, lp.attn.wv, lp.attn.bv, la ? &la->lora_av : nullptr,
                        la ? &la->lora_bv : nullptr);

    if (hooks) {
      hooks->q.push_back(q.value());
      hooks->k.push_back(k.value());
      hooks->v.push_back(v.value());
    }

    const bool layer_fused = fusing && fusion_ctx->options->applies_to_layer(l);
    bool slot_masked = false;
    if (layer_fused) {
      fusion::AttentionState st = fusion::fuse_qkv(g, q, k, v, *fusion_ctx->vars);
      slot_masked = fusion_ctx->options->slot_masked(fusion_ctx->vars->gate_mean);
      q = st.q_fusion;
      k = st.k_fusion;
      v = st.v_fusion;
    }

    const ad::Mat mask = attention_mask(L, layer_fused, slot_masked);

    ad::Var ctx;
    for (int h = 0; h < n_heads; ++h) {
      ad::Var qh = g.slice_cols(q, h * dh, dh);
      ad::Var kh = g.slice_cols(k, h * dh, dh);
      ad::Var vh = g.slice_cols(v, h * dh, dh);
      ad::Var scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt_dh);
      ad::Var weights = g.softmax_rows(scores, &mask);
      ad::Var oh = g.matmul(weights, vh);
      ctx = (h == 0) ? oh : g.concat_cols(ctx, oh);
    }
    ad::Var attn_out = g.add_rowvec(g.matmul(ctx, g.param(lp.attn.wo)), g.param(lp.attn.bo));
    if (la) {
      attn_out = g.add(attn_out, g.matmul(g.matmul(ctx, g.param(la->lora_ao)),
                                          g.param(la->lora_bo)));
    }
    x = g.add(x, attn_out);

    ad::Var f_in = g.layer_norm_rows(x, g.param(lp.ln2_g), g.param(lp.ln2_b));
    ad::Var f_mid = g.relu(g.add_rowvec(g.matmul(f_in, g.param(lp.ffn_w1)), g.param(lp.ffn_b1)));
    ad::Var f_out = g.add_rowvec(g.matmul(f_mid, g.param(lp.ffn_w2)), g.param(lp.ffn_b2));
    x = g.add(x, f_out);
  }

  ad::Var hidden = g.layer_norm_rows(x, g.param(m.lnf_g), g.param(m.lnf_b));
  if (hooks) hooks->f_llm = hidden.value();
  return hidden;
}

ad::Var logits_from_hidden(ad::Graph& g, MiniLm& m, ad::Var hidden) {
  return g.add_rowvec(g.matmul(hidden, g.param(m.out_w)), g.param(m.out_b));
}

ad::Mat forward(MiniLm& m, const std::vector<int>& ids, const fusion::FusionVectors* fv,
                const fusion::FusionOptions* options, LlmHiddenStates* hooks) {
  ad::Graph g;
  fusion::FusionOptions default_options;
  FusionContext ctx;
  fusion::FusionVars vars;
  const FusionContext* ctx_ptr = nullptr;
  if (fv) {
    vars = fusion::to_vars(g, *fv);
    ctx.vars = &vars;
    ctx.options = options ? options : &default_options;
    ctx_ptr = &ctx;
  }
  ad::Var hidden = forward_hidden(g, m, ids, ctx_ptr, hooks);
  return logits_from_hidden(g, m, hidden).value();
}

YesNoScore score_yes_no(MiniLm& m, const std::vector<int>& prompt_ids,
                        const fusion::FusionVectors* fv, const fusion::FusionOptions* options) {
  const ad::Mat logits = forward(m, prompt_ids, fv, options);
  const Eigen::Index last = logits.rows() - 1;
  const double ly = logits(last, kYes);
  const double ln = logits(last, kNo);
  const double mx = std::max(ly, ln);
  const double ey = std::exp(ly - mx);
  const double en = std::exp(ln - mx);
  YesNoScore s;
  s.p_yes = ey / (ey + en);
  s.yes = s.p_yes > 0.5;
  return s;
}

double ce_loss(const ad::Mat& logits, const std::vector<int>& targets) {
  ad::Graph g;
  ad::Var l = g.input(logits);
  return g.cross_entropy(l, targets, kPad).scalar();
}

std::vector<int> answer_targets(size_t seq_len, int label) {
  std::vector<int> t(seq_len, kPad);
  if (!t.empty()) t.back() = (label == 1) ? kYes : kNo;
  return t;
}

}  // namespace spd::lm

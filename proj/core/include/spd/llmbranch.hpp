#pragma once

#include <string>
#include <vector>

#include "spd/ad.hpp"
#include "spd/datamodel.hpp"
#include "spd/fusion.hpp"
#include "spd/rng.hpp"

namespace spd::lm {

// Byte-level vocabulary: 256 byte values plus five special tokens.
constexpr int kBos = 256;
constexpr int kEos = 257;
constexpr int kPad = 258;
constexpr int kYes = 259;
constexpr int kNo = 260;
constexpr int kVocabSize = 261;

// Exact instruction template wrapping the pre/post pseudo-code. The code is
// placed verbatim; no escaping.
std::string build_prompt(const data::PatchSample& sample);

// BOS + byte ids + EOS. Over-budget prompts shaped like build_prompt() keep
// the full template scaffolding; the Pre and Post code sections are cut to
// their leading bytes, shrunk proportionally to their lengths. Text without
// the template markers is tail-truncated. max_len must be >= 8; a template
// whose scaffolding alone exceeds the budget is an error.
std::vector<int> tokenize(const std::string& text, int max_len);

// Inverse of tokenize on the byte payload; special tokens are dropped.
std::string detokenize(const std::vector<int>& ids);

// Token count of raw text under this tokenizer (one token per byte).
size_t count_text_tokens(const std::string& text);

struct MiniLmConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int max_positions = 1024;
  int max_len = 1024;          // tokenizer budget used by the pipelines
  bool lora = false;           // stage-1 trains only the low-rank factors
  int lora_rank = 8;
};

// One attention block's projections, optionally with low-rank adapter
// factors (delta W = A * B, B zero-initialised).
struct AttentionParams {
  ad::Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Parameter lora_aq, lora_bq, lora_ak, lora_bk, lora_av, lora_bv, lora_ao, lora_bo;
  bool has_lora = false;
};

struct LayerParams {
  ad::Parameter ln1_g, ln1_b;
  AttentionParams attn;
  ad::Parameter ln2_g, ln2_b;
  ad::Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Miniature pre-norm causal transformer with learned absolute position
// embeddings and an untied output head.
struct MiniLm {
  MiniLmConfig cfg;
  ad::Parameter tok_emb;   // vocab x d_model
  ad::Parameter pos_emb;   // max_positions x d_model
  std::vector<LayerParams> layers;
  ad::Parameter lnf_g, lnf_b;
  ad::Parameter out_w, out_b;  // d_model x vocab, 1 x vocab

  static MiniLm make(const MiniLmConfig& cfg, Rng& rng);
  std::vector<ad::Parameter*> parameters();
  // Stage-1 trainables: everything, or just the LoRA factors in lora mode.
  std::vector<ad::Parameter*> trainable_parameters();
};

// Captured per-layer attention inputs (the model's own Q/K/V before any
// fusion) plus the final hidden states.
struct LlmHiddenStates {
  std::vector<ad::Mat> q, k, v;   // one L x d_model matrix per layer
  ad::Mat f_llm;                  // L x d_model
};

struct FusionContext {
  const fusion::FusionVars* vars = nullptr;
  const fusion::FusionOptions* options = nullptr;
};

// Tape-level forward. Returns the final hidden states (L x d_model); use
// logits_from_hidden for the next-token distribution. `fusion_ctx` may be
// null for the plain pipeline.
ad::Var forward_hidden(ad::Graph& g, MiniLm& m, const std::vector<int>& ids,
                       const FusionContext* fusion_ctx = nullptr,
                       LlmHiddenStates* hooks = nullptr);
ad::Var logits_from_hidden(ad::Graph& g, MiniLm& m, ad::Var hidden);

// Value-level forward pass; returns next-token logits for every position.
ad::Mat forward(MiniLm& m, const std::vector<int>& ids,
                const fusion::FusionVectors* fv = nullptr,
                const fusion::FusionOptions* options = nullptr,
                LlmHiddenStates* hooks = nullptr);

struct YesNoScore {
  double p_yes = 0.0;
  bool yes = false;   // p_yes > 0.5; an exact tie counts as no
};

// Softmax over the YES/NO logits at the final prompt position.
YesNoScore score_yes_no(MiniLm& m, const std::vector<int>& prompt_ids,
                        const fusion::FusionVectors* fv = nullptr,
                        const fusion::FusionOptions* options = nullptr);

// Mean negative log-likelihood over non-PAD targets.
double ce_loss(const ad::Mat& logits, const std::vector<int>& targets);

// Answer-supervision targets: PAD everywhere except the final prompt
// position, which carries the YES/NO token.
std::vector<int> answer_targets(size_t seq_len, int label);

}  // namespace spd::lm

#include "spd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spd/asmcfg.hpp"
#include "spd/errors.hpp"
#include "spd/rng.hpp"

namespace spd::synth {

namespace {

constexpr int kMaxLocals = 6;

struct Operand {
  enum Kind { local, arg, lit } kind = lit;
  int v = 0;
};

struct Stmt {
  int dst = 0;  // local index
  Operand a, b;
  char op = '+';  // '+' or '*'
};

struct Construct {
  enum Kind { filler, branch, loop } kind = filler;
  int cond_local = 0;
  bool less_than = false;  // condition "v < K" vs "v > K"
  int cond_const = 1;
  std::vector<Stmt> body;
};

// Function template rendered twice: once as an assembly listing, once as
// C-like pseudo-code. Transforms edit the template so both views stay
// paired.
struct FnTemplate {
  int n_args = 2;
  std::vector<Stmt> entry;
  std::vector<Construct> constructs;
  int ret_local = 0;
  bool guard = false;
  int guard_arg = 0;
  // Local index -> rendered name/register; identity for base functions.
  std::vector<int> local_perm;
  char local_prefix = 'v';

  explicit FnTemplate() : local_perm(kMaxLocals) {
    for (int i = 0; i < kMaxLocals; ++i) local_perm[i] = i;
  }
};

std::string local_name(const FnTemplate& fn, int i) {
  return std::string(1, fn.local_prefix) + std::to_string(fn.local_perm[static_cast<size_t>(i)]);
}

std::string local_reg(const FnTemplate& fn, int i) {
  return "r" + std::to_string(fn.local_perm[static_cast<size_t>(i)] + 1);
}

std::string arg_name(int j) { return "a" + std::to_string(j); }
std::string arg_reg(int j) { return "r" + std::to_string(9 + j); }

std::string operand_name(const FnTemplate& fn, const Operand& o) {
  switch (o.kind) {
    case Operand::local: return local_name(fn, o.v);
    case Operand::arg: return arg_name(o.v);
    default: return std::to_string(o.v);
  }
}

std::string operand_reg(const FnTemplate& fn, const Operand& o) {
  switch (o.kind) {
    case Operand::local: return local_reg(fn, o.v);
    case Operand::arg: return arg_reg(o.v);
    default: return std::to_string(o.v);
  }
}

Operand random_source(Rng& rng, const FnTemplate& fn, const std::vector<char>& assigned) {
  std::vector<Operand> pool;
  for (int i = 0; i < kMaxLocals; ++i) {
    if (assigned[static_cast<size_t>(i)]) pool.push_back({Operand::local, i});
  }
  for (int j = 0; j < fn.n_args; ++j) pool.push_back({Operand::arg, j});
  pool.push_back({Operand::lit, static_cast<int>(rng.range(1, 9))});
  return pool[static_cast<size_t>(rng.below(pool.size()))];
}

Stmt random_stmt(Rng& rng, const FnTemplate& fn, std::vector<char>& assigned) {
  Stmt s;
  s.dst = static_cast<int>(rng.below(kMaxLocals));
  s.a = random_source(rng, fn, assigned);
  s.b = random_source(rng, fn, assigned);
  s.op = rng.uniform() < 0.7 ? '+' : '*';
  assigned[static_cast<size_t>(s.dst)] = 1;
  return s;
}

FnTemplate random_base(Rng& rng, int target_blocks) {
  FnTemplate fn;
  fn.n_args = static_cast<int>(rng.range(1, 3));
  std::vector<char> assigned(kMaxLocals, 0);

  const int n_entry = static_cast<int>(rng.range(1, 3));
  for (int i = 0; i < n_entry; ++i) fn.entry.push_back(random_stmt(rng, fn, assigned));

  // Constructs cost 1 (filler jump), 2 (branch) or 3 (loop) blocks; decompose
  // target_blocks - 1 exactly.
  int remaining = target_blocks - 1;
  while (remaining > 0) {
    int cost;
    if (remaining == 1) {
      cost = 1;
    } else if (remaining == 2) {
      cost = rng.uniform() < 0.3 ? 1 : 2;
    } else {
      const double u = rng.uniform();
      cost = u < 0.2 ? 1 : (u < 0.6 ? 2 : 3);
    }
    Construct c;
    c.kind = cost == 1 ? Construct::filler : (cost == 2 ? Construct::branch : Construct::loop);
    if (c.kind != Construct::filler) {
      std::vector<int> ready;
      for (int i = 0; i < kMaxLocals; ++i) {
        if (assigned[static_cast<size_t>(i)]) ready.push_back(i);
      }
      c.cond_local = ready.empty() ? 0 : ready[static_cast<size_t>(rng.below(ready.size()))];
      if (ready.empty()) assigned[0] = 1;
      c.less_than = rng.uniform() < 0.5;
      c.cond_const = static_cast<int>(rng.range(1, 9));
      const int n_body = static_cast<int>(rng.range(1, 2));
      for (int i = 0; i < n_body; ++i) c.body.push_back(random_stmt(rng, fn, assigned));
    }
    fn.constructs.push_back(std::move(c));
    remaining -= cost;
  }

  std::vector<int> ready;
  for (int i = 0; i < kMaxLocals; ++i) {
    if (assigned[static_cast<size_t>(i)]) ready.push_back(i);
  }
  fn.ret_local = ready[static_cast<size_t>(rng.below(ready.size()))];
  return fn;
}

void apply_guard(FnTemplate& fn, Rng& rng) {
  fn.guard = true;
  fn.guard_arg = static_cast<int>(rng.below(static_cast<uint64_t>(fn.n_args)));
}

bool stmts_independent(const Stmt& x, const Stmt& y) {
  auto reads = [](const Stmt& s, int local) {
    return (s.a.kind == Operand::local && s.a.v == local) ||
           (s.b.kind == Operand::local && s.b.v == local);
  };
  return x.dst != y.dst && !reads(x, y.dst) && !reads(y, x.dst);
}

void apply_rename(FnTemplate& fn, Rng& rng) {
  // A fresh identifier family plus a register/name permutation of the
  // locals; semantics untouched.
  static const char prefixes[] = {'t', 'w', 'x', 'z'};
  fn.local_prefix = prefixes[rng.below(4)];
  rng.shuffle(fn.local_perm);
  // Reorder one independent adjacent pair when available.
  for (size_t i = 0; i + 1 < fn.entry.size(); ++i) {
    if (stmts_independent(fn.entry[i], fn.entry[i + 1])) {
      std::swap(fn.entry[i], fn.entry[i + 1]);
      break;
    }
  }
}

std::string render_pseudo(const FnTemplate& fn) {
  std::string out = "int f(";
  for (int j = 0; j < fn.n_args; ++j) {
    if (j) out += ", ";
    out += "int " + arg_name(j);
  }
  out += ") {\n";
  if (fn.guard) {
    out += "  if (" + arg_name(fn.guard_arg) + " == 0) { return -1; }\n";
  }
  std::vector<char> declared(kMaxLocals, 0);
  auto emit_stmt = [&](const Stmt& s, const std::string& indent) {
    std::string line = indent;
    if (!declared[static_cast<size_t>(s.dst)]) {
      line += "int ";
      declared[static_cast<size_t>(s.dst)] = 1;
    }
    line += local_name(fn, s.dst) + " = " + operand_name(fn, s.a) + " " + s.op + " " +
            operand_name(fn, s.b) + ";\n";
    out += line;
  };
  for (const auto& s : fn.entry) emit_stmt(s, "  ");
  for (const auto& c : fn.constructs) {
    if (c.kind == Construct::filler) continue;  // simplified away, like a decompiler would
    const std::string cmp = c.less_than ? " < " : " > ";
    const std::string head = local_name(fn, c.cond_local) + cmp + std::to_string(c.cond_const);
    out += (c.kind == Construct::branch ? "  if (" : "  while (") + head + ") {\n";
    for (const auto& s : c.body) emit_stmt(s, "    ");
    out += "  }\n";
  }
  out += "  return " + local_name(fn, fn.ret_local) + ";\n}\n";
  return out;
}

std::string render_asm(const FnTemplate& fn) {
  std::string out;
  int label_seq = 0;
  auto fresh = [&](const char* stem) { return std::string(stem) + std::to_string(label_seq++); };

  out += "entry:\n";
  if (fn.guard) {
    out += "  cmp " + arg_reg(fn.guard_arg) + ", 0\n";
    out += "  jz Lbail\n";
  }
  auto emit_stmt = [&](const Stmt& s) {
    const std::string dst = local_reg(fn, s.dst);
    out += "  mov " + dst + ", " + operand_reg(fn, s.a) + "\n";
    out += std::string(s.op == '+' ? "  add " : "  imul ") + dst + ", " +
           operand_reg(fn, s.b) + "\n";
  };
  for (const auto& s : fn.entry) emit_stmt(s);
  for (const auto& c : fn.constructs) {
    if (c.kind == Construct::filler) {
      const std::string l = fresh("Lf");
      out += "  jmp " + l + "\n" + l + ":\n";
      out += "  nop\n";
    } else if (c.kind == Construct::branch) {
      const std::string skip = fresh("Ls");
      out += "  cmp " + local_reg(fn, c.cond_local) + ", " + std::to_string(c.cond_const) + "\n";
      // Skip the body when the condition fails.
      out += std::string(c.less_than ? "  jge " : "  jle ") + skip + "\n";
      for (const auto& s : c.body) emit_stmt(s);
      out += skip + ":\n";
      out += "  nop\n";
    } else {
      const std::string head = fresh("Lh");
      const std::string done = fresh("Le");
      out += head + ":\n";
      out += "  cmp " + local_reg(fn, c.cond_local) + ", " + std::to_string(c.cond_const) + "\n";
      out += std::string(c.less_than ? "  jge " : "  jle ") + done + "\n";
      for (const auto& s : c.body) emit_stmt(s);
      out += "  jmp " + head + "\n";
      out += done + ":\n";
      out += "  nop\n";
    }
  }
  out += "  mov r0, " + local_reg(fn, fn.ret_local) + "\n";
  out += "  ret\n";
  if (fn.guard) {
    out += "Lbail:\n";
    out += "  mov r0, 99\n";
    out += "  ret\n";
  }
  return out;
}

std::vector<int> label_assignment(const GenConfig& cfg) {
  const int n_pos = static_cast<int>(
      std::llround(static_cast<double>(cfg.n_samples) * cfg.positive_ratio));
  std::vector<int> labels(static_cast<size_t>(cfg.n_samples), 0);
  for (int i = 0; i < n_pos && i < cfg.n_samples; ++i) labels[static_cast<size_t>(i)] = 1;
  Rng rng = Rng(cfg.seed).derive("labels");
  rng.shuffle(labels);
  return labels;
}

data::PatchSample make_sample(const GenConfig& cfg, int index, int label) {
  Rng base_rng = Rng(cfg.seed).derive("base").derive(static_cast<uint64_t>(index));
  Rng transform_rng = Rng(cfg.seed).derive("transform").derive(static_cast<uint64_t>(index));

  // The base draw never looks at the label, so pseudo-code and CFG
  // distributions match across classes by construction. Positives may add
  // two blocks (guard + bail), so leave room under max_blocks.
  const int base_max = std::max(cfg.min_blocks, cfg.max_blocks - 2);
  const int target_blocks = static_cast<int>(base_rng.range(cfg.min_blocks, base_max));
  FnTemplate base = random_base(base_rng, target_blocks);

  FnTemplate transformed = base;
  if (label == 1) {
    apply_guard(transformed, transform_rng);
  } else {
    apply_rename(transformed, transform_rng);
  }

  data::PatchSample s;
  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "toy_%05d", index);
  s.id = idbuf;
  s.label = label;

  const std::string base_asm = render_asm(base);
  s.pre_cfg = asmcfg::build_cfg(asmcfg::parse_listing(base_asm));
  s.pre_pseudo = render_pseudo(base);

  switch (cfg.mode) {
    case GenMode::mixed:
      s.post_cfg = asmcfg::build_cfg(asmcfg::parse_listing(render_asm(transformed)));
      s.post_pseudo = render_pseudo(transformed);
      break;
    case GenMode::structure_only:
      s.post_cfg = asmcfg::build_cfg(asmcfg::parse_listing(render_asm(transformed)));
      s.post_pseudo = s.pre_pseudo;
      break;
    case GenMode::semantics_only:
      s.post_cfg = s.pre_cfg;
      s.post_pseudo = render_pseudo(transformed);
      break;
  }

  static const char* projects[] = {"aurora", "basalt", "cobalt", "drift", "ember"};
  s.meta.project = projects[index % 5];
  Rng meta_rng = Rng(cfg.seed).derive("meta").derive(static_cast<uint64_t>(index));
  s.meta.opt_level = data::opt_levels()[static_cast<size_t>(meta_rng.below(5))];
  if (label == 1) {
    static const char* cwes[] = {"CWE-125", "CWE-476", "CWE-787"};
    s.meta.cwe = {cwes[meta_rng.below(3)]};
  }
  return s;
}

}  // namespace

GenMode mode_from_string(const std::string& s) {
  if (s == "mixed") return GenMode::mixed;
  if (s == "structure_only") return GenMode::structure_only;
  if (s == "semantics_only") return GenMode::semantics_only;
  throw ValidationError("unknown generator mode '" + s + "'");
}

std::string mode_to_string(GenMode m) {
  switch (m) {
    case GenMode::mixed: return "mixed";
    case GenMode::structure_only: return "structure_only";
    default: return "semantics_only";
  }
}

void validate_config(const GenConfig& cfg) {
  if (cfg.n_samples <= 0) throw ValidationError("gen: n_samples must be positive");
  if (!(cfg.positive_ratio > 0.0 && cfg.positive_ratio < 1.0)) {
    throw ValidationError("gen: positive_ratio must lie strictly between 0 and 1");
  }
  if (cfg.min_blocks < 1 || cfg.min_blocks > cfg.max_blocks) {
    throw ValidationError("gen: need 1 <= min_blocks <= max_blocks");
  }
}

data::PatchSample gen_sample(const GenConfig& cfg, int index) {
  validate_config(cfg);
  if (index < 0 || index >= cfg.n_samples) throw ValidationError("gen: index out of range");
  return make_sample(cfg, index, label_assignment(cfg)[static_cast<size_t>(index)]);
}

std::vector<data::PatchSample> gen_dataset(const GenConfig& cfg) {
  validate_config(cfg);
  const std::vector<int> labels = label_assignment(cfg);
  std::vector<data::PatchSample> out;
  out.reserve(static_cast<size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    out.push_back(make_sample(cfg, i, labels[static_cast<size_t>(i)]));
  }
  return out;
}

}  // namespace spd::synth

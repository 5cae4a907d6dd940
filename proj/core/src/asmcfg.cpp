#include "spd/asmcfg.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "spd/errors.hpp"

namespace spd::asmcfg {

namespace {

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string strip(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool valid_label(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '.') return false;
  }
  return !std::isdigit(static_cast<unsigned char>(s[0]));
}

const std::set<std::string>& jcc_set() {
  static const std::set<std::string> s = {"jz", "jnz", "je", "jne", "jg",
                                          "jl", "jge", "jle", "ja",  "jb"};
  return s;
}

}  // namespace

bool is_conditional_jump(const std::string& mnemonic) { return jcc_set().count(mnemonic) > 0; }

bool is_register_operand(const std::string& operand) {
  static const std::set<std::string> regs = {
      "eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp",
      "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
      "r0",  "r1",  "r2",  "r3",  "r4",  "r5",  "r6",  "r7",
      "r8",  "r9",  "r10", "r11", "r12", "r13", "r14", "r15"};
  return regs.count(to_lower(strip(operand))) > 0;
}

Listing parse_listing(const std::string& text) {
  Listing listing;
  std::set<std::string> labels;
  std::optional<std::string> pending_label;
  int pending_label_line = 0;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = strip(raw);
    if (line.empty()) continue;

    // Leading "label:" — either alone or prefixing an instruction.
    const size_t colon = line.find(':');
    if (colon != std::string::npos) {
      const std::string head = strip(line.substr(0, colon));
      if (valid_label(head)) {
        if (pending_label) {
          throw ParseError("label '" + head + "' follows label '" + *pending_label +
                               "' with no instruction between them",
                           line_no);
        }
        if (!labels.insert(head).second) {
          throw ParseError("duplicate label '" + head + "'", line_no);
        }
        pending_label = head;
        pending_label_line = line_no;
        line = strip(line.substr(colon + 1));
        if (line.empty()) continue;
      } else if (colon == 0 || head.empty()) {
        throw ParseError("malformed label", line_no);
      }
      // A colon later in the operand text is opaque operand content.
    }

    ListingLine ll;
    ll.label = pending_label;
    pending_label.reset();
    const size_t sp = line.find_first_of(" \t");
    if (sp == std::string::npos) {
      ll.mnemonic = to_lower(line);
    } else {
      ll.mnemonic = to_lower(line.substr(0, sp));
      ll.operands = strip(line.substr(sp + 1));
    }
    if (ll.mnemonic.empty()) throw ParseError("missing mnemonic", line_no);
    for (char c : ll.mnemonic) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.') {
        throw ParseError("malformed mnemonic '" + ll.mnemonic + "'", line_no);
      }
    }
    listing.lines.push_back(std::move(ll));
  }

  if (pending_label) {
    throw ParseError("label '" + *pending_label + "' has no instruction", pending_label_line);
  }
  if (listing.lines.empty()) throw ParseError("listing contains no instructions", line_no);
  return listing;
}

std::string normalize_block_text(const data::BasicBlock& block) {
  std::string out;
  for (const auto& ins : block.instructions) {
    std::string collapsed;
    bool in_space = true;
    for (char c : ins) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!in_space) collapsed.push_back(' ');
        in_space = true;
      } else {
        collapsed.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        in_space = false;
      }
    }
    while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
    if (!out.empty()) out.push_back('\n');
    out += collapsed;
  }
  return out;
}

CfgDiff cfg_diff_stats(const data::Cfg& pre, const data::Cfg& post) {
  data::validate_cfg(pre);
  data::validate_cfg(post);

  // Phase 1: match by identical id.
  std::map<std::string, std::string> pre_to_post;  // pre id -> post id
  std::map<std::string, std::string> post_to_pre;
  std::set<std::string> post_ids;
  for (const auto& b : post.blocks) post_ids.insert(b.id);
  for (const auto& b : pre.blocks) {
    if (post_ids.count(b.id)) {
      pre_to_post[b.id] = b.id;
      post_to_pre[b.id] = b.id;
    }
  }

  // Phase 2: pair leftovers with identical normalized text, in sorted-id
  // order on both sides so the matching is symmetric under swap.
  std::map<std::string, std::vector<std::string>> pre_by_text, post_by_text;
  for (const auto& b : pre.blocks) {
    if (!pre_to_post.count(b.id)) pre_by_text[normalize_block_text(b)].push_back(b.id);
  }
  for (const auto& b : post.blocks) {
    if (!post_to_pre.count(b.id)) post_by_text[normalize_block_text(b)].push_back(b.id);
  }
  for (auto& [text, pre_ids] : pre_by_text) {
    auto it = post_by_text.find(text);
    if (it == post_by_text.end()) continue;
    auto& post_ids_for_text = it->second;
    std::sort(pre_ids.begin(), pre_ids.end());
    std::sort(post_ids_for_text.begin(), post_ids_for_text.end());
    const size_t k = std::min(pre_ids.size(), post_ids_for_text.size());
    for (size_t i = 0; i < k; ++i) {
      pre_to_post[pre_ids[i]] = post_ids_for_text[i];
      post_to_pre[post_ids_for_text[i]] = pre_ids[i];
    }
  }

  CfgDiff diff;
  diff.removed_nodes = pre.blocks.size() - pre_to_post.size();
  diff.added_nodes = post.blocks.size() - post_to_pre.size();

  std::map<std::string, std::string> post_text;
  for (const auto& b : post.blocks) post_text[b.id] = normalize_block_text(b);
  for (const auto& b : pre.blocks) {
    auto it = pre_to_post.find(b.id);
    if (it == pre_to_post.end()) continue;
    if (normalize_block_text(b) != post_text.at(it->second)) ++diff.changed_nodes;
  }

  std::set<std::pair<std::string, std::string>> post_edges(post.edges.begin(), post.edges.end());
  std::set<std::pair<std::string, std::string>> matched_post_edges;
  for (const auto& [src, dst] : pre.edges) {
    auto s = pre_to_post.find(src);
    auto d = pre_to_post.find(dst);
    if (s != pre_to_post.end() && d != pre_to_post.end() &&
        post_edges.count({s->second, d->second})) {
      matched_post_edges.insert({s->second, d->second});
    } else {
      ++diff.removed_edges;
    }
  }
  diff.added_edges = post.edges.size() - matched_post_edges.size();
  return diff;
}

data::Cfg build_cfg(const Listing& listing, std::vector<std::string>* warnings) {
  const auto& lines = listing.lines;
  const size_t n = lines.size();

  std::map<std::string, size_t> label_to_line;
  for (size_t i = 0; i < n; ++i) {
    if (lines[i].label) label_to_line[*lines[i].label] = i;
  }

  auto is_terminator = [](const ListingLine& l) {
    return l.mnemonic == "jmp" || l.mnemonic == "ret" || is_conditional_jump(l.mnemonic);
  };

  // Block leaders: labeled instructions, the first instruction, and any
  // instruction following a terminator.
  std::vector<char> leader(n, 0);
  leader[0] = 1;
  for (size_t i = 0; i < n; ++i) {
    if (lines[i].label) leader[i] = 1;
    if (is_terminator(lines[i]) && i + 1 < n) leader[i + 1] = 1;
  }

  std::vector<size_t> block_of(n, 0);
  std::vector<size_t> block_start;
  for (size_t i = 0; i < n; ++i) {
    if (leader[i]) block_start.push_back(i);
    block_of[i] = block_start.size() - 1;
  }

  data::Cfg cfg;
  const size_t n_blocks = block_start.size();
  for (size_t b = 0; b < n_blocks; ++b) {
    data::BasicBlock block;
    const size_t start = block_start[b];
    const size_t end = (b + 1 < n_blocks) ? block_start[b + 1] : n;
    block.id = lines[start].label ? *lines[start].label : "blk_" + std::to_string(b);
    for (size_t i = start; i < end; ++i) {
      block.instructions.push_back(lines[i].operands.empty()
                                       ? lines[i].mnemonic
                                       : lines[i].mnemonic + " " + lines[i].operands);
    }
    cfg.blocks.push_back(std::move(block));
  }

  auto block_id_of_line = [&](size_t line) { return cfg.blocks[block_of[line]].id; };

  auto resolve_target = [&](const ListingLine& l) -> std::optional<std::string> {
    const std::string target = l.operands;
    if (is_register_operand(target)) {
      // Indirect transfer: the destination is unknowable here.
      if (warnings) {
        warnings->push_back("indirect jump through '" + target + "' leaves no out-edge");
      }
      return std::nullopt;
    }
    auto it = label_to_line.find(target);
    if (it == label_to_line.end()) {
      throw ParseError("unresolved jump target '" + target + "'");
    }
    return block_id_of_line(it->second);
  };

  std::set<std::pair<std::string, std::string>> edge_set;
  auto add_edge = [&](const std::string& src, const std::string& dst) {
    if (edge_set.insert({src, dst}).second) cfg.edges.emplace_back(src, dst);
  };

  for (size_t b = 0; b < n_blocks; ++b) {
    const size_t last = ((b + 1 < n_blocks) ? block_start[b + 1] : n) - 1;
    const ListingLine& l = lines[last];
    const std::string src = cfg.blocks[b].id;
    const bool has_next = b + 1 < n_blocks;

    if (l.mnemonic == "ret") {
      continue;
    } else if (l.mnemonic == "jmp") {
      if (auto dst = resolve_target(l)) add_edge(src, *dst);
    } else if (is_conditional_jump(l.mnemonic)) {
      if (auto dst = resolve_target(l)) add_edge(src, *dst);
      if (has_next) add_edge(src, cfg.blocks[b + 1].id);
    } else if (has_next) {
      add_edge(src, cfg.blocks[b + 1].id);
    }
  }
  return cfg;
}

}  // namespace spd::asmcfg

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spd/datamodel.hpp"

namespace spd::asmcfg {

// One instruction line of a normalized listing. The optional label names the
// address of this instruction.
struct ListingLine {
  std::optional<std::string> label;
  std::string mnemonic;      // lower-cased
  std::string operands;      // opaque text, may be empty
};

struct Listing {
  std::vector<ListingLine> lines;
};

struct CfgDiff {
  size_t added_nodes = 0;
  size_t removed_nodes = 0;
  size_t added_edges = 0;
  size_t removed_edges = 0;
  size_t changed_nodes = 0;  // matched nodes whose normalized text differs
};

// Dialect: one instruction per line; an optional "label:" may stand on its
// own line or prefix an instruction; "#" starts a comment; mnemonics are
// case-insensitive. Throws ParseError with the offending line number.
Listing parse_listing(const std::string& text);

// Splits at labels and after terminators (jmp/conditional jumps/ret; call
// falls through), then wires jump/fall-through edges. Unlabeled blocks get
// ids "blk_<index>" by block position. Throws on unresolved jump targets.
// Indirect jumps (register operand) end their block with no out-edge and
// append a note to `warnings` when given.
data::Cfg build_cfg(const Listing& listing, std::vector<std::string>* warnings = nullptr);

// Structural difference summary. Nodes match first by identical id, then by
// identical normalized text among the leftovers; edges map through the node
// correspondence.
CfgDiff cfg_diff_stats(const data::Cfg& pre, const data::Cfg& post);

// Whitespace-collapsed, lower-cased join of a block's instructions.
std::string normalize_block_text(const data::BasicBlock& block);

bool is_conditional_jump(const std::string& mnemonic);
bool is_register_operand(const std::string& operand);

}  // namespace spd::asmcfg

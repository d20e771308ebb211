#pragma once

// Token-sequence assembly: layout, role tags, next-token label masks and the
// causal/routing contracts. Assembly is pure bookkeeping; embeddings are
// materialized later, on the tape, so they stay differentiable.

#include <cstdint>
#include <string>
#include <vector>

#include "breen/errors.hpp"

namespace breen::seq {

enum class Role : std::uint8_t { IMAGE, QUERY_FINE, QUERY_COARSE, TEXT_INSTR, TEXT_GEN };

enum class Stage { PREALIGN, PRETRAIN, SFT };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// One contiguous run of same-role positions, in layout order.
struct Segment {
    Role role;
    int count = 0;
    std::vector<int> token_ids;  // text roles only
    int query_block = -1;        // index into the model's query blocks, query roles only
};

struct SlotRange {
    int begin = 0, end = 0;  // [begin, end)
    int stride = 0;
};

// (stride, token count) per query block, already in layout order.
struct QueryBlock {
    int stride = 0;
    int count = 0;
};

struct AssembledSequence {
    Stage stage = Stage::PRETRAIN;
    std::vector<Segment> segments;
    std::vector<Role> roles;      // length L
    std::vector<int> token_ids;   // length L, -1 at non-text positions
    std::vector<int> lm_labels;   // length L, -1 where the LM loss is off
    std::vector<SlotRange> query_slots;
    int image_tokens = 0;

    int length() const { return static_cast<int>(roles.size()); }
};

// Pretraining layout: [IMAGE][QUERY...][TEXT_GEN caption]. Labels are the
// caption tokens shifted by one (the position before each caption token
// predicts it). The pre-align stage reuses this layout.
AssembledSequence assemble_pretrain(int image_tokens, const std::vector<QueryBlock>& query_blocks,
                                    const std::vector<int>& caption_ids, Stage stage = Stage::PRETRAIN);

// SFT layout: [IMAGE][TEXT_INSTR][QUERY...][TEXT_GEN response]; instruction
// may be empty; labels only on response tokens.
AssembledSequence assemble_sft(int image_tokens, const std::vector<QueryBlock>& query_blocks,
                               const std::vector<int>& instr_ids, const std::vector<int>& resp_ids);

// position i may attend to j iff j <= i; no modality exceptions
inline bool causal_can_attend(int i, int j) { return j <= i; }

// L x L row-major permission matrix (1 = may attend)
std::vector<std::uint8_t> causal_mask(int length);

// true = image expert (IMAGE and QUERY positions), false = text expert
std::vector<std::uint8_t> modality_route_mask(const std::vector<Role>& roles);

}  // namespace breen::seq

#include "breen/sequence.hpp"

#include <algorithm>

namespace breen::seq {

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::PREALIGN: return "prealign";
        case Stage::PRETRAIN: return "pretrain";
        default: return "sft";
    }
}

Stage stage_from_name(const std::string& name) {
    if (name == "prealign") return Stage::PREALIGN;
    if (name == "pretrain") return Stage::PRETRAIN;
    if (name == "sft") return Stage::SFT;
    throw config_error("unknown stage '" + name + "' (expected prealign|pretrain|sft)");
}

namespace {

// smallest stride in the block list = fine granularity
int min_stride(const std::vector<QueryBlock>& blocks) {
    int m = 0;
    for (const auto& b : blocks)
        if (m == 0 || b.stride < m) m = b.stride;
    return m;
}

void append_image(AssembledSequence& out, int image_tokens) {
    if (image_tokens == 0) return;
    Segment seg;
    seg.role = Role::IMAGE;
    seg.count = image_tokens;
    out.segments.push_back(seg);
    out.roles.insert(out.roles.end(), static_cast<std::size_t>(image_tokens), Role::IMAGE);
    out.image_tokens = image_tokens;
}

void append_queries(AssembledSequence& out, const std::vector<QueryBlock>& blocks) {
    const int fine = min_stride(blocks);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].count <= 0) throw contract_error("assemble: query block with no tokens");
        Segment seg;
        seg.role = blocks[b].stride == fine ? Role::QUERY_FINE : Role::QUERY_COARSE;
        seg.count = blocks[b].count;
        seg.query_block = static_cast<int>(b);
        const int begin = static_cast<int>(out.roles.size());
        out.segments.push_back(seg);
        out.roles.insert(out.roles.end(), static_cast<std::size_t>(seg.count), seg.role);
        out.query_slots.push_back({begin, begin + seg.count, blocks[b].stride});
    }
}

void append_text(AssembledSequence& out, Role role, const std::vector<int>& ids) {
    if (ids.empty()) return;
    Segment seg;
    seg.role = role;
    seg.count = static_cast<int>(ids.size());
    seg.token_ids = ids;
    out.segments.push_back(std::move(seg));
    out.roles.insert(out.roles.end(), ids.size(), role);
}

// positions before generated tokens predict them; everything else -1
void finish(AssembledSequence& out, int gen_begin, const std::vector<int>& gen_ids) {
    const int length = static_cast<int>(out.roles.size());
    out.token_ids.assign(static_cast<std::size_t>(length), -1);
    out.lm_labels.assign(static_cast<std::size_t>(length), -1);
    int at = 0;
    for (const auto& seg : out.segments) {
        if (seg.role == Role::TEXT_INSTR || seg.role == Role::TEXT_GEN)
            for (int i = 0; i < seg.count; ++i) out.token_ids[at + i] = seg.token_ids[i];
        at += seg.count;
    }
    for (std::size_t i = 0; i < gen_ids.size(); ++i) {
        const int pos = gen_begin + static_cast<int>(i) - 1;
        if (pos >= 0) out.lm_labels[pos] = gen_ids[i];
    }
}

}  // namespace

AssembledSequence assemble_pretrain(int image_tokens, const std::vector<QueryBlock>& query_blocks,
                                    const std::vector<int>& caption_ids, Stage stage) {
    if (caption_ids.empty()) throw contract_error("assemble_pretrain: empty caption");
    if (image_tokens < 0) throw contract_error("assemble_pretrain: negative image token count");
    AssembledSequence out;
    out.stage = stage;
    append_image(out, image_tokens);
    append_queries(out, query_blocks);
    const int gen_begin = static_cast<int>(out.roles.size());
    append_text(out, Role::TEXT_GEN, caption_ids);
    finish(out, gen_begin, caption_ids);
    return out;
}

AssembledSequence assemble_sft(int image_tokens, const std::vector<QueryBlock>& query_blocks,
                               const std::vector<int>& instr_ids, const std::vector<int>& resp_ids) {
    if (resp_ids.empty()) throw contract_error("assemble_sft: empty response");
    if (image_tokens < 0) throw contract_error("assemble_sft: negative image token count");
    AssembledSequence out;
    out.stage = Stage::SFT;
    append_image(out, image_tokens);
    append_text(out, Role::TEXT_INSTR, instr_ids);
    append_queries(out, query_blocks);
    const int gen_begin = static_cast<int>(out.roles.size());
    append_text(out, Role::TEXT_GEN, resp_ids);
    finish(out, gen_begin, resp_ids);
    return out;
}

std::vector<std::uint8_t> causal_mask(int length) {
    if (length < 1) throw contract_error("causal_mask: length must be positive");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(length) * length, 0);
    for (int i = 0; i < length; ++i)
        for (int j = 0; j <= i; ++j) mask[static_cast<std::size_t>(i) * length + j] = 1;
    return mask;
}

std::vector<std::uint8_t> modality_route_mask(const std::vector<Role>& roles) {
    std::vector<std::uint8_t> mask(roles.size());
    for (std::size_t i = 0; i < roles.size(); ++i)
        mask[i] = roles[i] == Role::IMAGE || roles[i] == Role::QUERY_FINE || roles[i] == Role::QUERY_COARSE;
    return mask;
}

}  // namespace breen::seq

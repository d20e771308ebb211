#include <doctest.h>

#include "breen/sequence.hpp"

using namespace breen;
using seq::Role;

namespace {

std::vector<int> iota_ids(int n, int start = 3) {
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = start + i;
    return ids;
}

int count_role(const seq::AssembledSequence& s, Role r) {
    int n = 0;
    for (Role x : s.roles) n += x == r;
    return n;
}

}  // namespace

TEST_CASE("pretrain layout and labels") {
    const std::vector<seq::QueryBlock> blocks = {{3, 64}, {4, 36}};
    const auto caption = iota_ids(10);
    const auto s = seq::assemble_pretrain(144, blocks, caption);

    CHECK(s.length() == 144 + 100 + 10);
    CHECK(count_role(s, Role::IMAGE) == 144);
    CHECK(count_role(s, Role::QUERY_FINE) == 64);
    CHECK(count_role(s, Role::QUERY_COARSE) == 36);
    CHECK(count_role(s, Role::TEXT_GEN) == 10);

    REQUIRE(s.query_slots.size() == 2);
    CHECK(s.query_slots[0].begin == 144);
    CHECK(s.query_slots[0].end == 208);
    CHECK(s.query_slots[0].stride == 3);
    CHECK(s.query_slots[1].begin == 208);
    CHECK(s.query_slots[1].end == 244);

    // labels: exactly 10, shifted by one
    int labeled = 0;
    for (int i = 0; i < s.length(); ++i) {
        if (s.lm_labels[i] < 0) continue;
        ++labeled;
        CHECK(s.lm_labels[i] == s.token_ids[i + 1]);
    }
    CHECK(labeled == 10);
    CHECK(s.lm_labels[243] == caption[0]);  // last query predicts the first caption token
    CHECK(s.lm_labels[253] == -1);          // nothing after the last caption token

    CHECK_THROWS_AS(seq::assemble_pretrain(144, blocks, {}), contract_error);
}

TEST_CASE("sft layout and labels") {
    const std::vector<seq::QueryBlock> blocks = {{3, 64}, {4, 36}};
    const auto instr = iota_ids(6), resp = iota_ids(8, 20);
    const auto s = seq::assemble_sft(144, blocks, instr, resp);

    CHECK(s.length() == 144 + 6 + 100 + 8);
    CHECK(s.query_slots[0].begin == 150);
    CHECK(s.query_slots[1].end == 250);
    CHECK(count_role(s, Role::TEXT_INSTR) == 6);
    CHECK(count_role(s, Role::TEXT_GEN) == 8);

    int labeled = 0;
    for (int i = 0; i < s.length(); ++i)
        if (s.lm_labels[i] >= 0) {
            ++labeled;
            CHECK(s.roles[i + 1] == Role::TEXT_GEN);  // labels point at response positions only
        }
    CHECK(labeled == 8);

    SUBCASE("empty instruction degenerates to the pretrain layout") {
        const auto s2 = seq::assemble_sft(144, blocks, {}, resp);
        CHECK(s2.length() == 144 + 100 + 8);
        CHECK(count_role(s2, Role::TEXT_INSTR) == 0);
        CHECK(s2.query_slots[0].begin == 144);
    }
    SUBCASE("empty response rejected") { CHECK_THROWS_AS(seq::assemble_sft(144, blocks, instr, {}), contract_error); }
    SUBCASE("queries sit after the instruction, so the causal mask lets them see it") {
        for (const auto& slot : s.query_slots)
            for (int q = slot.begin; q < slot.end; ++q)
                for (int j = 144; j < 150; ++j) CHECK(seq::causal_can_attend(q, j));
    }
}

TEST_CASE("causal mask") {
    CHECK(seq::causal_mask(1) == std::vector<std::uint8_t>{1});
    const auto m3 = seq::causal_mask(3);
    const std::vector<std::uint8_t> want = {1, 0, 0, 1, 1, 0, 1, 1, 1};
    CHECK(m3 == want);
    CHECK_THROWS_AS(seq::causal_mask(0), contract_error);
    // an image token at index 0 cannot attend to any later query
    CHECK(!seq::causal_can_attend(0, 144));
}

TEST_CASE("modality routing mask") {
    const std::vector<seq::QueryBlock> blocks = {{3, 64}, {4, 36}};
    SUBCASE("pretrain: first 244 true, last 10 false") {
        const auto s = seq::assemble_pretrain(144, blocks, iota_ids(10));
        const auto mask = seq::modality_route_mask(s.roles);
        for (int i = 0; i < 244; ++i) CHECK(mask[i] == 1);
        for (int i = 244; i < 254; ++i) CHECK(mask[i] == 0);
    }
    SUBCASE("sft: image true, instruction false, queries true, response false") {
        const auto s = seq::assemble_sft(144, blocks, iota_ids(6), iota_ids(8));
        const auto mask = seq::modality_route_mask(s.roles);
        CHECK(mask[0] == 1);
        CHECK(mask[144] == 0);
        CHECK(mask[150] == 1);
        CHECK(mask[249] == 1);
        CHECK(mask[250] == 0);
    }
    SUBCASE("all-text sequence is all false") {
        const auto s = seq::assemble_pretrain(0, {}, iota_ids(5));
        const auto mask = seq::modality_route_mask(s.roles);
        for (auto v : mask) CHECK(v == 0);
    }
    SUBCASE("mask is a pure function of roles") {
        std::vector<Role> roles = {Role::IMAGE, Role::TEXT_GEN, Role::QUERY_FINE};
        auto m1 = seq::modality_route_mask(roles);
        std::swap(roles[0], roles[2]);
        auto m2 = seq::modality_route_mask(roles);
        CHECK(m1[0] == m2[2]);
        CHECK(m1[2] == m2[0]);
    }
}

TEST_CASE("role partition reconstructs component counts") {
    const std::vector<seq::QueryBlock> blocks = {{2, 144}};
    const auto s = seq::assemble_sft(49, blocks, iota_ids(3), iota_ids(5));
    CHECK(count_role(s, Role::IMAGE) == 49);
    CHECK(count_role(s, Role::QUERY_FINE) == 144);
    CHECK(count_role(s, Role::QUERY_COARSE) == 0);
    CHECK(count_role(s, Role::TEXT_INSTR) == 3);
    CHECK(count_role(s, Role::TEXT_GEN) == 5);
    CHECK(s.length() == 49 + 144 + 3 + 5);

    // labels never sit on image/query/instruction-predicting positions
    for (int i = 0; i < s.length(); ++i)
        if (s.lm_labels[i] >= 0) CHECK(s.roles[i + 1] == Role::TEXT_GEN);
}

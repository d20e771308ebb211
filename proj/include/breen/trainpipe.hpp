#pragma once

// Three-stage trainer: freeze policies, AdamW with global-norm clipping,
// deterministic batching derived from (seed, stage, step), checkpoints with
// payload checksums, JSONL metrics.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "breen/losses.hpp"
#include "breen/model.hpp"
#include "breen/sequence.hpp"
#include "breen/synthdata.hpp"

namespace breen::train {

using seq::Stage;

struct StageSpec {
    Stage stage = Stage::PREALIGN;
    std::set<std::string> trainable_groups;  // empty -> freeze_policy(stage)
    float alpha = 1.0f;
    float beta = 1.0f;
    float lr = 1e-3f;
    int batch_size = 8;
    int steps = 0;
    int checkpoint_every = 100;

    const std::set<std::string>& groups() const;
};

// Stage 1 trains only the new vision-path parameters; later stages unfreeze
// everything.
const std::set<std::string>& freeze_policy(Stage stage);

struct Moments {
    num::Array m, v;
};

struct TrainState {
    long step = 0;        // global optimizer steps, monotonic across stages
    long stage_step = 0;  // steps completed within the current stage
    Stage stage = Stage::PREALIGN;
    std::map<std::string, Moments> moments;  // exactly the trainable params
    std::uint64_t rng_state = 0;
    std::vector<float> loss_history;  // most recent kHistoryCap totals

    static constexpr std::size_t kHistoryCap = 128;
    void push_history(float total);
};

// Fresh state for a stage: moments zero-initialized for the stage's
// trainable set.
TrainState make_state(const model::BreenModel& m, Stage stage, const std::set<std::string>& groups);

// Moves to a later stage: keeps moments of still-trainable params, adds
// zero moments for newly trainable ones.
void transition_stage(TrainState& state, const model::BreenModel& m, Stage new_stage,
                      const std::set<std::string>& groups);

// deterministic batch: depends only on (seed, stage, stage_step)
std::vector<int> batch_indices(std::uint64_t seed, Stage stage, long stage_step, int batch_size, int dataset_size);

// forward + Eq-combined loss + backward + clipped AdamW on trainable groups.
// Frozen parameters are bit-identical before and after. Throws nan_error the
// first time a loss component goes non-finite.
loss::LossBreakdown train_step(model::BreenModel& m, TrainState& state, const StageSpec& spec,
                               const std::vector<const data::Sample*>& batch);

struct RunPaths {
    std::string checkpoint;  // rewritten every checkpoint_every steps and at stage end
    std::string metrics;     // JSONL, appended
};

struct StageResult {
    loss::LossBreakdown first;
    loss::LossBreakdown last;
    long steps_run = 0;
};

StageResult run_stage(model::BreenModel& m, TrainState& state, const StageSpec& spec, const data::Dataset& dataset,
                      const RunPaths& paths);

void save_checkpoint(const model::BreenModel& m, const TrainState& state, const std::string& path);
std::pair<model::BreenModel, TrainState> load_checkpoint(const std::string& path);

// ---- evaluation ----

// per-sample losses averaged over the dataset (optionally the first `limit`)
loss::LossBreakdown eval_mean_loss(const model::BreenModel& m, const data::Dataset& dataset, Stage stage, float alpha,
                                   float beta, int limit = -1);

// teacher-forced accuracy of the answer token on a qa dataset
double qa_accuracy(const model::BreenModel& m, const data::Dataset& dataset, int limit = -1);

// sequence assembly for one sample at one stage (shared by training and eval)
seq::AssembledSequence assemble_for_stage(const model::BreenConfig& cfg, const data::Sample& sample, Stage stage);

}  // namespace breen::train

#pragma once

// JSON (de)serialization for configs plus the desk/paper presets. The paper
// preset records the published learning rates, batch sizes and loss weights
// for reference; the desk preset is what the acceptance runs use.

#include <json.hpp>
#include <map>
#include <string>

#include "breen/model.hpp"
#include "breen/trainpipe.hpp"

namespace breen {

nlohmann::json to_json(const model::BreenConfig& cfg);
model::BreenConfig breen_config_from_json(const nlohmann::json& j);

// sha256 of the canonical (sorted-key) dump; checkpoints refuse to resume
// across differing hashes
std::string config_hash(const model::BreenConfig& cfg);

struct RunPathsConfig {
    std::string caption_data = "caption.brds";
    std::string qa_data = "qa.brds";
    std::string checkpoint_dir = "checkpoints";
    std::string metrics = "metrics.jsonl";
    std::string heatmap_dir = "heatmaps";
};

struct RunConfig {
    model::BreenConfig model;
    std::map<seq::Stage, train::StageSpec> stages;
    RunPathsConfig paths;

    const train::StageSpec& stage(seq::Stage s) const;
};

RunConfig desk_preset();
RunConfig paper_preset();

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

}  // namespace breen

#pragma once

#include <string>
#include <vector>

#include "dsct/association.hpp"
#include "dsct/scene.hpp"

namespace dsct::config {

// One self-describing JSON document covering training, model, and scene
// generation; unknown keys are rejected, flags override keys via
// --set section.key=value.
struct RunConfig {
    assoc::TrainConfig train;      // carries the ModelConfig
    scene::SceneConfig scene;
    int n_sequences = 5;

    void validate() const;
};

RunConfig default_config();

std::string to_json_string(const RunConfig& cfg);
RunConfig from_json_string(const std::string& text);
RunConfig load(const std::string& path);

// "train.lr=1e-3", "model.d_model=32", "scene.n_objects=12", ...
void apply_override(std::string& json_text, const std::string& key_value);

}  // namespace dsct::config

#pragma once

#include <string>

#include "phonssm/model.hpp"
#include "phonssm/train.hpp"

namespace phonssm {

struct FullConfig {
    ModelConfig model;
    TrainConfig train;
};

/// Sectioned key-value text ("[architecture]" / "[training]" / "[loss]",
/// one "Key: value" per line, '#' comments). Keys use the hyperparameter
/// names as written in the docs, e.g. "Model dimension D", "Learning rate".
FullConfig parse_config_text(const std::string& text);
FullConfig parse_config_file(const std::string& path);

/// Round-trippable rendering; every subcommand echoes this as its resolved
/// configuration.
std::string render_config(const FullConfig& cfg);

}  // namespace phonssm

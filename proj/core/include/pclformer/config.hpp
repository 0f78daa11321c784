#pragma once

#include <string>

#include "pclformer/synth.hpp"
#include "pclformer/trainer.hpp"

// JSON config documents. Every key is optional except `seed`; unknown keys
// are rejected. A run manifest (an object with a "config" member) is also
// accepted, which is how a recorded run is replayed.
namespace pclformer {

SynthConfig synth_config_from_json(const std::string& text);
std::string synth_config_to_json(const SynthConfig& cfg);

// Fields absent from the document keep the values already in `base`,
// so a profile can be applied first and the file layered on top.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});
std::string train_config_to_json(const TrainConfig& cfg);

}  // namespace pclformer

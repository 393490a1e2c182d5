#pragma once

// Single-file checkpoint: a text preamble and JSON header (format version,
// configs, vocabulary, step, tensor directory) followed by length-prefixed
// little-endian float64 blocks, one per named parameter and Adam moment.

#include <string>
#include <string_view>

#include "bet/config.hpp"
#include "bet/model.hpp"
#include "bet/optimizer.hpp"
#include "bet/vocab.hpp"

namespace bet {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    TrainConfig train_config;
    Vocabulary vocab;
    Model model;
    AdamState optimizer;  // moments follow model.named_parameters() order
};

std::string serialize_checkpoint(const Checkpoint& cp);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bet

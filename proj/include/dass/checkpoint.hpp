#pragma once

// Versioned binary checkpoint container: a JSON header (model kind, config,
// training metadata, array table) followed by raw little-endian float data.
// load(save(m)) reproduces forward outputs bit-exactly.

#include <memory>
#include <string>
#include <vector>

#include "dass/classifier.hpp"

namespace dass {

struct CheckpointData {
  std::string model_kind;   // "dass" | "attn"
  std::string config_json;  // model configuration
  int epoch = 0;
  std::uint64_t seed = 0;
  long adam_step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<int>> dims;
  std::vector<std::vector<float>> arrays;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// model config <-> JSON
std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json);
std::string attn_config_json(const AttnConfig& cfg);
AttnConfig attn_config_from_json(const std::string& json);

// Splits the flat parameter vector into named arrays per the layout.
// Optimizer moments, when given, are stored as reserved arrays.
CheckpointData checkpoint_from(const Classifier<float>& model, int epoch, std::uint64_t seed,
                               const std::vector<float>* adam_m = nullptr,
                               const std::vector<float>* adam_v = nullptr, long adam_step = 0);

// Rebuilds the classifier from config and restores parameters bit-exactly.
// Throws IoError if an array name or shape does not match the layout derived
// from the stored config.
std::unique_ptr<Classifier<float>> classifier_from_checkpoint(const CheckpointData& data);

std::uint64_t file_hash(const std::string& path);

}  // namespace dass

#pragma once

#include <optional>

#include "modaldx/features.hpp"
#include "modaldx/hodmd.hpp"
#include "modaldx/ingest.hpp"
#include "modaldx/model.hpp"

namespace modaldx {

struct DecomposeOptions {
  PreprocessConfig preprocess;
  std::optional<HodmdConfig> hodmd;  // default_hodmd_config(K, dt) when unset
  FeatureConfig features;
};

struct Decomposition {
  ModeSet modes;
  FeatureTensor features;
};

/// preprocess -> hodmd -> modes_to_features
Decomposition decompose_video(const VideoSequence& video, const DecomposeOptions& options);

/// Model geometry that consumes tensors produced with `features`.
ModelConfig model_config_for(const FeatureConfig& features, ModelConfig base = {});

}  // namespace modaldx

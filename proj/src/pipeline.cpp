#include "modaldx/pipeline.hpp"

namespace modaldx {

Decomposition decompose_video(const VideoSequence& video, const DecomposeOptions& options) {
  const SnapshotMatrix snap = preprocess(video, options.preprocess);
  const HodmdConfig cfg = options.hodmd ? *options.hodmd : default_hodmd_config(snap.snapshots(), snap.dt_s);
  Decomposition d;
  d.modes = hodmd(snap, cfg);
  d.features = modes_to_features(d.modes, options.features);
  return d;
}

ModelConfig model_config_for(const FeatureConfig& features, ModelConfig base) {
  base.m_modes = features.m_modes;
  base.grid_h = features.patch_h;
  base.grid_w = features.patch_w;
  return base;
}

}  // namespace modaldx

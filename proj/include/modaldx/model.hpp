#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modaldx/common.hpp"
#include "modaldx/features.hpp"

namespace modaldx {

struct ModelConfig {
  int patch_size = 16;
  int embed_dim = 64;
  int n_blocks = 2;
  int n_heads = 4;
  int mlp_ratio = 2;
  double mask_ratio = 0.5;
  int n_classes = kNumClasses;
  std::uint64_t seed = 0;
  // Feature geometry the model consumes.
  int m_modes = 8;
  int grid_h = 64;
  int grid_w = 64;

  int patches_per_slot() const { return (grid_h / patch_size) * (grid_w / patch_size); }
  int max_tokens() const { return m_modes * patches_per_slot(); }
  int patch_dim() const { return kImageChannels * patch_size * patch_size; }
  int hidden_dim() const { return mlp_ratio * embed_dim; }
};

void validate(const ModelConfig& cfg);

/// Pre-normalisation transformer block. Row-vector convention: tokens are rows, y = x W + b.
struct BlockParams {
  Matrix ln1_g, ln1_b;
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;
  Matrix ln2_g, ln2_b;
  Matrix w1, b1, w2, b2;
};

struct Params {
  Matrix patch_w, patch_b;  // patch_dim x D, 1 x D
  Matrix scalar_w;          // 3 x D, per-slot mode scalars added to every token of the slot
  Matrix pos;               // max_tokens x D
  Matrix mask_token;        // 1 x D
  std::vector<BlockParams> blocks;
  Matrix lnf_g, lnf_b;
  Matrix cls_w, cls_b;      // D x C, 1 x C
  Matrix reg_w, reg_b;      // D x 1, 1 x 1
  Matrix rec_w, rec_b;      // D x patch_dim, 1 x patch_dim

  /// Visits every tensor in checkpoint manifest order.
  void visit(const std::function<void(const std::string&, Matrix&)>& f);
  void visit(const std::function<void(const std::string&, const Matrix&)>& f) const;

  Params zeros_like() const;
  std::size_t size() const;
};

/// Fixed standardisation fitted on training data; not trained by gradient descent.
struct InputNorm {
  std::array<double, kImageChannels> image_mean{0.0, 0.0};
  std::array<double, kImageChannels> image_sd{1.0, 1.0};
  std::array<double, kModeScalars> scalar_mean{0.0, 0.0, 0.0};
  std::array<double, kModeScalars> scalar_sd{1.0, 1.0, 1.0};
  double onset_mean = 0.0;
  double onset_sd = 1.0;
  bool inputs_fitted = false;
  bool onset_fitted = false;
};

struct Model {
  ModelConfig config;
  Params params;
  InputNorm norm;

  std::size_t parameter_count() const { return params.size(); }
};

/// Weights ~ N(0, 1/fan_in), embeddings ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
Model init_model(const ModelConfig& cfg);

/// Fits image/scalar statistics over valid slots.
void fit_input_norm(InputNorm& norm, std::span<const FeatureTensor> data);
void fit_onset_norm(InputNorm& norm, std::span<const double> onset_weeks);

/// Tokens that are replaced by the mask embedding, indexed by slot * patches_per_slot + patch.
struct PatchMask {
  std::vector<bool> masked;
  int count() const;
};

/// Masks ceil(ratio * valid tokens) tokens drawn without replacement.
PatchMask sample_mask(const ModelConfig& cfg, const FeatureTensor& x, double ratio, std::mt19937_64& rng);

struct ForwardResult {
  Vector class_logits;
  double onset_pred_weeks = 0.0;
  Matrix reconstruction;            // one row per masked token, in token order
  std::vector<int> masked_tokens;   // token positions of the reconstruction rows
};

ForwardResult forward(const Model& model, const FeatureTensor& x, const PatchMask* mask = nullptr);

/// Normalised patch values of the masked tokens (the pretraining targets).
Matrix masked_targets(const Model& model, const FeatureTensor& x, const PatchMask& mask);

struct Target {
  HeartState label = HeartState::CTL;
  double onset_weeks = 0.0;
};

struct LossWeights {
  double cls = 1.0;
  double reg = 1.0 / 400.0;
};

struct LossTerms {
  double total = 0.0;
  double classification = 0.0;  // cross-entropy
  double regression = 0.0;      // squared error in weeks^2
};

/// total = cls * CE(logits, label) + reg * (onset_pred - onset_true)^2
LossTerms loss(const ForwardResult& out, const Target& target, const LossWeights& w);

/// Mean squared error over the masked patches only; 0 when nothing is masked.
double masked_reconstruction_loss(const ForwardResult& out, const Matrix& targets);

struct BackwardResult {
  Params grads;
  LossTerms loss;
};

BackwardResult backward(const Model& model, const FeatureTensor& x, const Target& target, const LossWeights& w);

/// Gradient of masked_reconstruction_loss against `targets` (normally masked_targets()).
BackwardResult backward_masked(const Model& model, const FeatureTensor& x, const PatchMask& mask, const Matrix& targets);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 60;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights weights;
  int patience = 15;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// Adaptive-moment optimiser state.
class Adam {
 public:
  Adam(const Params& like, const TrainConfig& cfg);
  void step(Params& params, const Params& grads);

 private:
  Params m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  Model model;  // best-validation snapshot
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

TrainResult train(Model model, std::span<const FeatureTensor> train_x, std::span<const Target> train_y,
                  std::span<const FeatureTensor> val_x, std::span<const Target> val_y, const TrainConfig& cfg);

struct PretrainResult {
  Model model;
  std::vector<double> history;  // mean masked-reconstruction loss per epoch
};

/// Masked-patch reconstruction pretraining with ratio model.config.mask_ratio.
PretrainResult pretrain_masked(Model model, std::span<const FeatureTensor> data, const TrainConfig& cfg);

struct Prediction {
  HeartState label = HeartState::CTL;
  std::array<double, kNumClasses> probabilities{};
  double onset_age_weeks = 0.0;
  double time_to_onset_weeks = 0.0;
};

/// argmax with ties to the lowest index; time to onset = onset - acquisition age.
Prediction make_prediction(const Vector& logits, double onset_age_weeks, double acquisition_age_weeks);
Prediction predict(const Model& model, const FeatureTensor& x, double acquisition_age_weeks);

Vector softmax(const Vector& logits);

inline constexpr const char* kCheckpointFormat = "MODALDX-MDL-1";

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace modaldx

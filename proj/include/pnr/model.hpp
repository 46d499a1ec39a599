#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pnr/config.hpp"
#include "pnr/layer.hpp"
#include "pnr/synth.hpp"
#include "pnr/tape.hpp"

namespace pnr {

// ---- parameters ----

// A chain of affine layers; the activation between / after layers is chosen
// by the owning block's role.
struct Block {
  std::vector<Matrix> weights;  // layer k: in_k x out_k
  std::vector<Matrix> biases;   // layer k: 1 x out_k
};

struct ModelDims {
  ImageShape image;
  int grid = 4;
  int pose_channels = 6;
  int d = 3;
  int feat_dim = 16;  // D
  int hidden = 32;
  int layers = 2;  // affine layers per block (pose block gets one extra)

  int patches() const { return grid * grid; }
  int patch_values() const {
    return (image.height / grid) * (image.width / grid) * image.channels;
  }
  int pose_patch_values() const {
    return (image.height / grid) * (image.width / grid) * pose_channels;
  }
  int image_values() const { return patches() * patch_values(); }
  int pose_values() const { return patches() * pose_patch_values(); }

  static ModelDims from_config(const TrainConfig& cfg);
};

enum class ParamGroup { kGenerator, kDiscImage, kDiscPose };

// Dense per-patch stand-ins for the appearance extractor f_a, pose
// extractor f_p, generator G, and the two conditional discriminators.
struct ModelParams {
  ModelDims dims;
  Block appearance;  // patch pixels -> ... -> D, tanh between layers
  Block pose;        // pose patch -> ... -> hidden, final linear layer to d
  Block generator;   // D -> ... -> patch pixels, sigmoid output
  Block disc_image;  // flat(image) ++ flat(source image) -> ... -> logit, relu between
  Block disc_pose;   // flat(image) ++ flat(pose map)     -> ... -> logit

  static ModelParams init(const ModelDims& dims, Rng& rng);

  // Visits (name, matrix, group) over every parameter, fixed order.
  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;
};

namespace detail {
template <class B, class F>
void visit_block(B& block, const char* prefix, ParamGroup group, F&& f) {
  for (std::size_t k = 0; k < block.weights.size(); ++k) {
    f(std::string(prefix) + ".w" + std::to_string(k), block.weights[k], group);
    f(std::string(prefix) + ".b" + std::to_string(k), block.biases[k], group);
  }
}
}  // namespace detail

template <class F>
void ModelParams::for_each(F&& f) {
  detail::visit_block(appearance, "fa", ParamGroup::kGenerator, f);
  detail::visit_block(pose, "fp", ParamGroup::kGenerator, f);
  detail::visit_block(generator, "gen", ParamGroup::kGenerator, f);
  detail::visit_block(disc_image, "di", ParamGroup::kDiscImage, f);
  detail::visit_block(disc_pose, "dk", ParamGroup::kDiscPose, f);
}

template <class F>
void ModelParams::for_each(F&& f) const {
  detail::visit_block(appearance, "fa", ParamGroup::kGenerator, f);
  detail::visit_block(pose, "fp", ParamGroup::kGenerator, f);
  detail::visit_block(generator, "gen", ParamGroup::kGenerator, f);
  detail::visit_block(disc_image, "di", ParamGroup::kDiscImage, f);
  detail::visit_block(disc_pose, "dk", ParamGroup::kDiscPose, f);
}

// ---- tape-side forward ----

// Registers every parameter as a tape leaf and exposes the sub-networks.
// Inputs and outputs are patch matrices (row = one local region).
class TapedModel {
 public:
  TapedModel(Tape& tape, const ModelParams& params);

  NodeId appearance(NodeId image_patches) const;   // patches x D
  NodeId pose(NodeId pose_patches) const;          // patches x d
  NodeId generate(NodeId features) const;          // patches x patch_values
  NodeId disc_image_logit(NodeId candidate_patches, NodeId source_patches) const;
  NodeId disc_pose_logit(NodeId candidate_patches, NodeId pose_patches) const;

  NodeId param_node(const std::string& name) const;

  // Sums tape gradients of this model's leaves in `group` into acc.
  void accumulate_grads(const std::vector<Matrix>& grads, ParamGroup group,
                        std::map<std::string, Matrix>& acc) const;

 private:
  Tape& tape_;
  const ModelParams& params_;
  std::map<std::string, NodeId> leaves_;
  std::map<std::string, ParamGroup> groups_;
};

// Pure-value wrappers (build a throwaway tape internally).
Matrix extract_appearance(const ModelParams& params, const Matrix& image_patches);
Matrix extract_pose(const ModelParams& params, const Matrix& pose_patches);
Matrix generate_image(const ModelParams& params, const Matrix& features);

// ---- losses ----

// Mean absolute difference; a and b may be raw images or patch matrices.
NodeId loss_l1(Tape& tape, NodeId a, NodeId b);
double loss_l1(const Matrix& a, const Matrix& b);

// Perceptual proxy: mean |L (a - b) R| for frozen random projections L, R.
NodeId loss_perceptual(Tape& tape, NodeId a, NodeId b, const Matrix& proj_left,
                       const Matrix& proj_right);

// Stable logistic GAN losses on logits:
//   d_loss = softplus(-logit_real) + softplus(logit_fake)
//          = -[log D(real) + log(1 - D(fake))]
//   g_loss = softplus(-logit_fake) = -log D(fake)   (non-saturating)
NodeId disc_loss(Tape& tape, NodeId logit_real, NodeId logit_fake);
NodeId gen_gan_loss(Tape& tape, NodeId logit_fake);

struct GanLossValues {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

// Convenience evaluation of both GAN losses for one real/fake pair through
// the selected discriminator. Pairs are (candidate, condition) patch
// matrices.
GanLossValues loss_gan(const ModelParams& params, ParamGroup disc,
                       const Matrix& real_candidate, const Matrix& real_condition,
                       const Matrix& fake_candidate, const Matrix& fake_condition);

double total_loss(const TrainConfig& cfg, double l1, double per, double gan_i,
                  double gan_k);

// ---- optimizer ----

struct AdamParams {
  double lr = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update; t is the 1-based step count.
void adam_step(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
               long long t, const AdamParams& opt);

struct AdamState {
  std::map<std::string, std::pair<Matrix, Matrix>> moments;  // name -> (m, v)
  long long t = 0;
};

// ---- training ----

struct StepLosses {
  double l1 = 0.0;
  double per = 0.0;
  double gan_i = 0.0;
  double gan_k = 0.0;
  double d_i = 0.0;
  double d_k = 0.0;
  double total = 0.0;
  bool skipped = false;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  Trainer(const TrainConfig& cfg, ModelParams params);

  // One optimizer step on a deterministic batch drawn from ds.train:
  // discriminator half-step first, then generator half-step. A solver
  // singularity skips the step (skipped flag set, counter bumped).
  StepLosses train_step(const ToyDataset& ds);

  // Mean reconstruction L1 on a held-out set; supervised/multishot modes
  // reconstruct the target view, unsupervised mode self-reconstructs.
  double held_out_l1(const std::vector<ToySample>& samples) const;

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const TrainConfig& config() const { return cfg_; }
  int skipped_steps() const { return skipped_steps_; }

  AdamState& gen_opt() { return gen_opt_; }
  AdamState& disc_i_opt() { return disc_i_opt_; }
  AdamState& disc_k_opt() { return disc_k_opt_; }

 private:
  struct BatchItem {
    std::vector<const ToySample*> sources;  // M shots (same identity)
    const ToySample* target = nullptr;      // sample providing the target view
    bool self_target = false;               // unsupervised: target == source view
  };

  BatchItem draw_item(const ToyDataset& ds);
  StepLosses run_step(const std::vector<BatchItem>& batch);

  TrainConfig cfg_;
  ModelParams params_;
  AdamState gen_opt_, disc_i_opt_, disc_k_opt_;
  Rng data_rng_;
  Rng mask_rng_;
  Matrix proj_left_, proj_right_;  // frozen perceptual projections
  int skipped_steps_ = 0;
};

struct TrainResult {
  std::vector<StepLosses> log;
  double initial_holdout_l1 = 0.0;
  double final_holdout_l1 = 0.0;
  int skipped = 0;
};

// Runs cfg.steps optimizer steps and wraps the held-out L1 bookkeeping.
// Throws DivergenceError when a step produces a non-finite loss.
TrainResult train_loop(Trainer& trainer, const ToyDataset& ds);

// ---- inference ----

// Multi-shot generation: extract per-shot features, stack them into one
// regression problem, solve, predict with the target pose, decode.
// shots are (image, pose_map) raw matrices; returns the raw image.
Matrix infer_multishot(const ModelParams& params,
                       const std::vector<std::pair<Matrix, Matrix>>& shots,
                       const Matrix& target_pose_map, const PnrConfig& cfg);

// ---- checkpoints ----
//
// PNRC format: magic "PNRC", u32 version (=1), u32 record count, then
// records of (u32 name length, name bytes, PNRM matrix). Records cover all
// model parameters and optimizer moments.

struct Checkpoint {
  ModelParams params;
  AdamState gen_opt, disc_i_opt, disc_k_opt;
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState& gen_opt, const AdamState& disc_i_opt,
                     const AdamState& disc_k_opt);
Checkpoint load_checkpoint(const std::string& path, const ModelDims& dims);

}  // namespace pnr

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "abd/autodiff.hpp"
#include "abd/model.hpp"
#include "abd/params.hpp"
#include "abd/rng.hpp"

namespace abd {

/// Architecture hyperparameters. Everything here is part of the
/// checkpoint's config hash.
struct DenoiserConfig {
  int hidden = 64;        // trunk width
  int depth = 3;          // residual trunk layers
  int neighbors = 16;     // K nearest context residues per CDR residue
  int time_dim = 16;      // sinusoidal timestep features
  int steps = 100;        // diffusion steps the time features are scaled by
  int enc_embed = 16;     // context-encoder token embedding width
  int enc_hidden = 32;
  int enc_out = 16;       // context-encoder output embedding width
  int enc_pos_dim = 8;    // context-encoder positional features
  double length_scale = 10.0;  // Angstrom; normalizes displacements and offsets

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

/// Token id used for masked positions in the context encoder.
inline constexpr int kMaskToken = kNumAminoAcids;

/// All trainable weights of the context encoder and the denoising network.
struct DenoiserParams {
  DenoiserConfig config;
  ParamStore store;

  /// Random initialization (scaled normal weights, zero biases).
  static DenoiserParams init(const DenoiserConfig& cfg, Rng& rng);

  /// True for context-encoder parameters (including the masked-recovery
  /// head used only in pre-training).
  bool is_encoder_param(int index) const;
  /// Zeroes the weights and biases of the three output heads.
  void zero_heads();
};

/// Rigid-motion-invariant inputs of the denoiser for one noisy CDR.
struct FeatureSet {
  int cdr_len = 0;
  int neighbors = 0;
  int t = 0;
  /// cdr_len x single_dim: one-hot type, timestep features, index features,
  /// position and orientation in the complex frame.
  std::vector<double> single;
  int single_dim = 0;
  /// cdr_len x pair_dim: chain-neighbor blocks then K neighbor blocks of
  /// (C-alpha displacement, side-chain displacement, distance, role, mask),
  /// displacements in the residue's own frame divided by length_scale.
  std::vector<double> pair;
  int pair_dim = 0;
  /// cdr_len x K encoder token ids of the neighbors, -1 for padding.
  std::vector<int> neighbor_tokens;
  /// Encoder token id of each CDR position.
  std::vector<int> self_tokens;
  /// Context-encoder input: tokens, segment (0 chain, 1 antigen), position.
  std::vector<int> tokens;
  std::vector<int> segments;
  std::vector<int> positions;
  /// Multiplies the offset and rotation heads; the diffusion module sets
  /// it to the noise level sqrt(1 - alpha_bar^t).
  double head_scale = 1.0;
  /// cdr_len row-major 3x3 maps from the complex frame to each residue's
  /// frame, applied to the offset and rotation heads.
  std::vector<double> head_frames;
};

inline constexpr int kPairBlock = 9;   // per-neighbor numeric features
inline constexpr int kChainBlock = 4;  // per chain-neighbor numeric features
inline constexpr int kFrameBlock = 12;  // position and orientation in the complex frame

FeatureSet featurize(const DenoiserConfig& cfg, const ComplexInstance& complex, const CdrState& noisy_cdr, int t);

/// Head outputs on a tape: type logits (m x 20), local position offset
/// (m x 3, in length_scale units), so(3) correction (m x 3).
struct DenoiseVars {
  ad::Var logits;
  ad::Var offset;
  ad::Var rotvec;
};

DenoiseVars denoise_on_tape(ad::Tape& tape, const DenoiserParams& params, const FeatureSet& feats);

struct DenoiseOutput {
  std::vector<std::array<double, kNumAminoAcids>> type_logits;
  std::vector<Vec3> x_pred;
  std::vector<Rotation> rot_pred;
};

/// x_pred = x + orient * offset * length_scale;
/// rot_pred = orient * exp(rotvec). Throws NumericError on non-finite heads.
DenoiseOutput denoise(const DenoiserParams& params, const FeatureSet& feats, const CdrState& noisy_cdr);

/// Converts tape head values into global predictions.
DenoiseOutput decode_heads(const DenoiserParams& params, const ad::Tape& tape, const DenoiseVars& vars,
                           const CdrState& noisy_cdr);

/// Context-encoder output embeddings (tokens x enc_out) on a tape.
ad::Var encode_context(ad::Tape& tape, const DenoiserParams& params, const std::vector<int>& tokens,
                       const std::vector<int>& segments, const std::vector<int>& positions);

/// One pre-training example: antibody chain types with the CDR span (which
/// gets masked) and the antigen types.
struct SequenceExample {
  std::vector<int> chain;
  CdrSpan span;
  std::vector<int> antigen;
};

SequenceExample sequence_example(const ComplexInstance& complex, const CdrState& cdr);

/// Mean masked-recovery cross-entropy over CDR positions of one example.
ad::Var masked_recovery_loss(ad::Tape& tape, const DenoiserParams& params, const SequenceExample& ex);

/// Fraction of masked CDR positions whose argmax prediction is correct.
double masked_recovery_accuracy(const DenoiserParams& params, const SequenceExample& ex);

struct PretrainResult {
  DenoiserParams params;
  std::vector<double> losses;  // one per step
};

/// Gradient descent on masked-type cross-entropy; only encoder parameters
/// move. Throws ConfigError on an empty corpus.
PretrainResult pretrain_encoder(DenoiserParams params, const std::vector<SequenceExample>& corpus, int steps,
                                Rng& rng, const AdamConfig& opt = {});

/// Builds a scalar loss with `closure` on a fresh tape and returns it with
/// exact gradients for every parameter. Throws NumericError on a
/// non-finite loss.
std::pair<double, Gradients> loss_and_grad(const DenoiserParams& params,
                                           const std::function<ad::Var(ad::Tape&)>& closure);

}  // namespace abd

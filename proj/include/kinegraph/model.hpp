#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kinegraph/json_io.hpp"
#include "kinegraph/matrix.hpp"
#include "kinegraph/prior_graphs.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace kinegraph {

enum class PeKind { Sinusoidal, None };

struct ModelConfig {
  std::size_t joints = 25;
  std::size_t classes = 60;
  std::size_t in_dims = 3;
  std::vector<std::size_t> channels{64, 64, 64, 128, 128, 128, 256, 256, 256};
  std::vector<std::size_t> strides{1, 1, 1, 2, 1, 2, 1, 1, 1};
  std::size_t frames = 64;
  double beta = 0.5;
  // Diffusion hops per block. Empty means 4 in block 1 and 1 elsewhere.
  std::vector<std::size_t> hops;
  double lambda = 0.2;
  std::size_t aux_tap = 9;  // 1-based block whose output feeds PC-AC
  PeKind pe = PeKind::Sinusoidal;
  std::size_t tc_kernel = 5;
  std::vector<std::size_t> tc_dilations{1, 2};
  std::size_t pool_window = 3;
  double gamma_init = 0.1;
  double bn_eps = 1e-5;

  std::size_t blocks() const noexcept { return channels.size(); }
  std::size_t hops_for(std::size_t block) const;
  // Frames seen by each block's input; entry blocks() is the encoder output.
  std::vector<std::size_t> frame_schedule() const;

  void validate() const;
  Json to_json() const;
  static ModelConfig from_json(const Json& doc);
};

// A named window into the flat parameter vector.
struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

struct BlockLayout {
  std::size_t c_in = 0, c_out = 0, stride = 1, hops = 1;
  ParamSlot query, key, w3, gamma, shared;
  ParamSlot w4, b4, bn1_scale, bn1_shift;
  std::vector<ParamSlot> depthwise;  // kernel x C per dilation
  std::vector<ParamSlot> pointwise;  // C x C per dilation
  ParamSlot pool_pointwise, skip, bn2_scale, bn2_shift;
  std::optional<ParamSlot> residual;
};

struct ModelLayout {
  ParamSlot w0, b0;
  std::vector<BlockLayout> blocks;
  ParamSlot fc_w, fc_b, aux_w, aux_b;
  std::vector<ParamSlot> slots;  // every slot in storage order
  std::size_t total = 0;

  static ModelLayout build(const ModelConfig& cfg);
  const ParamSlot& find(const std::string& name) const;
};

// Running statistics for one batch-norm layer.
struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
};

struct ModelParams {
  ModelConfig cfg;
  ModelLayout layout;
  std::vector<double> values;
  std::vector<BatchNormStats> bn;  // two per block

  std::size_t count() const noexcept { return values.size(); }
  Matrix matrix(const ParamSlot& slot) const;
  void set(const ParamSlot& slot, const Matrix& m);
  // FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;

  Json to_json() const;
  static ModelParams from_json(const Json& doc);
  static ModelParams load(const std::filesystem::path& path);
};

std::size_t parameter_count(const ModelConfig& cfg);

// Seeded U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit BN
// scales, gamma = cfg.gamma_init and the normalized skeleton graph as the
// shared topology.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// T x V x C feature tensor, frame-major.
struct Features {
  std::size_t frames = 0, joints = 0, channels = 0;
  std::vector<double> data;

  static Features zeros(std::size_t frames, std::size_t joints, std::size_t channels);
  double& at(std::size_t t, std::size_t v, std::size_t c) { return data[(t * joints + v) * channels + c]; }
  double at(std::size_t t, std::size_t v, std::size_t c) const { return data[(t * joints + v) * channels + c]; }
  // Mean over frames, V x C.
  Matrix pool_time() const;
};

// PE[v][2i] = sin(v / 10000^(2i/C)), PE[v][2i+1] = cos(...)
Matrix sinusoidal_pe(std::size_t joints, std::size_t channels);

// X W0 + PE (+ bias) per frame.
Features embed_input(const SkeletonSequence& x, const Matrix& w0, const Matrix& pe,
                     const std::vector<double>& bias = {});

struct MsTcConfig {
  std::size_t kernel = 5;
  std::vector<std::size_t> dilations{1, 2};
  std::size_t pool_window = 3;
  std::size_t stride = 1;
};

struct MsTcParams {
  std::vector<Matrix> depthwise;  // kernel x C
  std::vector<Matrix> pointwise;  // C x C
  Matrix pool_pointwise;          // C x C
  Matrix skip;                    // C x C
};

// Frames produced by a stride-s temporal layer: ceil(T / s).
std::size_t strided_frames(std::size_t frames, std::size_t stride);

// Sum of the dilated branches, the max-pool branch and the 1x1 skip.
// Throws TooShort when T is not longer than the widest padding.
Features ms_tc_forward(const Features& input, const MsTcParams& params, const MsTcConfig& cfg);

enum class BnMode { Batch, Frozen };

struct ForwardOptions {
  BnMode bn = BnMode::Frozen;
  const ClassTemplateSet* templates = nullptr;  // enables the PC-AC head
  // Receives the batch statistics when bn == Batch.
  std::vector<BatchNormStats>* record_stats = nullptr;
};

struct ForwardResult {
  Matrix logits;                    // N x M
  std::vector<Matrix> theta;        // per sample, tapped block pooled over T (V x C)
  std::optional<Matrix> aux_logits; // N x M when templates were given
};

ForwardResult model_forward(const std::vector<SkeletonSequence>& batch, const ModelParams& params,
                            const ForwardOptions& opts = {});

// Z[c] = mean_v sum_ch w_ch (T-C[c] theta)[v][ch] + bias
std::vector<double> pcac_logits(const Matrix& theta, const ClassTemplateSet& templates, std::span<const double> w,
                                double bias);

std::vector<double> softmax(std::span<const double> logits);

// Staged forward pass. model_forward is embed_batch, run_blocks to the end
// and apply_heads; the stages let callers reuse an unchanged prefix.
struct EncoderState {
  std::vector<Features> x;
  std::vector<Matrix> theta;
  std::size_t blocks_done = 0;
};

EncoderState embed_batch(const std::vector<SkeletonSequence>& batch, const ModelParams& params);
void run_blocks(EncoderState& state, const ModelParams& params, const ForwardOptions& opts, std::size_t until);
ForwardResult apply_heads(const EncoderState& state, const ModelParams& params, const ForwardOptions& opts);

// Max-shifted softmax cross-entropy.
double aux_loss(std::span<const double> logits, std::size_t label);

struct LossBreakdown {
  double primary = 0.0;
  double aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;

  Json to_json() const;
};

LossBreakdown total_loss(double primary, double aux, double lambda);

// Mean cross-entropy of the main head plus lambda times the PC-AC head.
LossBreakdown batch_loss(const ForwardResult& out, const std::vector<std::size_t>& labels, double lambda);

struct EnsembleResult {
  Matrix fused;                     // N x M, summed softmax scores
  std::vector<std::size_t> predictions;
};

// Each stream is N x M raw logits. Ties go to the lowest class index.
EnsembleResult ensemble_scores(const std::vector<Matrix>& streams);

std::size_t argmax(std::span<const double> values);

}  // namespace kinegraph

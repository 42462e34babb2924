#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covtrack/grid.hpp"

namespace covtrack {

/// One pointwise layer: out = act(in * weight + bias), applied per cell.
/// `weight` is C_in x C_out. When `relu` is set the activation is max(0, .);
/// otherwise the layer is linear.
struct EmbeddingLayer {
  Matrix weight;
  std::vector<double> bias;
  bool relu = false;
};

struct LayerGradients {
  Matrix weight;
  std::vector<double> bias;
};

struct BackwardResult {
  std::vector<LayerGradients> layers;
  FeatureGrid input;  // gradient w.r.t. the forward input grid
};

/// Pointwise embedding stack with manual reverse-mode gradients.
///
/// forward() caches per-layer activations, so a single net instance must not
/// run forward passes concurrently. backward() consumes the most recent
/// cache and throws StateError when none is present.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;

  /// He-initialized stack: input -> hidden... -> output, ReLU between layers,
  /// linear output so embeddings keep signed values.
  EmbeddingNet(int input_channels, const std::vector<int>& hidden_channels,
               int output_channels, std::uint64_t seed);

  static EmbeddingNet from_layers(std::vector<EmbeddingLayer> layers);

  int input_channels() const;
  int output_channels() const;
  const std::vector<EmbeddingLayer>& layers() const { return layers_; }
  std::vector<EmbeddingLayer>& layers() { return layers_; }

  FeatureGrid forward(const FeatureGrid& f);
  BackwardResult backward(const FeatureGrid& upstream);

  bool has_cache() const { return !cached_inputs_.empty(); }
  void clear_cache();

 private:
  void check_chain() const;

  std::vector<EmbeddingLayer> layers_;
  std::vector<Matrix> cached_inputs_;       // per-layer input, cells x C_in
  std::vector<Matrix> cached_preact_;       // per-layer pre-activation, cells x C_out
  int cached_height_ = 0;
  int cached_width_ = 0;
  int cached_stride_ = 1;
};

/// 2x2 average pooling per channel; doubles the stride metadata.
/// Requires even height and width.
FeatureGrid downsample_embedding(const FeatureGrid& e);

struct AdamConfig {
  double learning_rate = 1.25e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moment buffers are sized
/// on the first step; later steps must pass identically shaped tensors.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<std::span<double>>& params,
            const std::vector<std::span<const double>>& grads);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Parameter tensors of `net` (weight then bias per layer) as mutable spans,
/// in the order matching gradient_spans().
std::vector<std::span<double>> parameter_spans(EmbeddingNet& net);
std::vector<std::span<const double>> gradient_spans(const BackwardResult& grads);

}  // namespace covtrack

#include "covtrack/embedding.hpp"

#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "covtrack/errors.hpp"

namespace covtrack {

EmbeddingNet::EmbeddingNet(int input_channels, const std::vector<int>& hidden_channels,
                           int output_channels, std::uint64_t seed) {
  if (input_channels < 1 || output_channels < 1) {
    throw ShapeError("EmbeddingNet: channel counts must be >= 1");
  }
  std::vector<int> dims;
  dims.push_back(input_channels);
  for (int h : hidden_channels) {
    if (h < 1) throw ShapeError("EmbeddingNet: hidden width must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(output_channels);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    EmbeddingLayer layer;
    layer.weight = Matrix(dims[l], dims[l + 1]);
    const double scale = std::sqrt(2.0 / dims[l]);
    for (double& w : layer.weight.data) w = scale * unit(rng);
    layer.bias.assign(static_cast<std::size_t>(dims[l + 1]), 0.0);
    layer.relu = l + 2 < dims.size();  // no activation after the last layer
    layers_.push_back(std::move(layer));
  }
}

EmbeddingNet EmbeddingNet::from_layers(std::vector<EmbeddingLayer> layers) {
  EmbeddingNet net;
  net.layers_ = std::move(layers);
  net.check_chain();
  return net;
}

void EmbeddingNet::check_chain() const {
  if (layers_.empty()) {
    throw ShapeError("EmbeddingNet: at least one layer required");
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const EmbeddingLayer& layer = layers_[l];
    if (layer.weight.rows < 1 || layer.weight.cols < 1) {
      throw ShapeError("EmbeddingNet: empty weight in layer " + std::to_string(l));
    }
    if (static_cast<int>(layer.bias.size()) != layer.weight.cols) {
      throw ShapeError("EmbeddingNet: bias length mismatch in layer " + std::to_string(l));
    }
    if (l > 0 && layers_[l - 1].weight.cols != layer.weight.rows) {
      throw ShapeError("EmbeddingNet: chained dimensions disagree at layer " +
                       std::to_string(l));
    }
  }
}

int EmbeddingNet::input_channels() const {
  return layers_.empty() ? 0 : layers_.front().weight.rows;
}

int EmbeddingNet::output_channels() const {
  return layers_.empty() ? 0 : layers_.back().weight.cols;
}

void EmbeddingNet::clear_cache() {
  cached_inputs_.clear();
  cached_preact_.clear();
}

FeatureGrid EmbeddingNet::forward(const FeatureGrid& f) {
  check_chain();
  if (f.channels != input_channels()) {
    throw ShapeError("embed forward: grid has " + std::to_string(f.channels) +
                     " channels, net expects " + std::to_string(input_channels()));
  }
  clear_cache();
  cached_height_ = f.height;
  cached_width_ = f.width;
  cached_stride_ = f.stride;

  const int cells = f.height * f.width;
  Matrix x(cells, f.channels);
  x.data = f.data;

  for (const EmbeddingLayer& layer : layers_) {
    cached_inputs_.push_back(x);
    Matrix z = matmul(x, layer.weight);
    for (int r = 0; r < z.rows; ++r) {
      for (int c = 0; c < z.cols; ++c) {
        z.at(r, c) += layer.bias[static_cast<std::size_t>(c)];
      }
    }
    cached_preact_.push_back(z);
    if (layer.relu) {
      for (double& v : z.data) v = v > 0.0 ? v : 0.0;
    }
    x = std::move(z);
  }

  FeatureGrid out(f.height, f.width, output_channels(), f.stride);
  out.data = std::move(x.data);
  return out;
}

BackwardResult EmbeddingNet::backward(const FeatureGrid& upstream) {
  if (cached_inputs_.size() != layers_.size()) {
    throw StateError("embed backward: no forward cache present");
  }
  if (upstream.height != cached_height_ || upstream.width != cached_width_ ||
      upstream.channels != output_channels()) {
    throw ShapeError("embed backward: upstream shape does not match cached forward");
  }

  const int cells = cached_height_ * cached_width_;
  Matrix delta(cells, output_channels());
  delta.data = upstream.data;

  BackwardResult result;
  result.layers.resize(layers_.size());

  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const EmbeddingLayer& layer = layers_[static_cast<std::size_t>(l)];
    const Matrix& x = cached_inputs_[static_cast<std::size_t>(l)];
    const Matrix& z = cached_preact_[static_cast<std::size_t>(l)];

    if (layer.relu) {
      for (std::size_t i = 0; i < delta.data.size(); ++i) {
        if (z.data[i] <= 0.0) delta.data[i] = 0.0;
      }
    }

    LayerGradients& g = result.layers[static_cast<std::size_t>(l)];
    g.weight = Matrix(layer.weight.rows, layer.weight.cols);
    g.bias.assign(layer.bias.size(), 0.0);
    // dW = X^T * delta, db = column sums of delta.
    for (int r = 0; r < cells; ++r) {
      for (int cin = 0; cin < x.cols; ++cin) {
        const double xv = x.at(r, cin);
        if (xv == 0.0) continue;
        for (int cout = 0; cout < delta.cols; ++cout) {
          g.weight.at(cin, cout) += xv * delta.at(r, cout);
        }
      }
      for (int cout = 0; cout < delta.cols; ++cout) {
        g.bias[static_cast<std::size_t>(cout)] += delta.at(r, cout);
      }
    }

    if (l > 0) {
      // delta_prev = delta * W^T
      Matrix next(cells, layer.weight.rows);
      for (int r = 0; r < cells; ++r) {
        for (int cout = 0; cout < delta.cols; ++cout) {
          const double dv = delta.at(r, cout);
          if (dv == 0.0) continue;
          for (int cin = 0; cin < layer.weight.rows; ++cin) {
            next.at(r, cin) += dv * layer.weight.at(cin, cout);
          }
        }
      }
      delta = std::move(next);
    } else {
      FeatureGrid din(cached_height_, cached_width_, layer.weight.rows, cached_stride_);
      for (int r = 0; r < cells; ++r) {
        for (int cout = 0; cout < delta.cols; ++cout) {
          const double dv = delta.at(r, cout);
          if (dv == 0.0) continue;
          for (int cin = 0; cin < layer.weight.rows; ++cin) {
            din.data[static_cast<std::size_t>(r) * layer.weight.rows + cin] +=
                dv * layer.weight.at(cin, cout);
          }
        }
      }
      result.input = std::move(din);
    }
  }
  return result;
}

FeatureGrid downsample_embedding(const FeatureGrid& e) {
  if (e.height % 2 != 0 || e.width % 2 != 0) {
    throw ShapeError("downsample_embedding: dimensions must be even");
  }
  FeatureGrid out(e.height / 2, e.width / 2, e.channels, e.stride * 2);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < e.channels; ++c) {
        out.at(y, x, c) = 0.25 * (e.at(2 * y, 2 * x, c) + e.at(2 * y, 2 * x + 1, c) +
                                  e.at(2 * y + 1, 2 * x, c) + e.at(2 * y + 1, 2 * x + 1, c));
      }
    }
  }
  return out;
}

void AdamOptimizer::step(const std::vector<std::span<double>>& params,
                         const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam step: parameter/gradient tensor counts disagree");
  }
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
      m_[t].assign(params[t].size(), 0.0);
      v_[t].assign(params[t].size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw ShapeError("adam step: tensor count changed between steps");
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() || params[t].size() != m_[t].size()) {
      throw ShapeError("adam step: tensor " + std::to_string(t) + " shape mismatch");
    }
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m_[t][i] = cfg_.beta1 * m_[t][i] + (1.0 - cfg_.beta1) * g;
      v_[t][i] = cfg_.beta2 * v_[t][i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[t][i] / bc1;
      const double vhat = v_[t][i] / bc2;
      params[t][i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

std::vector<std::span<double>> parameter_spans(EmbeddingNet& net) {
  std::vector<std::span<double>> out;
  for (EmbeddingLayer& layer : net.layers()) {
    out.emplace_back(layer.weight.data);
    out.emplace_back(layer.bias);
  }
  return out;
}

std::vector<std::span<const double>> gradient_spans(const BackwardResult& grads) {
  std::vector<std::span<const double>> out;
  for (const LayerGradients& g : grads.layers) {
    out.emplace_back(g.weight.data);
    out.emplace_back(g.bias);
  }
  return out;
}

}  // namespace covtrack

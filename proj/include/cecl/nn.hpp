#pragma once

// A minimal feed-forward network with hand-written backpropagation.
// The network describes the architecture only; parameters live in a flat
// buffer owned by the caller so that optimizer steps, momentum updates and
// checkpoints are plain vector operations.

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "cecl/kernels.hpp"
#include "cecl/rng.hpp"
#include "cecl/types.hpp"

namespace cecl {

struct LinearLayer {
  int in = 0, out = 0;
  std::size_t offset = 0;  // weights (out x in, row-major) then bias (out)
};

struct ReluLayer {};

// 3x3 convolution, stride 1, zero padding 1.
struct Conv3x3Layer {
  int in_channels = 0, out_channels = 0, height = 0, width = 0;
  std::size_t offset = 0;  // weights (out x in x 3 x 3) then bias (out)
};

struct AvgPool2Layer {
  int channels = 0, height = 0, width = 0;  // input geometry, height/width even
};

struct GlobalAvgPoolLayer {
  int channels = 0, height = 0, width = 0;
};

using Layer = std::variant<LinearLayer, ReluLayer, Conv3x3Layer, AvgPool2Layer, GlobalAvgPoolLayer>;

class Network {
 public:
  Network() = default;
  explicit Network(int input_dim);
  explicit Network(ImageShape input);

  Network& linear(int out);
  Network& relu();
  Network& conv3x3(int out_channels);
  Network& avg_pool2();
  Network& global_avg_pool();

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  std::size_t param_count() const { return param_count_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // He-normal weights, biases uniform in +-1/sqrt(fan_in).
  void init_params(std::span<double> params, Rng& rng) const;

  struct Cache {
    std::vector<Matrix> inputs;  // input of every layer
  };

  Matrix forward(std::span<const double> params, const Matrix& x, Cache* cache = nullptr) const;

  // Adds parameter gradients into grad and returns the gradient with respect
  // to the network input.
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& grad_out,
                  std::span<double> grad) const;

 private:
  std::vector<Layer> layers_;
  int input_dim_ = 0;
  int output_dim_ = 0;
  ImageShape shape_;  // current geometry while building convolutional stacks
  std::size_t param_count_ = 0;
};

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

// Per-row cross-entropy -log softmax(logits)[label].
std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels);

std::vector<int> argmax_rows(const Matrix& scores);

}  // namespace cecl

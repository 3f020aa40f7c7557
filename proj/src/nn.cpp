#include "cecl/nn.hpp"

#include <cmath>

#include "cecl/errors.hpp"

namespace cecl {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutableMap = Eigen::Map<Matrix>;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Columns of the 3x3 neighbourhood of every pixel: (in*9) x (h*w).
Matrix im2col(const double* image, int channels, int height, int width) {
  Matrix cols = Matrix::Zero(channels * 9, height * width);
  for (int ch = 0; ch < channels; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = (ch * 3 + ky) * 3 + kx;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= width) continue;
            cols(row, y * width + x) = image[(ch * height + sy) * width + sx];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Matrix& cols, int channels, int height, int width, double* image) {
  for (int ch = 0; ch < channels; ++ch) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const int row = (ch * 3 + ky) * 3 + kx;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= width) continue;
            image[(ch * height + sy) * width + sx] += cols(row, y * width + x);
          }
        }
      }
    }
  }
}

template <typename Body>
void for_each_row(Eigen::Index n, Body&& body) {
  if (default_execution() == Execution::parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) body(i);
  }
}

Matrix conv_forward(const Conv3x3Layer& l, std::span<const double> params, const Matrix& x) {
  const int pixels = l.height * l.width;
  ConstMap w(params.data() + l.offset, l.out_channels, l.in_channels * 9);
  const Eigen::Map<const Vector> b(params.data() + l.offset + static_cast<std::size_t>(w.size()), l.out_channels);
  Matrix y(x.rows(), l.out_channels * pixels);
  for_each_row(x.rows(), [&](Eigen::Index i) {
    const Matrix cols = im2col(x.row(i).data(), l.in_channels, l.height, l.width);
    Matrix out = w * cols;
    out.colwise() += b;
    y.row(i) = Eigen::Map<const RowVector>(out.data(), out.size());
  });
  return y;
}

Matrix conv_backward(const Conv3x3Layer& l, std::span<const double> params, const Matrix& x,
                     const Matrix& dy, std::span<double> grad) {
  const int pixels = l.height * l.width;
  ConstMap w(params.data() + l.offset, l.out_channels, l.in_channels * 9);
  const Eigen::Index weight_count = w.size();
  Matrix dx = Matrix::Zero(x.rows(), x.cols());
  // Per-example weight gradients, reduced afterwards in row order.
  Matrix dw_rows(x.rows(), weight_count + l.out_channels);
  for_each_row(x.rows(), [&](Eigen::Index i) {
    const Matrix cols = im2col(x.row(i).data(), l.in_channels, l.height, l.width);
    const ConstMap dout(dy.row(i).data(), l.out_channels, pixels);
    Matrix dw = dout * cols.transpose();
    dw_rows.row(i).head(weight_count) = Eigen::Map<const RowVector>(dw.data(), weight_count);
    dw_rows.row(i).tail(l.out_channels) = dout.rowwise().sum().transpose();
    const Matrix dcols = w.transpose() * dout;
    col2im_add(dcols, l.in_channels, l.height, l.width, dx.row(i).data());
  });
  Eigen::Map<RowVector> g(grad.data() + l.offset, weight_count + l.out_channels);
  for (Eigen::Index i = 0; i < x.rows(); ++i) g += dw_rows.row(i);
  return dx;
}

}  // namespace

Network::Network(int input_dim) : input_dim_(input_dim), output_dim_(input_dim) {}

Network::Network(ImageShape input)
    : input_dim_(input.size()), output_dim_(input.size()), shape_(input) {}

Network& Network::linear(int out) {
  layers_.push_back(LinearLayer{output_dim_, out, param_count_});
  param_count_ += static_cast<std::size_t>(out) * static_cast<std::size_t>(output_dim_ + 1);
  output_dim_ = out;
  shape_ = {};
  return *this;
}

Network& Network::relu() {
  layers_.push_back(ReluLayer{});
  return *this;
}

Network& Network::conv3x3(int out_channels) {
  if (!shape_.is_image()) throw InternalError("conv3x3 needs image-shaped input");
  layers_.push_back(Conv3x3Layer{shape_.channels, out_channels, shape_.height, shape_.width, param_count_});
  param_count_ += static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(shape_.channels * 9 + 1);
  shape_.channels = out_channels;
  output_dim_ = shape_.size();
  return *this;
}

Network& Network::avg_pool2() {
  if (!shape_.is_image() || shape_.height % 2 != 0 || shape_.width % 2 != 0) {
    throw InternalError("avg_pool2 needs image input with even sides");
  }
  layers_.push_back(AvgPool2Layer{shape_.channels, shape_.height, shape_.width});
  shape_.height /= 2;
  shape_.width /= 2;
  output_dim_ = shape_.size();
  return *this;
}

Network& Network::global_avg_pool() {
  if (!shape_.is_image()) throw InternalError("global_avg_pool needs image input");
  layers_.push_back(GlobalAvgPoolLayer{shape_.channels, shape_.height, shape_.width});
  output_dim_ = shape_.channels;
  shape_ = {};
  return *this;
}

void Network::init_params(std::span<double> params, Rng& rng) const {
  if (params.size() != param_count_) throw InternalError("parameter buffer has the wrong size");
  for (const Layer& layer : layers_) {
    std::visit(Overloaded{
                   [&](const LinearLayer& l) {
                     const double scale = std::sqrt(2.0 / l.in);
                     const std::size_t weights = static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out);
                     for (std::size_t i = 0; i < weights; ++i) params[l.offset + i] = rng.normal(0.0, scale);
                     const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
                     for (int i = 0; i < l.out; ++i) {
                       params[l.offset + weights + static_cast<std::size_t>(i)] = rng.uniform(-bound, bound);
                     }
                   },
                   [&](const Conv3x3Layer& l) {
                     const double scale = std::sqrt(2.0 / (l.in_channels * 9));
                     const std::size_t weights = static_cast<std::size_t>(l.out_channels) * static_cast<std::size_t>(l.in_channels) * 9;
                     for (std::size_t i = 0; i < weights; ++i) params[l.offset + i] = rng.normal(0.0, scale);
                     const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_channels * 9));
                     for (int i = 0; i < l.out_channels; ++i) {
                       params[l.offset + weights + static_cast<std::size_t>(i)] = rng.uniform(-bound, bound);
                     }
                   },
                   [](const auto&) {},
               },
               layer);
  }
}

Matrix Network::forward(std::span<const double> params, const Matrix& x, Cache* cache) const {
  if (x.cols() != input_dim_) {
    throw InputError("network expects " + std::to_string(input_dim_) + " input features, got " +
                     std::to_string(x.cols()));
  }
  if (cache) cache->inputs.clear();
  Matrix current = x;
  for (const Layer& layer : layers_) {
    if (cache) cache->inputs.push_back(current);
    current = std::visit(
        Overloaded{
            [&](const LinearLayer& l) -> Matrix {
              ConstMap w(params.data() + l.offset, l.out, l.in);
              const Eigen::Map<const RowVector> b(params.data() + l.offset + static_cast<std::size_t>(w.size()), l.out);
              Matrix y = current * w.transpose();
              y.rowwise() += b;
              return y;
            },
            [&](const ReluLayer&) -> Matrix { return current.cwiseMax(0.0); },
            [&](const Conv3x3Layer& l) -> Matrix { return conv_forward(l, params, current); },
            [&](const AvgPool2Layer& l) -> Matrix {
              const int oh = l.height / 2, ow = l.width / 2;
              Matrix y(current.rows(), l.channels * oh * ow);
              for (Eigen::Index i = 0; i < current.rows(); ++i) {
                for (int ch = 0; ch < l.channels; ++ch) {
                  for (int y0 = 0; y0 < oh; ++y0) {
                    for (int x0 = 0; x0 < ow; ++x0) {
                      const int base = (ch * l.height + 2 * y0) * l.width + 2 * x0;
                      y(i, (ch * oh + y0) * ow + x0) =
                          0.25 * (current(i, base) + current(i, base + 1) + current(i, base + l.width) +
                                  current(i, base + l.width + 1));
                    }
                  }
                }
              }
              return y;
            },
            [&](const GlobalAvgPoolLayer& l) -> Matrix {
              const int pixels = l.height * l.width;
              Matrix y(current.rows(), l.channels);
              for (Eigen::Index i = 0; i < current.rows(); ++i) {
                for (int ch = 0; ch < l.channels; ++ch) {
                  y(i, ch) = current.row(i).segment(ch * pixels, pixels).mean();
                }
              }
              return y;
            },
        },
        layer);
  }
  return current;
}

Matrix Network::backward(std::span<const double> params, const Cache& cache, const Matrix& grad_out,
                         std::span<double> grad) const {
  if (cache.inputs.size() != layers_.size()) throw InternalError("stale forward cache");
  if (grad.size() != param_count_) throw InternalError("gradient buffer has the wrong size");
  Matrix upstream = grad_out;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const Matrix& input = cache.inputs[idx];
    upstream = std::visit(
        Overloaded{
            [&](const LinearLayer& l) -> Matrix {
              ConstMap w(params.data() + l.offset, l.out, l.in);
              MutableMap dw(grad.data() + l.offset, l.out, l.in);
              Eigen::Map<RowVector> db(grad.data() + l.offset + static_cast<std::size_t>(w.size()), l.out);
              dw.noalias() += upstream.transpose() * input;
              db += upstream.colwise().sum();
              return upstream * w;
            },
            [&](const ReluLayer&) -> Matrix {
              return (input.array() > 0.0).select(upstream.array(), 0.0).matrix();
            },
            [&](const Conv3x3Layer& l) -> Matrix { return conv_backward(l, params, input, upstream, grad); },
            [&](const AvgPool2Layer& l) -> Matrix {
              const int oh = l.height / 2, ow = l.width / 2;
              Matrix dx = Matrix::Zero(input.rows(), input.cols());
              for (Eigen::Index i = 0; i < input.rows(); ++i) {
                for (int ch = 0; ch < l.channels; ++ch) {
                  for (int y0 = 0; y0 < oh; ++y0) {
                    for (int x0 = 0; x0 < ow; ++x0) {
                      const double g = 0.25 * upstream(i, (ch * oh + y0) * ow + x0);
                      const int base = (ch * l.height + 2 * y0) * l.width + 2 * x0;
                      dx(i, base) += g;
                      dx(i, base + 1) += g;
                      dx(i, base + l.width) += g;
                      dx(i, base + l.width + 1) += g;
                    }
                  }
                }
              }
              return dx;
            },
            [&](const GlobalAvgPoolLayer& l) -> Matrix {
              const int pixels = l.height * l.width;
              Matrix dx(input.rows(), input.cols());
              for (Eigen::Index i = 0; i < input.rows(); ++i) {
                for (int ch = 0; ch < l.channels; ++ch) {
                  dx.row(i).segment(ch * pixels, pixels).setConstant(upstream(i, ch) / pixels);
                }
              }
              return dx;
            },
        },
        layers_[idx]);
  }
  return upstream;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - top).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

std::vector<double> cross_entropy_rows(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw InternalError("cross_entropy_rows: size mismatch");
  std::vector<double> loss(labels.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
    loss[static_cast<std::size_t>(i)] = lse - logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return loss;
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best;
    scores.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cecl

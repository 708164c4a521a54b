#pragma once

#include <cstddef>
#include <span>

namespace msafeb::kernels {

/// Resolved extents of one 2-D convolution over an NCHW batch.
/// Weights are (out_channels, in_channels / groups, k, k).
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;
  std::size_t pad = 0;  // symmetric, per side
  std::size_t out_height = 1;
  std::size_t out_width = 1;

  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t output_size() const { return batch * out_channels * out_height * out_width; }
  std::size_t weight_size() const { return out_channels * in_per_group() * kernel * kernel; }
};

// OpenMP kernels. Work is partitioned so every output element is owned by a
// single thread and summed in a fixed order: results do not depend on the
// thread count.

/// out = conv(in, w) + b. bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const float> in,
                    std::span<const float> w, std::span<const float> bias,
                    std::span<float> out);
/// grad_in += conv^T(grad_out, w).
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> w, std::span<float> grad_in);
/// grad_w += correlation of grad_out with in.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_out,
                            std::span<const float> in, std::span<float> grad_w);
/// grad_b += per-channel sum of grad_out.
void conv2d_backward_bias(const ConvGeometry& g, std::span<const float> grad_out,
                          std::span<float> grad_b);

/// Serial reference implementations, one output element at a time.
namespace serial {
void conv2d_forward(const ConvGeometry& g, std::span<const float> in,
                    std::span<const float> w, std::span<const float> bias,
                    std::span<float> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const float> grad_out,
                           std::span<const float> w, std::span<float> grad_in);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const float> grad_out,
                            std::span<const float> in, std::span<float> grad_w);
void conv2d_backward_bias(const ConvGeometry& g, std::span<const float> grad_out,
                          std::span<float> grad_b);
}  // namespace serial

/// Number of OpenMP threads the kernels will use (1 without OpenMP).
int max_threads();

}  // namespace msafeb::kernels

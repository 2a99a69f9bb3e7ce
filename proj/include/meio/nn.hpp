#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "meio/rng.hpp"

namespace meio {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Flat parameter storage. The fixed alignment keeps Eigen's vectorized
/// kernels on the same code path every run, so results are bit-reproducible.
using ParamVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Fully connected network with ReLU hidden layers and a linear output.
/// The object only describes the layout; parameters live in an external flat
/// buffer starting at `offset()` so several networks can share one optimizer.
/// Per layer the buffer holds W (out x in, column-major) followed by b.
class Mlp {
 public:
  Mlp() = default;
  Mlp(int inputs, std::vector<int> hidden, int outputs, std::size_t offset = 0);

  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  const std::vector<int>& sizes() const { return sizes_; }
  std::size_t offset() const { return offset_; }
  std::size_t parameter_count() const { return count_; }
  std::size_t end() const { return offset_ + count_; }

  /// Activations of every layer for one forward pass (features x batch).
  struct Cache {
    std::vector<Matrix> layer;  // layer[0] = input, layer[i] = post-activation output of layer i
  };

  /// x is inputs x batch; returns outputs x batch. Pass a cache to enable backward().
  Matrix forward(std::span<const double> params, const Matrix& x, Cache* cache = nullptr) const;

  /// Accumulates dLoss/dparams into `grad` (same layout as params) given
  /// dLoss/doutput. Returns dLoss/dinput.
  Matrix backward(std::span<const double> params, const Cache& cache, const Matrix& d_out,
                  std::span<double> grad) const;

  /// Orthogonal initialization: gain sqrt(2) on hidden layers, `output_gain`
  /// on the last layer, zero biases.
  void initialize(std::span<double> params, Rng& rng, double output_gain) const;

 private:
  std::size_t weight_offset(std::size_t layer) const { return layer_offset_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return layer_offset_[layer] + static_cast<std::size_t>(sizes_[layer + 1] * sizes_[layer]);
  }

  std::vector<int> sizes_;
  std::vector<std::size_t> layer_offset_;
  std::size_t offset_ = 0;
  std::size_t count_ = 0;
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-5);

  void step(std::span<double> params, std::span<const double> grad);
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Scales `grad` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<double> grad, double max_norm);

/// While alive, the calling thread flushes subnormal results and inputs to
/// zero. Optimizer moments of dead units decay geometrically into the
/// subnormal range, where x86 arithmetic is orders of magnitude slower.
/// Results stay deterministic because every training run uses the same mode.
class FlushSubnormals {
 public:
  FlushSubnormals();
  ~FlushSubnormals();
  FlushSubnormals(const FlushSubnormals&) = delete;
  FlushSubnormals& operator=(const FlushSubnormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace meio

#include "meio/nn.hpp"

#include <cmath>

#include "meio/distributions.hpp"
#include "meio/error.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace meio {

namespace {

using MapMatrix = Eigen::Map<const Eigen::MatrixXd>;
using MapVector = Eigen::Map<const Eigen::VectorXd>;

#if defined(__SSE2__)
constexpr unsigned kFlushBits = 0x8040;  // flush-to-zero | denormals-are-zero
#endif

}  // namespace

Mlp::Mlp(int inputs, std::vector<int> hidden, int outputs, std::size_t offset) : offset_(offset) {
  require(inputs > 0 && outputs > 0, ErrorKind::kContract, "network dimensions must be positive");
  sizes_.push_back(inputs);
  for (int h : hidden) {
    require(h > 0, ErrorKind::kContract, "hidden widths must be positive");
    sizes_.push_back(h);
  }
  sizes_.push_back(outputs);
  std::size_t pos = offset_;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layer_offset_.push_back(pos);
    pos += static_cast<std::size_t>(sizes_[l + 1]) * static_cast<std::size_t>(sizes_[l] + 1);
  }
  count_ = pos - offset_;
}

Matrix Mlp::forward(std::span<const double> params, const Matrix& x, Cache* cache) const {
  require(x.rows() == inputs(), ErrorKind::kContract, "network input has the wrong width");
  require(params.size() >= end(), ErrorKind::kContract, "parameter buffer too small");
  const std::size_t layers = sizes_.size() - 1;
  if (cache) {
    cache->layer.resize(layers + 1);
    cache->layer[0] = x;
  }
  Matrix a = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const MapMatrix w(params.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
    const MapVector b(params.data() + bias_offset(l), sizes_[l + 1]);
    Matrix z = w * a;
    z.colwise() += b;
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    a = std::move(z);
    if (cache) cache->layer[l + 1] = a;
  }
  return a;
}

Matrix Mlp::backward(std::span<const double> params, const Cache& cache, const Matrix& d_out,
                     std::span<double> grad) const {
  const std::size_t layers = sizes_.size() - 1;
  require(cache.layer.size() == layers + 1, ErrorKind::kContract, "backward without forward cache");
  require(grad.size() >= end(), ErrorKind::kContract, "gradient buffer too small");
  Matrix delta = d_out;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) {
      // ReLU derivative taken from the post-activation output.
      delta = delta.cwiseProduct((cache.layer[l + 1].array() > 0.0).cast<double>().matrix());
    }
    Eigen::Map<Matrix> dw(grad.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
    Eigen::Map<Vector> db(grad.data() + bias_offset(l), sizes_[l + 1]);
    dw.noalias() += delta * cache.layer[l].transpose();
    db += delta.rowwise().sum();
    const MapMatrix w(params.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
    delta = w.transpose() * delta;
  }
  return delta;
}

void Mlp::initialize(std::span<double> params, Rng& rng, double output_gain) const {
  require(params.size() >= end(), ErrorKind::kContract, "parameter buffer too small");
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int rows = sizes_[l + 1];
    const int cols = sizes_[l];
    const double gain = l + 1 < layers ? std::sqrt(2.0) : output_gain;
    // QR of a Gaussian matrix with the sign of R's diagonal folded into Q.
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Matrix g(big, small);
    for (int j = 0; j < small; ++j)
      for (int i = 0; i < big; ++i) g(i, j) = standard_normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(big, small);
    const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j)
      if (r(j, j) < 0.0) q.col(j) *= -1.0;
    Eigen::Map<Matrix> w(params.data() + weight_offset(l), rows, cols);
    if (rows >= cols) w = gain * q;
    else w = gain * q.transpose();
    Eigen::Map<Vector>(params.data() + bias_offset(l), rows).setZero();
  }
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t size, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  require(params.size() == m_.size() && grad.size() == m_.size(), ErrorKind::kContract,
          "optimizer state does not match the parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto n = static_cast<Eigen::Index>(params.size());
  Eigen::Map<Eigen::ArrayXd> p(params.data(), n), m(m_.data(), n), v(v_.data(), n);
  const Eigen::Map<const Eigen::ArrayXd> g(grad.data(), n);
  m = beta1_ * m + (1.0 - beta1_) * g;
  v = beta2_ * v + (1.0 - beta2_) * g.square();
  p -= lr_ * (m / c1) / ((v / c2).sqrt() + eps_);
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  Eigen::Map<Eigen::ArrayXd> g(grad.data(), static_cast<Eigen::Index>(grad.size()));
  const double norm = std::sqrt(g.square().sum());
  if (norm > max_norm && norm > 0.0) g *= max_norm / norm;
  return norm;
}

#if defined(__SSE2__)
FlushSubnormals::FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | kFlushBits); }
FlushSubnormals::~FlushSubnormals() { _mm_setcsr(saved_); }
#else
FlushSubnormals::FlushSubnormals() = default;
FlushSubnormals::~FlushSubnormals() = default;
#endif

}  // namespace meio

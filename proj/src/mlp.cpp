#include "wr2l/mlp.hpp"

#include <cmath>

namespace wr2l {

namespace {

using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;
using ConstVecMap = Eigen::Map<const Vec>;
using MutVecMap = Eigen::Map<Vec>;

}  // namespace

Mlp::Mlp(int input_dim, int hidden_dim, int output_dim)
    : input_dim_(input_dim), hidden_dim_(hidden_dim), output_dim_(output_dim) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1) {
    throw InvalidArgument("Mlp dimensions must be positive");
  }
  params_ = Vec::Zero(layout().total);
}

Mlp::Layout Mlp::layout() const {
  Layout l{};
  const Eigen::Index i = input_dim_, h = hidden_dim_, o = output_dim_;
  l.w1 = 0;
  l.b1 = l.w1 + h * i;
  l.w2 = l.b1 + h;
  l.b2 = l.w2 + h * h;
  l.w3 = l.b2 + h;
  l.b3 = l.w3 + o * h;
  l.total = l.b3 + o;
  return l;
}

void Mlp::initialize(Rng& rng, double output_scale) {
  const Layout l = layout();
  params_.setZero();
  const double s1 = 1.0 / std::sqrt(static_cast<double>(input_dim_));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim_));
  for (Eigen::Index k = l.w1; k < l.b1; ++k) params_[k] = s1 * rng.normal();
  for (Eigen::Index k = l.w2; k < l.b2; ++k) params_[k] = s2 * rng.normal();
  for (Eigen::Index k = l.w3; k < l.b3; ++k) {
    params_[k] = output_scale * s2 * rng.normal();
  }
}

Mat Mlp::forward(const Mat& x, Cache* cache) const {
  const Layout l = layout();
  const double* p = params_.data();
  const ConstMap w1(p + l.w1, hidden_dim_, input_dim_);
  const ConstVecMap b1(p + l.b1, hidden_dim_);
  const ConstMap w2(p + l.w2, hidden_dim_, hidden_dim_);
  const ConstVecMap b2(p + l.b2, hidden_dim_);
  const ConstMap w3(p + l.w3, output_dim_, hidden_dim_);
  const ConstVecMap b3(p + l.b3, output_dim_);

  Mat h1 = ((w1 * x).colwise() + b1).array().tanh().matrix();
  Mat h2 = ((w2 * h1).colwise() + b2).array().tanh().matrix();
  Mat out = (w3 * h2).colwise() + b3;
  if (cache != nullptr) {
    cache->input = x;
    cache->hidden1 = std::move(h1);
    cache->hidden2 = std::move(h2);
  }
  return out;
}

Vec Mlp::forward(const Vec& x) const {
  const Layout l = layout();
  const double* p = params_.data();
  const ConstMap w1(p + l.w1, hidden_dim_, input_dim_);
  const ConstVecMap b1(p + l.b1, hidden_dim_);
  const ConstMap w2(p + l.w2, hidden_dim_, hidden_dim_);
  const ConstVecMap b2(p + l.b2, hidden_dim_);
  const ConstMap w3(p + l.w3, output_dim_, hidden_dim_);
  const ConstVecMap b3(p + l.b3, output_dim_);
  const Vec h1 = (w1 * x + b1).array().tanh().matrix();
  const Vec h2 = (w2 * h1 + b2).array().tanh().matrix();
  return w3 * h2 + b3;
}

void Mlp::backward(const Cache& cache, const Mat& dout, Vec& grad,
                   Mat* dinput) const {
  const Layout l = layout();
  const double* p = params_.data();
  const ConstMap w1(p + l.w1, hidden_dim_, input_dim_);
  const ConstMap w2(p + l.w2, hidden_dim_, hidden_dim_);
  const ConstMap w3(p + l.w3, output_dim_, hidden_dim_);

  double* g = grad.data();
  MutMap gw1(g + l.w1, hidden_dim_, input_dim_);
  MutVecMap gb1(g + l.b1, hidden_dim_);
  MutMap gw2(g + l.w2, hidden_dim_, hidden_dim_);
  MutVecMap gb2(g + l.b2, hidden_dim_);
  MutMap gw3(g + l.w3, output_dim_, hidden_dim_);
  MutVecMap gb3(g + l.b3, output_dim_);

  gw3.noalias() += dout * cache.hidden2.transpose();
  gb3 += dout.rowwise().sum();
  const Mat dh2 = ((w3.transpose() * dout).array() *
                   (1.0 - cache.hidden2.array().square()))
                      .matrix();
  gw2.noalias() += dh2 * cache.hidden1.transpose();
  gb2 += dh2.rowwise().sum();
  const Mat dh1 = ((w2.transpose() * dh2).array() *
                   (1.0 - cache.hidden1.array().square()))
                      .matrix();
  gw1.noalias() += dh1 * cache.input.transpose();
  gb1 += dh1.rowwise().sum();
  if (dinput != nullptr) *dinput = w1.transpose() * dh1;
}

}  // namespace wr2l

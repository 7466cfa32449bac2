#pragma once

#include "wr2l/common.hpp"

namespace wr2l {

// Two-hidden-layer tanh perceptron with a linear output layer. All weights
// live in one flat vector so optimizers and checkpoints see a single array.
class Mlp {
 public:
  struct Cache {
    Mat input;
    Mat hidden1;
    Mat hidden2;
  };

  Mlp() = default;
  Mlp(int input_dim, int hidden_dim, int output_dim);

  // Scaled-Gaussian init; the output layer is scaled by `output_scale`
  // (0 gives an all-zero output layer).
  void initialize(Rng& rng, double output_scale);

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int output_dim() const { return output_dim_; }
  Eigen::Index num_params() const { return params_.size(); }

  const Vec& params() const { return params_; }
  Vec& params() { return params_; }

  // Columns of `x` are samples.
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Vec forward(const Vec& x) const;

  // Adds d(Σ dout ⊙ forward(x)) / dparams to `grad`; returns d/dinput when
  // `dinput` is non-null.
  void backward(const Cache& cache, const Mat& dout, Vec& grad,
                Mat* dinput = nullptr) const;

 private:
  struct Layout {
    Eigen::Index w1, b1, w2, b2, w3, b3, total;
  };
  Layout layout() const;

  int input_dim_ = 0;
  int hidden_dim_ = 0;
  int output_dim_ = 0;
  Vec params_;
};

}  // namespace wr2l

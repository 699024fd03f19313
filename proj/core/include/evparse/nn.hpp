#pragma once

#include <random>
#include <string>
#include <vector>

#include "evparse/autodiff.hpp"

namespace evparse::nn {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Gaussian init with std sqrt(2 / (fan_in + fan_out)).
Parameter glorot(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 std::mt19937_64& rng);
Parameter zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
Parameter ones(const std::string& name, Eigen::Index rows, Eigen::Index cols);

// Pre-norm transformer block: x += MHA(LN(x)); x += FFN(LN(x)).
// The feed-forward inner width is 4x the model dimension.
struct TransformerBlock {
  std::size_t n_heads = 1;
  Parameter ln1_gamma, ln1_beta;
  Parameter w_q, w_k, w_v, w_o;
  Parameter ln2_gamma, ln2_beta;
  Parameter ff_w1, ff_b1, ff_w2, ff_b2;

  static TransformerBlock create(const std::string& prefix, std::size_t dim,
                                 std::size_t n_heads, std::mt19937_64& rng);

  Var forward(Tape& tape, Var x, double dropout, bool train,
              std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
};

// Bilinear scorer s(x, y) = x U y' + u x' + v y' + b applied over row pairs.
struct Biaffine {
  Parameter u_mat;    // left_dim x right_dim
  Parameter u_left;   // left_dim x 1
  Parameter v_right;  // right_dim x 1
  Parameter bias;     // 1 x 1

  static Biaffine create(const std::string& prefix, std::size_t left_dim,
                         std::size_t right_dim, std::mt19937_64& rng);

  // All pairs: (n_left, left_dim) x (n_right, right_dim) -> (n_left, n_right).
  Var pairwise(Tape& tape, Var left, Var right);
  // Row-aligned pairs: both (k, dim) -> (k, 1).
  Var paired(Tape& tape, Var left, Var right);
  void collect(std::vector<Parameter*>& out);
};

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double learning_rate,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double learning_rate() const { return learning_rate_; }
  void zero_grad();
  void step();

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  double learning_rate_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

}  // namespace evparse::nn

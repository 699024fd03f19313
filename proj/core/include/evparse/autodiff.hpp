#pragma once

#include <Eigen/Dense>

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace evparse::ad {

using Mat = Eigen::MatrixXd;

// A named trainable tensor. Gradients accumulate across backward passes
// until zero_grad().
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  Parameter() = default;
  Parameter(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run expression tape over double matrices. Values are computed
// eagerly; backward() runs the recorded closures in reverse order and adds
// leaf gradients into their Parameters. One tape per forward pass.
class Tape {
 public:
  Var constant(Mat value);
  Var param(Parameter& p);

  Var add(Var a, Var b);                       // same shape
  Var add_row_broadcast(Var a, Var row);       // (n,m) + (1,m)
  Var add_col_broadcast(Var a, Var col);       // (n,m) + (n,1)
  Var add_scalar_broadcast(Var a, Var scalar); // (n,m) + (1,1)
  Var scale(Var a, double factor);
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var cmul(Var a, Var b);                      // elementwise
  Var row_sum(Var a);                          // (n,m) -> (n,1)
  Var transpose(Var a);
  Var slice_cols(Var a, int start, int count);
  Var gather_rows(Var a, std::vector<int> rows);
  Var vstack(const std::vector<Var>& parts);
  Var hstack(const std::vector<Var>& parts);

  Var gelu(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
  Var dropout(Var a, double rate, std::mt19937_64& rng, bool train);

  // Mean negative log-likelihood over rows; target is a class per row.
  Var softmax_cross_entropy(Var logits, const std::vector<int>& target);
  // Mean binary cross-entropy (with logits) over entries where mask != 0.
  Var sigmoid_bce(Var logits, const Mat& targets, const Mat& mask);
  // sum_i coefficient_i * term_i over 1x1 vars.
  Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

  const Mat& value(Var v) const;
  double scalar(Var v) const;

  // Seeds d(loss)=1 and sweeps the tape in reverse. loss must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;            // unused for param nodes
    Mat grad;
    Parameter* parameter = nullptr;
    std::function<void(Tape&, const Mat&)> backprop;  // upstream grad -> inputs
  };

  std::vector<Node> nodes_;

  Var push(Mat value, std::function<void(Tape&, const Mat&)> backprop);
  Mat& grad(Var v) { return nodes_[v.id].grad; }
  const Mat& val(int id) const {
    const Node& n = nodes_[id];
    return n.parameter ? n.parameter->value : n.value;
  }
};

}  // namespace evparse::ad

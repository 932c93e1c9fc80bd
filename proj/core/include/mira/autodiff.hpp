#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace mira::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense double matrices. A fresh tape is built per
// forward pass; backward() walks the nodes in reverse creation order.
// Values are stored by value, so tapes are self-contained and params are
// registered as leaves each pass.
class Tape {
 public:
  Var leaf(Mat value);

  const Mat& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Mat& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var cmul(Var a, Var b);              // elementwise product, same shape
  Var scale(Var a, double s);
  Var affine(Var a, double mul, double shift);  // mul * a + shift, entrywise
  Var add_rowvec(Var a, Var row);      // broadcast 1xC over rows of a
  Var add_scalar(Var a, Var s);        // broadcast 1x1 over all entries
  Var mul_scalar(Var a, Var s);        // entrywise product with a 1x1
  Var concat_cols(Var a, Var b);
  Var concat_rows(Var a, Var b);
  Var rows_range(Var a, int start, int count);
  Var cols_range(Var a, int start, int count);
  Var row(Var a, int r) { return rows_range(a, r, 1); }
  Var gather_rows(Var table, std::vector<int> idx);
  Var row_mean(Var a);                 // 1xC mean over rows
  Var sum_all(Var a);                  // 1x1 sum of entries
  Var dot(Var a, Var b);               // 1x1 sum(a .* b), same shape
  Var softmax_rows(Var a);
  Var gelu(Var a);                     // exact x * Phi(x)
  Var elu(Var a);
  Var tanh_(Var a);
  Var leaky_relu(Var a, double slope);
  Var softplus(Var a);                 // log(1 + exp(x)), stable
  Var rsqrt(Var a);                    // entrywise x^(-1/2)
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var add_many(const std::vector<Var>& terms);  // left fold, fixed order

  // Seeds d(out)/d(out) = 1 (out must be 1x1) and accumulates grads.
  void backward(Var out);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;  // empty for leaves
  };

  Var make(Mat value, std::function<void()> back);
  Mat& grad_mut(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }

  std::vector<Node> nodes_;
};

// Exact Gelu pieces shared with the non-tape oracle paths.
double gelu_value(double x);
double gelu_derivative(double x);
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace mira::ad

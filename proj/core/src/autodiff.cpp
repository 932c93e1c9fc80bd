#include "mira/autodiff.hpp"

#include <cmath>

#include "mira/error.hpp"

namespace mira::ad {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

double gelu_value(double x) { return x * 0.5 * std::erfc(-x * kInvSqrt2); }

double gelu_derivative(double x) {
  const double phi_cdf = 0.5 * std::erfc(-x * kInvSqrt2);
  const double phi_pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return phi_cdf + x * phi_pdf;
}

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var Tape::make(Mat value, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  node.grad = Mat::Zero(node.value.rows(), node.value.cols());
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value) { return make(std::move(value), {}); }

Var Tape::add(Var a, Var b) {
  Var out = make(val(a) + val(b), {});
  nodes_.back().back = [this, a, b, out] {
    grad_mut(a) += grad(out);
    grad_mut(b) += grad(out);
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  Var out = make(val(a) - val(b), {});
  nodes_.back().back = [this, a, b, out] {
    grad_mut(a) += grad(out);
    grad_mut(b) -= grad(out);
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  Var out = make(val(a) * val(b), {});
  nodes_.back().back = [this, a, b, out] {
    grad_mut(a) += grad(out) * val(b).transpose();
    grad_mut(b) += val(a).transpose() * grad(out);
  };
  return out;
}

Var Tape::transpose(Var a) {
  Var out = make(val(a).transpose(), {});
  nodes_.back().back = [this, a, out] { grad_mut(a) += grad(out).transpose(); };
  return out;
}

Var Tape::cmul(Var a, Var b) {
  Var out = make(val(a).cwiseProduct(val(b)), {});
  nodes_.back().back = [this, a, b, out] {
    grad_mut(a) += grad(out).cwiseProduct(val(b));
    grad_mut(b) += grad(out).cwiseProduct(val(a));
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = make(val(a) * s, {});
  nodes_.back().back = [this, a, s, out] { grad_mut(a) += grad(out) * s; };
  return out;
}

Var Tape::affine(Var a, double mul, double shift) {
  Var out = make((val(a).array() * mul + shift).matrix(), {});
  nodes_.back().back = [this, a, mul, out] { grad_mut(a) += grad(out) * mul; };
  return out;
}

Var Tape::add_rowvec(Var a, Var row) {
  Mat v = val(a);
  v.rowwise() += val(row).row(0);
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, row, out] {
    grad_mut(a) += grad(out);
    grad_mut(row) += grad(out).colwise().sum();
  };
  return out;
}

Var Tape::add_scalar(Var a, Var s) {
  Var out = make(val(a).array() + val(s)(0, 0), {});
  nodes_.back().back = [this, a, s, out] {
    grad_mut(a) += grad(out);
    grad_mut(s)(0, 0) += grad(out).sum();
  };
  return out;
}

Var Tape::mul_scalar(Var a, Var s) {
  Var out = make(val(a) * val(s)(0, 0), {});
  nodes_.back().back = [this, a, s, out] {
    grad_mut(a) += grad(out) * val(s)(0, 0);
    grad_mut(s)(0, 0) += grad(out).cwiseProduct(val(a)).sum();
  };
  return out;
}

Var Tape::concat_cols(Var a, Var b) {
  Mat v(val(a).rows(), val(a).cols() + val(b).cols());
  v << val(a), val(b);
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, b, out] {
    const auto ca = val(a).cols();
    grad_mut(a) += grad(out).leftCols(ca);
    grad_mut(b) += grad(out).rightCols(val(b).cols());
  };
  return out;
}

Var Tape::concat_rows(Var a, Var b) {
  Mat v(val(a).rows() + val(b).rows(), val(a).cols());
  v << val(a), val(b);
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, b, out] {
    const auto ra = val(a).rows();
    grad_mut(a) += grad(out).topRows(ra);
    grad_mut(b) += grad(out).bottomRows(val(b).rows());
  };
  return out;
}

Var Tape::rows_range(Var a, int start, int count) {
  Var out = make(val(a).middleRows(start, count), {});
  nodes_.back().back = [this, a, start, count, out] {
    grad_mut(a).middleRows(start, count) += grad(out);
  };
  return out;
}

Var Tape::cols_range(Var a, int start, int count) {
  Var out = make(val(a).middleCols(start, count), {});
  nodes_.back().back = [this, a, start, count, out] {
    grad_mut(a).middleCols(start, count) += grad(out);
  };
  return out;
}

Var Tape::gather_rows(Var table, std::vector<int> idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), val(table).cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = val(table).row(idx[i]);
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, table, idx = std::move(idx), out] {
    for (size_t i = 0; i < idx.size(); ++i)
      grad_mut(table).row(idx[i]) += grad(out).row(static_cast<Eigen::Index>(i));
  };
  return out;
}

Var Tape::row_mean(Var a) {
  const double inv = 1.0 / static_cast<double>(val(a).rows());
  Var out = make(val(a).colwise().sum() * inv, {});
  nodes_.back().back = [this, a, inv, out] {
    grad_mut(a) += (grad(out) * inv).replicate(val(a).rows(), 1);
  };
  return out;
}

Var Tape::sum_all(Var a) {
  Mat v(1, 1);
  v(0, 0) = val(a).sum();
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a).array() += grad(out)(0, 0);
  };
  return out;
}

Var Tape::dot(Var a, Var b) {
  Mat v(1, 1);
  v(0, 0) = val(a).cwiseProduct(val(b)).sum();
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, b, out] {
    const double g = grad(out)(0, 0);
    grad_mut(a) += g * val(b);
    grad_mut(b) += g * val(a);
  };
  return out;
}

Var Tape::softmax_rows(Var a) {
  Mat v = val(a);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mx = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - mx).exp();
    v.row(r) /= v.row(r).sum();
  }
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, a, out] {
    const Mat& y = val(out);
    const Mat& g = grad(out);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot_gy = g.row(r).cwiseProduct(y.row(r)).sum();
      grad_mut(a).row(r) += y.row(r).cwiseProduct(g.row(r).array() - dot_gy);
    }
  };
  return out;
}

Var Tape::gelu(Var a) {
  Var out = make(val(a).unaryExpr([](double x) { return gelu_value(x); }), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a) +=
        grad(out).cwiseProduct(val(a).unaryExpr([](double x) { return gelu_derivative(x); }));
  };
  return out;
}

Var Tape::elu(Var a) {
  Var out = make(val(a).unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); }), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a) += grad(out).cwiseProduct(
        val(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); }));
  };
  return out;
}

Var Tape::tanh_(Var a) {
  Var out = make(val(a).array().tanh().matrix(), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a) += grad(out).cwiseProduct((1.0 - val(out).array().square()).matrix());
  };
  return out;
}

Var Tape::leaky_relu(Var a, double slope) {
  Var out = make(val(a).unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; }), {});
  nodes_.back().back = [this, a, slope, out] {
    grad_mut(a) += grad(out).cwiseProduct(
        val(a).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; }));
  };
  return out;
}

Var Tape::softplus(Var a) {
  Var out = make(val(a).unaryExpr([](double x) { return softplus_value(x); }), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a) +=
        grad(out).cwiseProduct(val(a).unaryExpr([](double x) { return sigmoid_value(x); }));
  };
  return out;
}

Var Tape::rsqrt(Var a) {
  Var out = make(val(a).unaryExpr([](double x) { return 1.0 / std::sqrt(x); }), {});
  nodes_.back().back = [this, a, out] {
    grad_mut(a) += grad(out).cwiseProduct(
        val(a).unaryExpr([](double x) { return -0.5 / (x * std::sqrt(x)); }));
  };
  return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Mat& xv = val(x);
  const Eigen::Index rows = xv.rows(), cols = xv.cols();
  Mat normed(rows, cols);
  Mat inv_std(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().sum() / static_cast<double>(cols);
    inv_std(r, 0) = 1.0 / std::sqrt(var + eps);
    normed.row(r) = (xv.row(r).array() - mean) * inv_std(r, 0);
  }
  Mat v = normed;
  for (Eigen::Index r = 0; r < rows; ++r)
    v.row(r) = v.row(r).cwiseProduct(val(gain).row(0)) + val(bias).row(0);
  Var out = make(std::move(v), {});
  nodes_.back().back = [this, x, gain, bias, normed = std::move(normed),
                        inv_std = std::move(inv_std), out] {
    const Mat& g = grad(out);
    const Eigen::Index rows2 = g.rows(), cols2 = g.cols();
    const double n = static_cast<double>(cols2);
    for (Eigen::Index r = 0; r < rows2; ++r) {
      grad_mut(bias).row(0) += g.row(r);
      grad_mut(gain).row(0) += g.row(r).cwiseProduct(normed.row(r));
      const Eigen::RowVectorXd gx = g.row(r).cwiseProduct(val(gain).row(0));
      const double mean_gx = gx.mean();
      const double mean_gx_xhat = gx.cwiseProduct(normed.row(r)).sum() / n;
      grad_mut(x).row(r) +=
          inv_std(r, 0) *
          (gx.array() - mean_gx - normed.row(r).array() * mean_gx_xhat).matrix();
    }
  };
  return out;
}

Var Tape::add_many(const std::vector<Var>& terms) {
  if (terms.empty()) throw Error("internal", "add_many of nothing");
  Var acc = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

void Tape::backward(Var out) {
  if (val(out).rows() != 1 || val(out).cols() != 1)
    throw Error("internal", "backward target must be 1x1");
  grad_mut(out)(0, 0) = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back && static_cast<int>(i) <= out.id) nodes_[i].back();
  }
}

}  // namespace mira::ad

#include "infosculpt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "infosculpt/errors.hpp"

namespace infosculpt {

const Matrix& Var::value() const { return tape_->node(id_).value; }
const Matrix& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("Var::scalar on a " + v.shape_string() + " node");
  }
  return v(0, 0);
}

const Matrix& BackwardContext::grad_out() const { return tape_.node(self_).grad; }
const Matrix& BackwardContext::out() const { return tape_.node(self_).value; }
const Matrix& BackwardContext::input(std::size_t i) const {
  return tape_.node(tape_.node(self_).parents.at(i)).value;
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.op = "parameter";
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(std::string_view op, Matrix value, std::vector<Var> parents, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw ContractError(std::string(op) + ": operand from another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (n.requires_grad) {
    if (!backward) throw ContractError(std::string(op) + ": missing backward rule");
    n.grad = Matrix(n.value.rows(), n.value.cols());
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward: root from another tape");
  Node& r = nodes_.at(root.id());
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ContractError("backward: root must be 1x1, got " + r.value.shape_string());
  }
  if (!r.requires_grad) return;
  for (std::size_t i = 0; i <= root.id(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && !n.parents.empty()) n.grad.fill(0.0);
  }
  r.grad(0, 0) += 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    std::vector<Matrix*> pg;
    pg.reserve(n.parents.size());
    for (std::size_t p : n.parents) {
      pg.push_back(nodes_[p].requires_grad ? &nodes_[p].grad : nullptr);
    }
    n.backward(BackwardContext(*this, i, std::move(pg)));
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_)
    if (n.requires_grad) n.grad.fill(0.0);
}

namespace ad {
namespace {

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

bool is_row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && b.cols() == a.cols() && a.rows() != 1;
}

void accumulate(Matrix* dst, const Matrix& src, double s = 1.0) {
  if (dst == nullptr) return;
  auto d = dst->data();
  auto v = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * v[i];
}

// Adds column sums of `src` into the 1 x cols accumulator `dst`.
void accumulate_col_sums(Matrix* dst, const Matrix& src, double s = 1.0) {
  if (dst == nullptr) return;
  for (std::size_t i = 0; i < src.rows(); ++i) {
    auto r = src.row(i);
    for (std::size_t j = 0; j < src.cols(); ++j) (*dst)(0, j) += s * r[j];
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

double row_max_checked(const char* op, std::span<const double> row, std::size_t r) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : row) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw DomainError(std::string(op) + ": non-finite entry in row " + std::to_string(r));
    }
    mx = std::max(mx, v);
  }
  if (!std::isfinite(mx)) {
    throw DomainError(std::string(op) + ": row " + std::to_string(r) + " has no finite entry");
  }
  return mx;
}

Var elementwise_binary(const char* op, Var a, Var b, double sign) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const bool bcast = is_row_broadcast(av, bv);
  if (!bcast) require_same_shape(op, av, bv);
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto o = out.row(i);
    auto br = bv.row(bcast ? 0 : i);
    for (std::size_t j = 0; j < out.cols(); ++j) o[j] += sign * br[j];
  }
  return a.tape().record(op, std::move(out), {a, b}, [bcast, sign](const BackwardContext& ctx) {
    accumulate(ctx.input_grad(0), ctx.grad_out());
    if (bcast) {
      accumulate_col_sums(ctx.input_grad(1), ctx.grad_out(), sign);
    } else {
      accumulate(ctx.input_grad(1), ctx.grad_out(), sign);
    }
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Matrix out = infosculpt::matmul(a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [](const BackwardContext& ctx) {
    if (Matrix* ga = ctx.input_grad(0)) accumulate(ga, matmul_nt(ctx.grad_out(), ctx.input(1)));
    if (Matrix* gb = ctx.input_grad(1)) accumulate(gb, matmul_tn(ctx.input(0), ctx.grad_out()));
  });
}

Var transpose(Var a) {
  return a.tape().record("transpose", infosculpt::transpose(a.value()), {a},
                         [](const BackwardContext& ctx) {
                           accumulate(ctx.input_grad(0), infosculpt::transpose(ctx.grad_out()));
                         });
}

Var add(Var a, Var b) { return elementwise_binary("add", a, b, 1.0); }
Var sub(Var a, Var b) { return elementwise_binary("sub", a, b, -1.0); }

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Matrix out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](const BackwardContext& ctx) {
    const auto g = ctx.grad_out().data();
    for (std::size_t k = 0; k < 2; ++k) {
      Matrix* dst = ctx.input_grad(k);
      if (dst == nullptr) continue;
      const auto other = ctx.input(1 - k).data();
      auto d = dst->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var scale(Var a, double s) {
  return a.tape().record("scale", map(a.value(), [s](double v) { return s * v; }), {a},
                         [s](const BackwardContext& ctx) {
                           accumulate(ctx.input_grad(0), ctx.grad_out(), s);
                         });
}

Var add_scalar(Var a, double s) {
  return a.tape().record("add_scalar", map(a.value(), [s](double v) { return v + s; }), {a},
                         [](const BackwardContext& ctx) {
                           accumulate(ctx.input_grad(0), ctx.grad_out());
                         });
}

Var neg(Var a) { return scale(a, -1.0); }

Var log(Var a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: nonpositive input " + std::to_string(v));
  }
  return a.tape().record("log", map(a.value(), [](double v) { return std::log(v); }), {a},
                         [](const BackwardContext& ctx) {
                           auto d = ctx.input_grad(0)->data();
                           auto g = ctx.grad_out().data();
                           auto x = ctx.input(0).data();
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
                         });
}

Var exp(Var a) {
  return a.tape().record("exp", map(a.value(), [](double v) { return std::exp(v); }), {a},
                         [](const BackwardContext& ctx) {
                           auto d = ctx.input_grad(0)->data();
                           auto g = ctx.grad_out().data();
                           auto y = ctx.out().data();
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
                         });
}

Var relu(Var a) {
  return a.tape().record("relu", map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                         [](const BackwardContext& ctx) {
                           auto d = ctx.input_grad(0)->data();
                           auto g = ctx.grad_out().data();
                           auto x = ctx.input(0).data();
                           for (std::size_t i = 0; i < d.size(); ++i)
                             if (x[i] > 0.0) d[i] += g[i];
                         });
}

Var xlogx(Var a) {
  for (double v : a.value().data()) {
    if (v < 0.0 || !std::isfinite(v)) throw DomainError("xlogx: invalid input " + std::to_string(v));
  }
  Matrix out = map(a.value(), [](double v) { return v == 0.0 ? 0.0 : v * std::log(v); });
  // The derivative diverges at 0; zero entries receive no gradient.
  return a.tape().record("xlogx", std::move(out), {a}, [](const BackwardContext& ctx) {
    auto d = ctx.input_grad(0)->data();
    auto g = ctx.grad_out().data();
    auto x = ctx.input(0).data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0.0) d[i] += g[i] * (std::log(x[i]) + 1.0);
  });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double mx = row_max_checked("softmax_rows", x.row(i), i);
    double z = 0.0;
    auto o = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) z += (o[j] = std::exp(x(i, j) - mx));
    for (double& v : o) v /= z;
  }
  return a.tape().record("softmax_rows", std::move(out), {a}, [](const BackwardContext& ctx) {
    const Matrix& y = ctx.out();
    const Matrix& g = ctx.grad_out();
    Matrix& d = *ctx.input_grad(0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double mx = row_max_checked("log_softmax_rows", x.row(i), i);
    double z = 0.0;
    for (double v : x.row(i)) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - lse;
  }
  return a.tape().record("log_softmax_rows", std::move(out), {a}, [](const BackwardContext& ctx) {
    const Matrix& y = ctx.out();
    const Matrix& g = ctx.grad_out();
    Matrix& d = *ctx.input_grad(0);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) d(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

Var logsumexp_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double mx = row_max_checked("logsumexp_rows", x.row(i), i);
    double z = 0.0;
    for (double v : x.row(i)) z += std::exp(v - mx);
    out(i, 0) = mx + std::log(z);
  }
  return a.tape().record("logsumexp_rows", std::move(out), {a}, [](const BackwardContext& ctx) {
    const Matrix& x = ctx.input(0);
    const Matrix& y = ctx.out();
    const Matrix& g = ctx.grad_out();
    Matrix& d = *ctx.input_grad(0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) d(i, j) += g(i, 0) * std::exp(x(i, j) - y(i, 0));
  });
}

Var l2_normalize_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix norms(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (double v : x.row(i)) ss += v * v;
    const double n = std::sqrt(ss);
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DomainError("l2_normalize_rows: zero or non-finite norm at row " + std::to_string(i));
    }
    norms(i, 0) = n;
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
  }
  return a.tape().record("l2_normalize_rows", std::move(out), {a},
                         [norms = std::move(norms)](const BackwardContext& ctx) {
                           const Matrix& y = ctx.out();
                           const Matrix& g = ctx.grad_out();
                           Matrix& d = *ctx.input_grad(0);
                           for (std::size_t i = 0; i < y.rows(); ++i) {
                             double dot = 0.0;
                             for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                             for (std::size_t j = 0; j < y.cols(); ++j)
                               d(i, j) += (g(i, j) - y(i, j) * dot) / norms(i, 0);
                           }
                         });
}

Var sum_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (double v : x.row(i)) out(i, 0) += v;
  return a.tape().record("sum_rows", std::move(out), {a}, [](const BackwardContext& ctx) {
    Matrix& d = *ctx.input_grad(0);
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (double& v : d.row(i)) v += ctx.grad_out()(i, 0);
  });
}

Var mean_rows(Var a) {
  const double m = static_cast<double>(a.cols());
  return scale(sum_rows(a), 1.0 / m);
}

Var mean_cols(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw DimensionError("mean_cols: empty matrix");
  const double n = static_cast<double>(x.rows());
  Matrix out(1, x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
  for (double& v : out.data()) v /= n;
  return a.tape().record("mean_cols", std::move(out), {a}, [n](const BackwardContext& ctx) {
    Matrix& d = *ctx.input_grad(0);
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += ctx.grad_out()(0, j) / n;
  });
}

Var sum(Var a) {
  Matrix out(1, 1, infosculpt::sum(a.value()));
  return a.tape().record("sum", std::move(out), {a}, [](const BackwardContext& ctx) {
    const double g = ctx.grad_out()(0, 0);
    for (double& v : ctx.input_grad(0)->data()) v += g;
  });
}

Var mean(Var a) {
  if (a.value().empty()) throw DimensionError("mean: empty matrix");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) {
    auto v = p.value().data();
    data.insert(data.end(), v.begin(), v.end());
  }
  return parts.front().tape().record(
      "concat_rows", Matrix(rows, cols, std::move(data)), {parts.begin(), parts.end()},
      [](const BackwardContext& ctx) {
        const auto g = ctx.grad_out().data();
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ctx.num_inputs(); ++k) {
          const std::size_t n = ctx.input(k).size();
          if (Matrix* d = ctx.input_grad(k)) {
            auto dd = d->data();
            for (std::size_t i = 0; i < n; ++i) dd[i] += g[offset + i];
          }
          offset += n;
        }
      });
}

Var concat_rows(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_rows(std::span<const Var>(parts));
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  const Matrix& x = a.value();
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw DimensionError("select_rows: index " + std::to_string(rows[i]) + " out of " +
                           std::to_string(x.rows()));
    }
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape().record("select_rows", std::move(out), {a},
                         [idx = std::move(idx)](const BackwardContext& ctx) {
                           Matrix& d = *ctx.input_grad(0);
                           const Matrix& g = ctx.grad_out();
                           for (std::size_t i = 0; i < idx.size(); ++i)
                             for (std::size_t j = 0; j < g.cols(); ++j) d(idx[i], j) += g(i, j);
                         });
}

Var detach(Var a) {
  Var c = a.tape().constant(a.value());
  c.tape().node(c.id()).op = "detach";
  return c;
}

}  // namespace ad
}  // namespace infosculpt

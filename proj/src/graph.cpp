#include "behaveformer/graph.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace bf {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

void ensure_finite(const char* op, const Matrix& m) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string(op) + ": produced a non-finite value");
  }
}

Graph* common_graph(const char* op, std::initializer_list<Var> vars) {
  Graph* g = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument(std::string(op) + ": unbound operand");
    if (g == nullptr) g = v.graph;
    if (v.graph != g) throw std::invalid_argument(std::string(op) + ": operands from different graphs");
  }
  return g;
}

}  // namespace

Index Var::rows() const { return value().rows(); }
Index Var::cols() const { return value().cols(); }
const Matrix& Var::value() const { return graph->value(*this); }

Graph::Graph(Mode mode, std::uint64_t seed) : mode_(mode), rng_(seed) {}

int Graph::check(Var v, const char* what) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::invalid_argument(std::string(what) + ": variable does not belong to this graph");
  }
  return v.id;
}

Var Graph::input(Matrix value) {
  ensure_finite("input", value);
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Matrix value) {
  Var v = input(std::move(value));
  nodes_.back().requires_grad = true;
  nodes_.back().op = "param";
  return v;
}

Var Graph::scalar(Scalar v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return input(std::move(m));
}

Var Graph::apply(const char* op, const std::vector<Var>& parents, Matrix value, BackwardFn backward) {
  Node n;
  n.op = op;
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    n.parents.push_back(check(p, op));
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
  }
  ensure_finite(op, value);
  n.value = std::move(value);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::value(Var v) const { return nodes_[static_cast<std::size_t>(check(v, "value"))].value; }

const Matrix& Graph::grad_at(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  static const Matrix empty;
  if (!n.grad_live) {
    // Never received a contribution: report a zero gradient of matching shape.
    const_cast<Node&>(n).grad = Matrix::Zero(n.value.rows(), n.value.cols());
    const_cast<Node&>(n).grad_live = true;
  }
  return n.grad;
}

const Matrix& Graph::grad(Var v) const { return grad_at(check(v, "grad")); }

void Graph::accumulate_grad(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
    throw std::logic_error(std::string(n.op) + ": gradient shape " + shape_str(g) +
                           " does not match value shape " + shape_str(n.value));
  }
  if (!n.grad_live) {
    n.grad = g;
    n.grad_live = true;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var loss) {
  const int loss_id = check(loss, "backward");
  const Node& ln = nodes_[static_cast<std::size_t>(loss_id)];
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 scalar, got " + shape_str(ln.value));
  }
  if (!ln.requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any parameter");
  }
  if (backward_done_) {
    throw std::logic_error("backward: already run on this graph");
  }
  backward_done_ = true;
  accumulate_grad(loss_id, Matrix::Ones(1, 1));
  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.requires_grad && n.grad_live && n.backward) n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph* g = common_graph("matmul", {a, b});
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const int ia = a.id, ib = b.id;
  return g->apply("matmul", {a, b}, A * B, [ia, ib](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    if (gr.requires_grad_at(ia)) gr.accumulate_grad(ia, go * gr.value_at(ib).transpose());
    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, gr.value_at(ia).transpose() * go);
  });
}

Var add(Var a, Var b) {
  Graph* g = common_graph("add", {a, b});
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("add", A, B);
  const int ia = a.id, ib = b.id;
  return g->apply("add", {a, b}, A + B, [ia, ib](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    gr.accumulate_grad(ia, go);
    gr.accumulate_grad(ib, go);
  });
}

Var sub(Var a, Var b) {
  Graph* g = common_graph("sub", {a, b});
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("sub", A, B);
  const int ia = a.id, ib = b.id;
  return g->apply("sub", {a, b}, A - B, [ia, ib](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    gr.accumulate_grad(ia, go);
    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, -go);
  });
}

Var mul(Var a, Var b) {
  Graph* g = common_graph("mul", {a, b});
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("mul", A, B);
  const int ia = a.id, ib = b.id;
  return g->apply("mul", {a, b}, A.cwiseProduct(B), [ia, ib](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    if (gr.requires_grad_at(ia)) gr.accumulate_grad(ia, go.cwiseProduct(gr.value_at(ib)));
    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, go.cwiseProduct(gr.value_at(ia)));
  });
}

Var scale(Var a, Scalar s) {
  Graph* g = common_graph("scale", {a});
  const int ia = a.id;
  return g->apply("scale", {a}, a.value() * s, [ia, s](Graph& gr, int self) {
    gr.accumulate_grad(ia, gr.grad_at(self) * s);
  });
}

Var transpose(Var a) {
  Graph* g = common_graph("transpose", {a});
  const int ia = a.id;
  return g->apply("transpose", {a}, a.value().transpose(), [ia](Graph& gr, int self) {
    gr.accumulate_grad(ia, gr.grad_at(self).transpose());
  });
}

Var relu(Var a) {
  Graph* g = common_graph("relu", {a});
  const int ia = a.id;
  return g->apply("relu", {a}, a.value().cwiseMax(0.0), [ia](Graph& gr, int self) {
    const Matrix& x = gr.value_at(ia);
    Matrix gi = gr.grad_at(self);
    for (Index j = 0; j < gi.cols(); ++j)
      for (Index i = 0; i < gi.rows(); ++i)
        if (x(i, j) <= 0.0) gi(i, j) = 0.0;
    gr.accumulate_grad(ia, gi);
  });
}

Var exp(Var a) {
  Graph* g = common_graph("exp", {a});
  const int ia = a.id;
  return g->apply("exp", {a}, a.value().array().exp().matrix(), [ia](Graph& gr, int self) {
    gr.accumulate_grad(ia, gr.grad_at(self).cwiseProduct(gr.value_at(self)));
  });
}

namespace {

Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    RowVector e = (x.row(i).array() - mx).exp();
    y.row(i) = e / e.sum();
  }
  return y;
}

}  // namespace

Var softmax_rows(Var a) {
  Graph* g = common_graph("softmax_rows", {a});
  const int ia = a.id;
  return g->apply("softmax_rows", {a}, softmax_rows_value(a.value()), [ia](Graph& gr, int self) {
    const Matrix& y = gr.value_at(self);
    const Matrix& go = gr.grad_at(self);
    Matrix gi(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const Scalar dot = go.row(i).cwiseProduct(y.row(i)).sum();
      gi.row(i) = (y.row(i).array() * (go.row(i).array() - dot)).matrix();
    }
    gr.accumulate_grad(ia, gi);
  });
}

Var softmax_cols(Var a) { return transpose(softmax_rows(transpose(a))); }

Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
  Graph* g = common_graph("layer_norm", {x, gain, bias});
  const Matrix& X = x.value();
  const Matrix& gn = gain.value();
  const Matrix& bs = bias.value();
  if (gn.rows() != 1 || gn.cols() != X.cols()) shape_error("layer_norm gain", X, gn);
  if (bs.rows() != 1 || bs.cols() != X.cols()) shape_error("layer_norm bias", X, bs);

  const Index n = X.rows(), m = X.cols();
  Matrix xhat(n, m);
  Vector inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const Scalar mu = X.row(i).mean();
    const Scalar var = (X.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (X.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * gn.row(0).array();
  y.array().rowwise() += bs.row(0).array();

  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g->apply("layer_norm", {x, gain, bias}, std::move(y),
                  [ix, ig, ib, xhat, inv_std](Graph& gr, int self) {
                    const Matrix& go = gr.grad_at(self);
                    const Matrix& gn2 = gr.value_at(ig);
                    if (gr.requires_grad_at(ig)) gr.accumulate_grad(ig, go.cwiseProduct(xhat).colwise().sum());
                    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, go.colwise().sum());
                    if (gr.requires_grad_at(ix)) {
                      Matrix gxhat = go.array().rowwise() * gn2.row(0).array();
                      Matrix gx(gxhat.rows(), gxhat.cols());
                      for (Index i = 0; i < gxhat.rows(); ++i) {
                        const Scalar m1 = gxhat.row(i).mean();
                        const Scalar m2 = gxhat.row(i).cwiseProduct(xhat.row(i)).mean();
                        gx.row(i) = (gxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                      }
                      gr.accumulate_grad(ix, gx);
                    }
                  });
}

Var batch_norm(Var x, Var gain, Var bias, Matrix& running_mean, Matrix& running_var,
               Scalar momentum, Scalar eps) {
  Graph* g = common_graph("batch_norm", {x, gain, bias});
  const Matrix& X = x.value();
  const Matrix& gn = gain.value();
  const Matrix& bs = bias.value();
  if (gn.size() != 1 || bs.size() != 1) {
    throw std::invalid_argument("batch_norm: gain/bias must be 1x1");
  }
  if (running_mean.size() != 1 || running_var.size() != 1) {
    throw std::invalid_argument("batch_norm: running statistics must be 1x1");
  }

  Scalar mu, var;
  if (g->mode() == Mode::Train) {
    mu = X.mean();
    var = (X.array() - mu).square().mean();
    running_mean(0, 0) = (1.0 - momentum) * running_mean(0, 0) + momentum * mu;
    running_var(0, 0) = (1.0 - momentum) * running_var(0, 0) + momentum * var;
  } else {
    mu = running_mean(0, 0);
    var = running_var(0, 0);
  }
  const Scalar inv_std = 1.0 / std::sqrt(var + eps);
  Matrix xhat = (X.array() - mu).matrix() * inv_std;
  Matrix y = xhat * gn(0, 0);
  y.array() += bs(0, 0);

  const bool train = g->mode() == Mode::Train;
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return g->apply("batch_norm", {x, gain, bias}, std::move(y),
                  [ix, ig, ib, xhat, inv_std, train](Graph& gr, int self) {
                    const Matrix& go = gr.grad_at(self);
                    const Scalar gamma = gr.value_at(ig)(0, 0);
                    if (gr.requires_grad_at(ig)) {
                      Matrix dg(1, 1);
                      dg(0, 0) = go.cwiseProduct(xhat).sum();
                      gr.accumulate_grad(ig, dg);
                    }
                    if (gr.requires_grad_at(ib)) {
                      Matrix db(1, 1);
                      db(0, 0) = go.sum();
                      gr.accumulate_grad(ib, db);
                    }
                    if (gr.requires_grad_at(ix)) {
                      if (train) {
                        const Scalar m1 = go.mean();
                        const Scalar m2 = go.cwiseProduct(xhat).mean();
                        Matrix gx = (go.array() - m1 - xhat.array() * m2).matrix() * (gamma * inv_std);
                        gr.accumulate_grad(ix, gx);
                      } else {
                        gr.accumulate_grad(ix, go * (gamma * inv_std));
                      }
                    }
                  });
}

Var conv2d_same(Var x, Var kernel) {
  Graph* g = common_graph("conv2d_same", {x, kernel});
  const Matrix& X = x.value();
  const Matrix& K = kernel.value();
  if (K.rows() != K.cols() || K.rows() % 2 == 0) {
    throw std::invalid_argument("conv2d_same: kernel must be odd and square, got " + std::to_string(K.rows()) +
                                "x" + std::to_string(K.cols()));
  }
  const Index k = K.rows(), p = k / 2;
  const Index n = X.rows(), m = X.cols();
  Matrix y = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      Scalar acc = 0.0;
      for (Index a = 0; a < k; ++a) {
        const Index ii = i + a - p;
        if (ii < 0 || ii >= n) continue;
        for (Index b = 0; b < k; ++b) {
          const Index jj = j + b - p;
          if (jj < 0 || jj >= m) continue;
          acc += X(ii, jj) * K(a, b);
        }
      }
      y(i, j) = acc;
    }
  }
  const int ix = x.id, ik = kernel.id;
  return g->apply("conv2d_same", {x, kernel}, std::move(y), [ix, ik, k, p](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    const Matrix& X2 = gr.value_at(ix);
    const Matrix& K2 = gr.value_at(ik);
    const Index n2 = X2.rows(), m2 = X2.cols();
    if (gr.requires_grad_at(ik)) {
      Matrix gk = Matrix::Zero(k, k);
      for (Index a = 0; a < k; ++a)
        for (Index b = 0; b < k; ++b) {
          Scalar acc = 0.0;
          for (Index i = 0; i < n2; ++i) {
            const Index ii = i + a - p;
            if (ii < 0 || ii >= n2) continue;
            for (Index j = 0; j < m2; ++j) {
              const Index jj = j + b - p;
              if (jj < 0 || jj >= m2) continue;
              acc += go(i, j) * X2(ii, jj);
            }
          }
          gk(a, b) = acc;
        }
      gr.accumulate_grad(ik, gk);
    }
    if (gr.requires_grad_at(ix)) {
      Matrix gx = Matrix::Zero(n2, m2);
      for (Index i = 0; i < n2; ++i)
        for (Index j = 0; j < m2; ++j) {
          const Scalar gij = go(i, j);
          if (gij == 0.0) continue;
          for (Index a = 0; a < k; ++a) {
            const Index ii = i + a - p;
            if (ii < 0 || ii >= n2) continue;
            for (Index b = 0; b < k; ++b) {
              const Index jj = j + b - p;
              if (jj < 0 || jj >= m2) continue;
              gx(ii, jj) += gij * K2(a, b);
            }
          }
        }
      gr.accumulate_grad(ix, gx);
    }
  });
}

Var dropout(Var x, Scalar rate) {
  Graph* g = common_graph("dropout", {x});
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  const int ix = x.id;
  if (g->mode() == Mode::Eval || rate == 0.0) {
    return g->apply("dropout", {x}, x.value(), [ix](Graph& gr, int self) {
      gr.accumulate_grad(ix, gr.grad_at(self));
    });
  }
  const Matrix& X = x.value();
  const Scalar keep = 1.0 - rate;
  std::uniform_real_distribution<Scalar> uni(0.0, 1.0);
  Matrix mask(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j)
    for (Index i = 0; i < X.rows(); ++i)
      mask(i, j) = uni(g->rng()) < keep ? 1.0 / keep : 0.0;
  return g->apply("dropout", {x}, X.cwiseProduct(mask), [ix, mask](Graph& gr, int self) {
    gr.accumulate_grad(ix, gr.grad_at(self).cwiseProduct(mask));
  });
}

Var mean_rows(Var a) {
  Graph* g = common_graph("mean_rows", {a});
  const int ia = a.id;
  const Index n = a.rows();
  return g->apply("mean_rows", {a}, a.value().colwise().mean(), [ia, n](Graph& gr, int self) {
    gr.accumulate_grad(ia, Matrix::Ones(n, 1) * gr.grad_at(self) / static_cast<Scalar>(n));
  });
}

Var mean_cols(Var a) {
  Graph* g = common_graph("mean_cols", {a});
  const int ia = a.id;
  const Index m = a.cols();
  return g->apply("mean_cols", {a}, a.value().rowwise().mean(), [ia, m](Graph& gr, int self) {
    gr.accumulate_grad(ia, gr.grad_at(self) * Matrix::Ones(1, m) / static_cast<Scalar>(m));
  });
}

Var mean_all(Var a) {
  Graph* g = common_graph("mean_all", {a});
  const int ia = a.id;
  const Index n = a.rows(), m = a.cols();
  Matrix v(1, 1);
  v(0, 0) = a.value().mean();
  return g->apply("mean_all", {a}, std::move(v), [ia, n, m](Graph& gr, int self) {
    const Scalar go = gr.grad_at(self)(0, 0);
    gr.accumulate_grad(ia, Matrix::Constant(n, m, go / static_cast<Scalar>(n * m)));
  });
}

Var sum_all(Var a) {
  Graph* g = common_graph("sum_all", {a});
  const int ia = a.id;
  const Index n = a.rows(), m = a.cols();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return g->apply("sum_all", {a}, std::move(v), [ia, n, m](Graph& gr, int self) {
    gr.accumulate_grad(ia, Matrix::Constant(n, m, gr.grad_at(self)(0, 0)));
  });
}

Var concat(const std::vector<Var>& parts, Axis axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Graph* g = parts[0].graph;
  for (const Var& p : parts) common_graph("concat", {parts[0], p});

  Index rows = parts[0].rows(), cols = parts[0].cols();
  std::vector<Index> offsets{0};
  if (axis == Axis::Cols) {
    cols = 0;
    for (const Var& p : parts) {
      if (p.rows() != rows) shape_error("concat", parts[0].value(), p.value());
      cols += p.cols();
      offsets.push_back(cols);
    }
  } else {
    rows = 0;
    for (const Var& p : parts) {
      if (p.cols() != cols) shape_error("concat", parts[0].value(), p.value());
      rows += p.rows();
      offsets.push_back(rows);
    }
  }
  Matrix y(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Matrix& v = parts[i].value();
    if (axis == Axis::Cols)
      y.middleCols(offsets[i], v.cols()) = v;
    else
      y.middleRows(offsets[i], v.rows()) = v;
  }
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return g->apply("concat", parts, std::move(y), [ids, offsets, axis](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!gr.requires_grad_at(ids[i])) continue;
      if (axis == Axis::Cols)
        gr.accumulate_grad(ids[i], go.middleCols(offsets[i], offsets[i + 1] - offsets[i]));
      else
        gr.accumulate_grad(ids[i], go.middleRows(offsets[i], offsets[i + 1] - offsets[i]));
    }
  });
}

namespace {

// Row-major copy between shapes with equal element counts.
Matrix reshape_row_major(const Matrix& x, Index rows, Index cols) {
  Matrix y(rows, cols);
  Index idx = 0;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j, ++idx)
      y(idx / cols, idx % cols) = x(i, j);
  return y;
}

}  // namespace

Var reshape(Var a, Index rows, Index cols) {
  Graph* g = common_graph("reshape", {a});
  const Matrix& A = a.value();
  if (rows * cols != A.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(A) + " as " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  const int ia = a.id;
  const Index ar = A.rows(), ac = A.cols();
  return g->apply("reshape", {a}, reshape_row_major(A, rows, cols), [ia, ar, ac](Graph& gr, int self) {
    gr.accumulate_grad(ia, reshape_row_major(gr.grad_at(self), ar, ac));
  });
}

Var flatten(Var a) { return reshape(a, a.rows() * a.cols(), 1); }

Var affine(Var x, Var w, Var b) {
  Graph* g = common_graph("affine", {x, w, b});
  const Matrix& X = x.value();
  const Matrix& W = w.value();
  const Matrix& B = b.value();
  if (W.cols() != X.rows()) shape_error("affine", W, X);
  if (B.rows() != W.rows() || B.cols() != 1) shape_error("affine bias", W, B);
  Matrix y = W * X;
  y.colwise() += B.col(0);
  const int ix = x.id, iw = w.id, ib = b.id;
  return g->apply("affine", {x, w, b}, std::move(y), [ix, iw, ib](Graph& gr, int self) {
    const Matrix& go = gr.grad_at(self);
    if (gr.requires_grad_at(iw)) gr.accumulate_grad(iw, go * gr.value_at(ix).transpose());
    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, go.rowwise().sum());
    if (gr.requires_grad_at(ix)) gr.accumulate_grad(ix, gr.value_at(iw).transpose() * go);
  });
}

Var euclidean_distance(Var a, Var b) {
  Graph* g = common_graph("euclidean_distance", {a, b});
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("euclidean_distance", A, B);
  Matrix v(1, 1);
  v(0, 0) = (A - B).norm();
  const int ia = a.id, ib = b.id;
  return g->apply("euclidean_distance", {a, b}, std::move(v), [ia, ib](Graph& gr, int self) {
    const Scalar d = gr.value_at(self)(0, 0);
    if (d == 0.0) return;  // subgradient 0 at coincident points
    const Scalar go = gr.grad_at(self)(0, 0);
    Matrix diff = (gr.value_at(ia) - gr.value_at(ib)) * (go / d);
    if (gr.requires_grad_at(ia)) gr.accumulate_grad(ia, diff);
    if (gr.requires_grad_at(ib)) gr.accumulate_grad(ib, -diff);
  });
}

}  // namespace bf

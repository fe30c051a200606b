// SPDX-License-Identifier: Apache-2.0
#include "distana/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "distana/errors.hpp"

namespace distana {

Var constant(Tensor value) {
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  return v;
}

Var Tape::leaf(Tensor value) { return record(std::move(value), nullptr); }

Var Tape::record(Tensor value, Backprop backprop) {
  if (swept_) throw std::logic_error("cannot record on a tape after backward()");
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.tape_ = this;
  v.id_ = nodes_.size();
  nodes_.push_back({v.value_, std::move(backprop)});
  return v;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss is not recorded on this tape");
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be a scalar");
  if (swept_) throw std::logic_error("backward() already ran on this tape");
  swept_ = true;
  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id_] = Tensor::filled(loss.shape(), 1.0);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    if (grads_[i].size() == 0 || !nodes_[i].backprop) continue;
    // The closure may accumulate into nodes < i only, so this reference stays valid.
    const Tensor& g = grads_[i];
    nodes_[i].backprop(*this, g);
  }
}

Tensor Tape::grad(const Var& v) const {
  if (v.tape_ != this || v.id_ >= grads_.size() || grads_[v.id_].size() == 0) {
    return Tensor::zeros(v.shape());
  }
  return grads_[v.id_];
}

void Tape::accumulate(const Var& v, const Tensor& contribution) {
  if (v.tape_ != this) return;
  if (contribution.size() != v.value().size()) {
    throw ShapeError("gradient contribution " + shape_string(contribution.shape()) + " for node " +
                     shape_string(v.shape()));
  }
  Tensor& g = grads_[v.id_];
  if (g.size() == 0) {
    g = Tensor(v.shape(), std::vector<double>(contribution.data().begin(), contribution.data().end()));
    return;
  }
  auto dst = g.data();
  auto src = contribution.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

namespace {

Tape* common_tape(std::initializer_list<const Var*> args) {
  Tape* tape = nullptr;
  for (const Var* a : args) {
    if (a->empty()) throw std::invalid_argument("op on an empty Var");
    if (!a->recorded()) continue;
    if (tape && tape != a->tape()) throw std::invalid_argument("operands recorded on different tapes");
    tape = a->tape();
  }
  return tape;
}

Tape* common_tape(std::span<const Var> args) {
  Tape* tape = nullptr;
  for (const Var& a : args) {
    if (a.empty()) throw std::invalid_argument("op on an empty Var");
    if (!a.recorded()) continue;
    if (tape && tape != a.tape()) throw std::invalid_argument("operands recorded on different tapes");
    tape = a.tape();
  }
  return tape;
}

Var emit(Tape* tape, Tensor value, const char* op, Tape::Backprop backprop) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
  if (!tape) return constant(std::move(value));
  return tape->record(std::move(value), std::move(backprop));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor reduce_to(const Tensor& g, const Tensor& like) {
  if (like.size() == g.size()) return g;
  double s = 0.0;
  for (double v : g.data()) s += v;
  return Tensor::filled(like.shape(), s);
}

void require_matrix(const Var& a, const char* op) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

}  // namespace

Var elementwise(ElementwiseOp op, const Var& a, const Var& b) {
  Tape* tape = common_tape({&a, &b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape() && !av.is_scalar() && !bv.is_scalar()) {
    throw ShapeError("elementwise: incompatible shapes " + shape_string(av.shape()) + " and " +
                     shape_string(bv.shape()));
  }
  const Shape& out_shape = av.size() >= bv.size() ? av.shape() : bv.shape();
  Tensor out(out_shape);
  const std::size_t n = out.size();
  auto ad = av.data();
  auto bd = bv.data();
  const std::size_t as = av.size() == n ? 1 : 0;
  const std::size_t bs = bv.size() == n ? 1 : 0;
  auto od = out.data();
  switch (op) {
    case ElementwiseOp::Add:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i * as] + bd[i * bs];
      break;
    case ElementwiseOp::Sub:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i * as] - bd[i * bs];
      break;
    case ElementwiseOp::Mul:
      for (std::size_t i = 0; i < n; ++i) od[i] = ad[i * as] * bd[i * bs];
      break;
    default:
      throw std::invalid_argument("elementwise: unary op called with two operands");
  }
  return emit(tape, std::move(out), "elementwise", [a, b, op, as, bs](Tape& t, const Tensor& g) {
    const std::size_t n = g.size();
    auto gd = g.data();
    if (a.recorded()) {
      Tensor ga(g.shape());
      auto gad = ga.data();
      if (op == ElementwiseOp::Mul) {
        auto bd = b.value().data();
        for (std::size_t i = 0; i < n; ++i) gad[i] = gd[i] * bd[i * bs];
      } else {
        std::copy(gd.begin(), gd.end(), gad.begin());
      }
      t.accumulate(a, reduce_to(ga, a.value()));
    }
    if (b.recorded()) {
      Tensor gb(g.shape());
      auto gbd = gb.data();
      if (op == ElementwiseOp::Mul) {
        auto ad = a.value().data();
        for (std::size_t i = 0; i < n; ++i) gbd[i] = gd[i] * ad[i * as];
      } else if (op == ElementwiseOp::Sub) {
        for (std::size_t i = 0; i < n; ++i) gbd[i] = -gd[i];
      } else {
        std::copy(gd.begin(), gd.end(), gbd.begin());
      }
      t.accumulate(b, reduce_to(gb, b.value()));
    }
  });
}

Var elementwise(ElementwiseOp op, const Var& a) {
  Tape* tape = common_tape({&a});
  Tensor out(a.shape());
  auto ad = a.value().data();
  auto od = out.data();
  switch (op) {
    case ElementwiseOp::Sigmoid:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = stable_sigmoid(ad[i]);
      break;
    case ElementwiseOp::Tanh:
      for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(ad[i]);
      break;
    default:
      throw std::invalid_argument("elementwise: binary op called with one operand");
  }
  auto result = std::make_shared<Tensor>(out);
  return emit(tape, std::move(out), "elementwise", [a, op, result](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    auto gd = g.data();
    auto yd = result->data();
    auto gad = ga.data();
    if (op == ElementwiseOp::Sigmoid) {
      for (std::size_t i = 0; i < gd.size(); ++i) gad[i] = gd[i] * yd[i] * (1.0 - yd[i]);
    } else {
      for (std::size_t i = 0; i < gd.size(); ++i) gad[i] = gd[i] * (1.0 - yd[i] * yd[i]);
    }
    t.accumulate(a, ga);
  });
}

Var add(const Var& a, const Var& b) { return elementwise(ElementwiseOp::Add, a, b); }
Var sub(const Var& a, const Var& b) { return elementwise(ElementwiseOp::Sub, a, b); }
Var mul(const Var& a, const Var& b) { return elementwise(ElementwiseOp::Mul, a, b); }
Var sigmoid(const Var& a) { return elementwise(ElementwiseOp::Sigmoid, a); }
Var tanh(const Var& a) { return elementwise(ElementwiseOp::Tanh, a); }

Var scale(const Var& a, double factor) {
  Tape* tape = common_tape({&a});
  Tensor out(a.shape());
  auto ad = a.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * factor;
  return emit(tape, std::move(out), "scale", [a, factor](Tape& t, const Tensor& g) {
    Tensor ga(g.shape());
    auto gd = g.data();
    auto gad = ga.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gad[i] = gd[i] * factor;
    t.accumulate(a, ga);
  });
}

namespace {

// c (m×n) += a (m×k) · b (k×n), with optional transposes expressed via strides.
void gemm_acc(std::span<const double> a, std::size_t a_rs, std::size_t a_cs, std::span<const double> b,
              std::size_t b_rs, std::size_t b_cs, std::span<double> c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * a_rs + p * a_cs];
      const double* bp = b.data() + p * b_rs;
      if (b_cs == 1) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * bp[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * bp[j * b_cs];
      }
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape* tape = common_tape({&a, &b});
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({m, n});
  gemm_acc(a.value().data(), k, 1, b.value().data(), n, 1, out.data(), m, k, n);
  return emit(tape, std::move(out), "matmul", [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.recorded()) {
      Tensor ga({m, k});  // G · Bᵀ
      gemm_acc(g.data(), n, 1, b.value().data(), 1, n, ga.data(), m, n, k);
      t.accumulate(a, ga);
    }
    if (b.recorded()) {
      Tensor gb({k, n});  // Aᵀ · G
      gemm_acc(a.value().data(), 1, k, g.data(), n, 1, gb.data(), k, m, n);
      t.accumulate(b, gb);
    }
  });
}

Var add_row(const Var& m, const Var& row) {
  Tape* tape = common_tape({&m, &row});
  require_matrix(m, "add_row");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (row.value().size() != c) {
    throw ShapeError("add_row: row of " + std::to_string(row.value().size()) + " values for " +
                     shape_string(m.shape()));
  }
  Tensor out = m.value();
  auto od = out.data();
  auto rd = row.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) od[i * c + j] += rd[j];
  return emit(tape, std::move(out), "add_row", [m, row, r, c](Tape& t, const Tensor& g) {
    t.accumulate(m, g);
    if (row.recorded()) {
      Tensor gr(row.shape());
      auto gd = g.data();
      auto grd = gr.data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) grd[j] += gd[i * c + j];
      t.accumulate(row, gr);
    }
  });
}

Var slice_cols(const Var& m, std::size_t begin, std::size_t end) {
  Tape* tape = common_tape({&m});
  require_matrix(m, "slice_cols");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (begin > end || end > c) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({r, w});
  auto md = m.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) od[i * w + j] = md[i * c + begin + j];
  return emit(tape, std::move(out), "slice_cols", [m, r, c, begin, w](Tape& t, const Tensor& g) {
    Tensor gm({r, c});
    auto gd = g.data();
    auto gmd = gm.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gmd[i * c + begin + j] = gd[i * w + j];
    t.accumulate(m, gm);
  });
}

Var concat_cols(std::span<const Var> parts) {
  Tape* tape = common_tape(parts);
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  std::vector<Var> ops(parts.begin(), parts.end());
  std::vector<std::size_t> widths;
  const std::size_t r = ops.front().shape().size() == 2 ? ops.front().shape()[0] : 0;
  std::size_t total = 0;
  for (const Var& p : ops) {
    require_matrix(p, "concat_cols");
    if (p.shape()[0] != r) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out({r, total});
  auto od = out.data();
  std::size_t off = 0;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    auto pd = ops[k].value().data();
    const std::size_t w = widths[k];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) od[i * total + off + j] = pd[i * w + j];
    off += w;
  }
  return emit(tape, std::move(out), "concat_cols", [ops, widths, r, total](Tape& t, const Tensor& g) {
    auto gd = g.data();
    std::size_t off = 0;
    for (std::size_t k = 0; k < ops.size(); ++k) {
      const std::size_t w = widths[k];
      if (ops[k].recorded()) {
        Tensor gp({r, w});
        auto gpd = gp.data();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) gpd[i * w + j] = gd[i * total + off + j];
        t.accumulate(ops[k], gp);
      }
      off += w;
    }
  });
}

Var gather_sum(const Var& in, std::shared_ptr<const GatherMap> map) {
  Tape* tape = common_tape({&in});
  if (in.shape() != map->in_shape) {
    throw ShapeError("gather_sum: input " + shape_string(in.shape()) + ", map expects " +
                     shape_string(map->in_shape));
  }
  Tensor out(map->out_shape);
  auto od = out.data();
  auto id = in.value().data();
  for (std::size_t o = 0; o < od.size(); ++o) {
    double s = 0.0;
    for (std::size_t e = map->offsets[o]; e < map->offsets[o + 1]; ++e) s += id[map->sources[e]];
    od[o] = s;
  }
  return emit(tape, std::move(out), "gather_sum", [in, map](Tape& t, const Tensor& g) {
    Tensor gi(map->in_shape);
    auto gd = g.data();
    auto gid = gi.data();
    for (std::size_t o = 0; o < gd.size(); ++o)
      for (std::size_t e = map->offsets[o]; e < map->offsets[o + 1]; ++e) gid[map->sources[e]] += gd[o];
    t.accumulate(in, gi);
  });
}

Var sum(const Var& a) {
  Tape* tape = common_tape({&a});
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return emit(tape, Tensor::scalar(s), "sum", [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor::filled(a.shape(), g.item()));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mse(const Var& pred, const Var& target) {
  Tape* tape = common_tape({&pred, &target});
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shapes differ " + shape_string(pred.shape()) + " vs " + shape_string(target.shape()));
  }
  auto pd = pred.value().data();
  auto td = target.value().data();
  const std::size_t n = pd.size();
  if (n == 0) throw ShapeError("mse of empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pd[i] - td[i];
    s += d * d;
  }
  return emit(tape, Tensor::scalar(s / static_cast<double>(n)), "mse", [pred, target, n](Tape& t, const Tensor& g) {
    const double k = 2.0 * g.item() / static_cast<double>(n);
    auto pd = pred.value().data();
    auto td = target.value().data();
    Tensor gp(pred.shape());
    auto gpd = gp.data();
    for (std::size_t i = 0; i < n; ++i) gpd[i] = k * (pd[i] - td[i]);
    t.accumulate(pred, gp);
    if (target.recorded()) {
      for (double& v : gpd) v = -v;
      t.accumulate(target, gp);
    }
  });
}

Var scale_gradient(const Var& a, double factor) {
  Tape* tape = common_tape({&a});
  return emit(tape, a.value(), "scale_gradient", [a, factor](Tape& t, const Tensor& g) {
    Tensor ga = g;
    for (double& v : ga.data()) v *= factor;
    t.accumulate(a, ga);
  });
}

GradcheckReport gradcheck(const LossFn& f, std::span<const Tensor> points, double eps) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(points.size());
    for (const Tensor& p : points) leaves.push_back(tape.leaf(p));
    Var loss = f(leaves);
    tape.backward(loss);
    for (const Var& l : leaves) analytic.push_back(tape.grad(l));
  }

  std::vector<Tensor> probe(points.begin(), points.end());
  auto evaluate = [&]() {
    std::vector<Var> consts;
    consts.reserve(probe.size());
    for (const Tensor& p : probe) consts.push_back(constant(p));
    return f(consts).value().item();
  };

  // Coordinates far below the largest gradient are compared against this
  // floor, since their finite differences are dominated by rounding.
  double g_max = 0.0;
  for (const Tensor& g : analytic)
    for (double v : g.data()) g_max = std::max(g_max, std::abs(v));
  const double floor = std::max(1e-12, 1e-6 * g_max);

  GradcheckReport report;
  report.per_leaf.assign(points.size(), 0.0);
  for (std::size_t l = 0; l < probe.size(); ++l) {
    for (std::size_t i = 0; i < probe[l].size(); ++i) {
      const double x = probe[l][i];
      auto at = [&](double offset) {
        probe[l][i] = x + offset;
        return evaluate();
      };
      // Fourth-order central stencil.
      const double near = at(eps) - at(-eps);
      const double far = at(2 * eps) - at(-2 * eps);
      const double numeric = (8.0 * near - far) / (12.0 * eps);
      probe[l][i] = x;
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      if (!std::isfinite(err)) throw NumericError("gradcheck: non-finite error");
      report.per_leaf[l] = std::max(report.per_leaf[l], err);
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
      }
    }
  }
  return report;
}

double gradcheck(const std::function<Var(const Var&)>& f, const Tensor& point, double eps) {
  std::vector<Tensor> pts{point};
  return gradcheck([&](std::span<const Var> v) { return f(v[0]); }, pts, eps).max_rel_error;
}

}  // namespace distana

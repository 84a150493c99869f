#include "align_teleop/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "align_teleop/error.hpp"

namespace align_teleop::ad {

void Tape::clear() {
  values_.clear();
  adjoints_.clear();
  nodes_.clear();
  index_arena_.clear();
  affines_.clear();
  params_.clear();
}

std::uint32_t Tape::push_value(double v) {
  values_.push_back(v);
  return static_cast<std::uint32_t>(values_.size() - 1);
}

void Tape::check(Var v) const {
  if (v.tape() != this || v.index() >= values_.size()) {
    throw InvalidInput("variable does not belong to this tape");
  }
}

Var Tape::constant(double v) {
  const auto out = push_value(v);
  nodes_.push_back({OpKind::Leaf, out, 0, 0, 0.0});
  return {this, out};
}

std::vector<Var> Tape::constants(std::span<const double> v) {
  std::vector<Var> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(constant(x));
  return out;
}

ParamHandle Tape::register_parameters(std::span<const double> values) {
  ParamHandle h{static_cast<std::uint32_t>(values_.size()), static_cast<std::uint32_t>(values.size())};
  values_.insert(values_.end(), values.begin(), values.end());
  params_.push_back(h);
  return h;
}

Var Tape::parameter(ParamHandle h, std::size_t i) const {
  if (i >= h.size) throw InvalidInput("parameter index out of range");
  return {const_cast<Tape*>(this), static_cast<std::uint32_t>(h.base + i)};
}

ParamHandle Tape::block_of(std::span<const Var> xs) {
  if (xs.empty()) throw InvalidInput("empty parameter block");
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i].tape() != xs[0].tape() || xs[i].index() != xs[0].index() + i) {
      throw InvalidInput("variables do not occupy consecutive slots");
    }
  }
  return {xs[0].index(), static_cast<std::uint32_t>(xs.size())};
}

Var Tape::unary(OpKind op, Var a, double value, double c) {
  check(a);
  const auto out = push_value(value);
  nodes_.push_back({op, out, a.index(), 0, c});
  return {this, out};
}

Var Tape::binary(OpKind op, Var a, Var b, double value) {
  check(a);
  check(b);
  const auto out = push_value(value);
  nodes_.push_back({op, out, a.index(), b.index(), 0.0});
  return {this, out};
}

Var Tape::add(Var a, Var b) { return binary(OpKind::Add, a, b, a.value() + b.value()); }
Var Tape::sub(Var a, Var b) { return binary(OpKind::Sub, a, b, a.value() - b.value()); }
Var Tape::mul(Var a, Var b) { return binary(OpKind::Mul, a, b, a.value() * b.value()); }
Var Tape::div(Var a, Var b) { return binary(OpKind::Div, a, b, a.value() / b.value()); }
Var Tape::neg(Var a) { return unary(OpKind::Neg, a, -a.value()); }
Var Tape::add_const(Var a, double c) { return unary(OpKind::AddConst, a, a.value() + c, c); }
Var Tape::mul_const(Var a, double c) { return unary(OpKind::MulConst, a, a.value() * c, c); }
Var Tape::sin(Var a) { return unary(OpKind::Sin, a, std::sin(a.value())); }
Var Tape::cos(Var a) { return unary(OpKind::Cos, a, std::cos(a.value())); }
Var Tape::tanh(Var a) { return unary(OpKind::Tanh, a, std::tanh(a.value())); }
Var Tape::exp(Var a) { return unary(OpKind::Exp, a, std::exp(a.value())); }
Var Tape::sqrt(Var a) { return unary(OpKind::Sqrt, a, std::sqrt(a.value())); }
Var Tape::abs(Var a) { return unary(OpKind::Abs, a, std::abs(a.value())); }

Var Tape::acos(Var a) {
  // Value uses the exact input; only the derivative sees the clipped band.
  return unary(OpKind::Acos, a, std::acos(std::clamp(a.value(), -1.0, 1.0)));
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot", a.size(), b.size());
  const auto offset = static_cast<std::uint32_t>(index_arena_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    check(a[i]);
    check(b[i]);
    acc += a[i].value() * b[i].value();
  }
  for (const Var& v : a) index_arena_.push_back(v.index());
  for (const Var& v : b) index_arena_.push_back(v.index());
  const auto out = push_value(acc);
  nodes_.push_back({OpKind::Dot, out, offset, static_cast<std::uint32_t>(a.size()), 0.0});
  return {this, out};
}

std::vector<Var> Tape::affine(std::span<const Var> x, ParamHandle params, std::size_t w_offset,
                              std::size_t b_offset, std::size_t out_dim) {
  const std::size_t in_dim = x.size();
  if (w_offset + in_dim * out_dim > params.size || b_offset + out_dim > params.size) {
    throw InvalidInput("affine parameter block too small");
  }
  AffineRecord rec{};
  rec.in_dim = static_cast<std::uint32_t>(in_dim);
  rec.out_dim = static_cast<std::uint32_t>(out_dim);
  rec.w_slot = static_cast<std::uint32_t>(params.base + w_offset);
  rec.b_slot = static_cast<std::uint32_t>(params.base + b_offset);
  return affine_impl(x, rec);
}

std::vector<Var> Tape::affine_frozen(std::span<const Var> x, const double* weights,
                                     const double* biases, std::size_t out_dim) {
  AffineRecord rec{};
  rec.in_dim = static_cast<std::uint32_t>(x.size());
  rec.out_dim = static_cast<std::uint32_t>(out_dim);
  rec.w_frozen = weights;
  rec.b_frozen = biases;
  return affine_impl(x, rec);
}

std::vector<Var> Tape::affine_impl(std::span<const Var> x, AffineRecord rec) {
  const std::size_t in = rec.in_dim;
  const std::size_t out = rec.out_dim;
  rec.x_offset = static_cast<std::uint32_t>(index_arena_.size());
  scratch_.resize(in);
  for (std::size_t j = 0; j < in; ++j) {
    check(x[j]);
    index_arena_.push_back(x[j].index());
    scratch_[j] = x[j].value();
  }
  const double* w = rec.w_frozen ? rec.w_frozen : values_.data() + rec.w_slot;
  const double* b = rec.b_frozen ? rec.b_frozen : values_.data() + rec.b_slot;
  rec.out_base = static_cast<std::uint32_t>(values_.size());
  // values_ may reallocate below, so compute into a local buffer first.
  std::vector<double> y(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double* row = w + i * in;
    double acc = b[i];
    for (std::size_t j = 0; j < in; ++j) acc += row[j] * scratch_[j];
    y[i] = acc;
  }
  values_.insert(values_.end(), y.begin(), y.end());
  const auto rec_index = static_cast<std::uint32_t>(affines_.size());
  affines_.push_back(rec);
  nodes_.push_back({OpKind::Affine, rec.out_base, rec_index, 0, 0.0});
  std::vector<Var> result;
  result.reserve(out);
  for (std::size_t i = 0; i < out; ++i) {
    result.push_back(Var{this, static_cast<std::uint32_t>(rec.out_base + i)});
  }
  return result;
}

std::vector<double> Tape::backward(Var loss) {
  check(loss);
  adjoints_.assign(values_.size(), 0.0);
  adjoints_[loss.index()] = 1.0;
  const double* val = values_.data();
  double* adj = adjoints_.data();
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = *it;
    if (n.op == OpKind::Affine) {
      const AffineRecord& rec = affines_[n.a];
      const std::size_t in = rec.in_dim;
      const std::size_t out = rec.out_dim;
      const std::uint32_t* xi = index_arena_.data() + rec.x_offset;
      const double* gy = adj + rec.out_base;
      const double* w = rec.w_frozen ? rec.w_frozen : val + rec.w_slot;
      scratch_.assign(in, 0.0);
      for (std::size_t i = 0; i < out; ++i) {
        const double g = gy[i];
        if (g == 0.0) continue;
        const double* row = w + i * in;
        for (std::size_t j = 0; j < in; ++j) scratch_[j] += row[j] * g;
      }
      if (!rec.w_frozen) {
        double* gw = adj + rec.w_slot;
        double* gb = adj + rec.b_slot;
        for (std::size_t i = 0; i < out; ++i) {
          const double g = gy[i];
          gb[i] += g;
          if (g == 0.0) continue;
          double* grow = gw + i * in;
          for (std::size_t j = 0; j < in; ++j) grow[j] += g * val[xi[j]];
        }
      }
      for (std::size_t j = 0; j < in; ++j) adj[xi[j]] += scratch_[j];
      continue;
    }
    const double g = adj[n.out];
    if (g == 0.0) continue;
    switch (n.op) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
        adj[n.a] += g;
        adj[n.b] += g;
        break;
      case OpKind::Sub:
        adj[n.a] += g;
        adj[n.b] -= g;
        break;
      case OpKind::Mul:
        adj[n.a] += g * val[n.b];
        adj[n.b] += g * val[n.a];
        break;
      case OpKind::Div: {
        const double inv = 1.0 / val[n.b];
        adj[n.a] += g * inv;
        adj[n.b] -= g * val[n.out] * inv;
        break;
      }
      case OpKind::Neg:
        adj[n.a] -= g;
        break;
      case OpKind::AddConst:
        adj[n.a] += g;
        break;
      case OpKind::MulConst:
        adj[n.a] += g * n.c;
        break;
      case OpKind::Sin:
        adj[n.a] += g * std::cos(val[n.a]);
        break;
      case OpKind::Cos:
        adj[n.a] -= g * std::sin(val[n.a]);
        break;
      case OpKind::Tanh: {
        const double y = val[n.out];
        adj[n.a] += g * (1.0 - y * y);
        break;
      }
      case OpKind::Exp:
        adj[n.a] += g * val[n.out];
        break;
      case OpKind::Sqrt:
        adj[n.a] += g * 0.5 / val[n.out];
        break;
      case OpKind::Acos: {
        const double x = std::clamp(val[n.a], -1.0 + kAcosClip, 1.0 - kAcosClip);
        // (1 - x)(1 + x) keeps full precision near |x| = 1, unlike 1 - x^2.
        adj[n.a] -= g / std::sqrt((1.0 - x) * (1.0 + x));
        break;
      }
      case OpKind::Abs: {
        const double x = val[n.a];
        adj[n.a] += x > 0.0 ? g : (x < 0.0 ? -g : 0.0);
        break;
      }
      case OpKind::Dot: {
        const std::uint32_t* ai = index_arena_.data() + n.a;
        const std::uint32_t* bi = ai + n.b;
        for (std::uint32_t k = 0; k < n.b; ++k) {
          adj[ai[k]] += g * val[bi[k]];
          adj[bi[k]] += g * val[ai[k]];
        }
        break;
      }
      case OpKind::Affine:
        break;
    }
  }
  std::vector<double> grads;
  std::size_t total = 0;
  for (const auto& p : params_) total += p.size;
  grads.reserve(total);
  for (const auto& p : params_) {
    grads.insert(grads.end(), adjoints_.begin() + p.base, adjoints_.begin() + p.base + p.size);
  }
  return grads;
}

double Tape::adjoint(Var v) const {
  check(v);
  if (adjoints_.size() != values_.size()) throw InvalidInput("backward() has not been run");
  return adjoints_[v.index()];
}

Var operator+(Var a, Var b) { return a.tape()->add(a, b); }
Var operator-(Var a, Var b) { return a.tape()->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape()->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape()->div(a, b); }
Var operator-(Var a) { return a.tape()->neg(a); }
Var operator+(Var a, double c) { return a.tape()->add_const(a, c); }
Var operator+(double c, Var a) { return a.tape()->add_const(a, c); }
Var operator-(Var a, double c) { return a.tape()->add_const(a, -c); }
Var operator-(double c, Var a) { return a.tape()->add_const(a.tape()->neg(a), c); }
Var operator*(Var a, double c) { return a.tape()->mul_const(a, c); }
Var operator*(double c, Var a) { return a.tape()->mul_const(a, c); }
Var operator/(Var a, double c) { return a.tape()->mul_const(a, 1.0 / c); }
Var operator/(double c, Var a) { return a.tape()->div(a.tape()->constant(c), a); }

Var sin(Var a) { return a.tape()->sin(a); }
Var cos(Var a) { return a.tape()->cos(a); }
Var tanh(Var a) { return a.tape()->tanh(a); }
Var exp(Var a) { return a.tape()->exp(a); }
Var sqrt(Var a) { return a.tape()->sqrt(a); }
Var acos(Var a) { return a.tape()->acos(a); }
Var abs(Var a) { return a.tape()->abs(a); }

std::vector<double> gradient(const ScalarFunction& fn, std::span<const double> point) {
  Tape tape;
  const ParamHandle h = tape.register_parameters(point);
  std::vector<Var> xs;
  xs.reserve(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) xs.push_back(tape.parameter(h, i));
  const Var loss = fn(tape, xs);
  if (!std::isfinite(loss.value())) throw InvalidInput("function value is not finite");
  return tape.backward(loss);
}

double grad_check(const ScalarFunction& fn, std::span<const double> point, double fd_step) {
  const std::vector<double> ad_grad = gradient(fn, point);
  std::vector<double> x(point.begin(), point.end());
  auto eval = [&](std::span<const double> at) {
    Tape tape;
    const auto vars = tape.constants(at);
    const double v = fn(tape, vars).value();
    if (!std::isfinite(v)) throw InvalidInput("function value is not finite near the check point");
    return v;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + fd_step;
    const double fp = eval(x);
    x[i] = x0 - fd_step;
    const double fm = eval(x);
    x[i] = x0;
    const double fd = (fp - fm) / (2.0 * fd_step);
    worst = std::max(worst, std::abs(ad_grad[i] - fd) / (std::abs(fd) + 1e-8));
  }
  return worst;
}

}  // namespace align_teleop::ad

#pragma once

// Reverse-mode differentiation on a flat scalar tape.
//
// Every value lives in a slot of the tape; a Var is a (tape, slot) handle.
// Nodes are appended in evaluation order, so the node list is topologically
// sorted by construction and backward() is a single reverse sweep. Dense
// layers are recorded as one fused affine node rather than as individual
// multiply-adds.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace align_teleop::ad {

class Tape;

class Var {
 public:
  Var() = default;

  double value() const;
  Tape* tape() const noexcept { return tape_; }
  std::uint32_t index() const noexcept { return index_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
};

/// Contiguous block of parameter slots registered on a tape.
struct ParamHandle {
  std::uint32_t base = 0;
  std::uint32_t size = 0;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddConst,
  MulConst,
  Sin,
  Cos,
  Tanh,
  Exp,
  Sqrt,
  Acos,
  Abs,
  Dot,
  Affine,
};

class Tape {
 public:
  /// The acos derivative is evaluated at the input clipped to [-1+clip, 1-clip].
  static constexpr double kAcosClip = 1e-14;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Drops all nodes but keeps allocated storage.
  void clear();

  Var constant(double v);
  std::vector<Var> constants(std::span<const double> v);

  /// Registers a parameter block as leaves. Gradients returned by backward()
  /// are concatenated over registered blocks in registration order.
  ParamHandle register_parameters(std::span<const double> values);
  Var parameter(ParamHandle h, std::size_t i) const;
  /// Handle over variables occupying consecutive slots (as produced by
  /// constants() or register_parameters()). Throws if they are not consecutive.
  static ParamHandle block_of(std::span<const Var> xs);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var add_const(Var a, double c);
  Var mul_const(Var a, double c);
  Var sin(Var a);
  Var cos(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var sqrt(Var a);
  Var acos(Var a);
  Var abs(Var a);
  Var dot(std::span<const Var> a, std::span<const Var> b);

  /// y = W x + b, W row-major out x in, taken from parameter slots.
  std::vector<Var> affine(std::span<const Var> x, ParamHandle params, std::size_t w_offset,
                          std::size_t b_offset, std::size_t out_dim);
  /// y = W x + b with W and b held outside the tape. The pointed-to storage
  /// must outlive every backward() call on this tape.
  std::vector<Var> affine_frozen(std::span<const Var> x, const double* weights,
                                 const double* biases, std::size_t out_dim);

  /// Reverse sweep from `loss`. Returns d loss / d p for every registered
  /// parameter. The tape is left intact; adjoints of any slot stay readable
  /// through adjoint() until the next backward() or clear().
  std::vector<double> backward(Var loss);
  double adjoint(Var v) const;

  double value(std::uint32_t index) const { return values_[index]; }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    OpKind op;
    std::uint32_t out;
    std::uint32_t a;
    std::uint32_t b;
    double c;
  };
  struct AffineRecord {
    std::uint32_t x_offset;  // into index_arena_
    std::uint32_t in_dim;
    std::uint32_t out_dim;
    std::uint32_t out_base;
    const double* w_frozen;
    const double* b_frozen;
    std::uint32_t w_slot;
    std::uint32_t b_slot;
  };

  std::uint32_t push_value(double v);
  Var unary(OpKind op, Var a, double value, double c = 0.0);
  Var binary(OpKind op, Var a, Var b, double value);
  void check(Var v) const;
  std::vector<Var> affine_impl(std::span<const Var> x, AffineRecord rec);

  std::vector<double> values_;
  std::vector<double> adjoints_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> index_arena_;
  std::vector<AffineRecord> affines_;
  std::vector<ParamHandle> params_;
  std::vector<double> scratch_;
};

inline double Var::value() const { return tape_->value(index_); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

Var sin(Var a);
Var cos(Var a);
Var tanh(Var a);
Var exp(Var a);
Var sqrt(Var a);
Var acos(Var a);
Var abs(Var a);

/// Scalar value of either a plain double or a tape variable.
inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

/// Differentiable scalar map from a point to a loss, built on the given tape.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over coordinates of |autodiff - central difference| / (|central difference| + 1e-8).
double grad_check(const ScalarFunction& fn, std::span<const double> point, double fd_step = 1e-5);

/// Autodiff gradient of fn at point (convenience wrapper used by tests and tools).
std::vector<double> gradient(const ScalarFunction& fn, std::span<const double> point);

}  // namespace align_teleop::ad

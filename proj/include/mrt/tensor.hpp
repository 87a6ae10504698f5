#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mrt {

/// Numeric mode of a tape. f64 keeps full double precision; f32 rounds the
/// result of every forward primitive through IEEE single precision, which is
/// the training default. Verification code (gradient checks, theory sweeps)
/// runs in f64.
enum class Precision { f32, f64 };

class Tape;

/// Handle to a value node on a tape. Cheap to copy; valid as long as the
/// tape is alive and has not been reset.
struct DTensor {
  Tape* tape = nullptr;
  uint32_t id = 0;
  bool valid() const { return tape != nullptr; }
};

/// A trainable array that persists across training steps. Forward passes
/// lease it onto a tape through a Binder; after backward the accumulated
/// node gradient is harvested back into `grad`.
struct Parameter {
  std::string name;
  size_t rows = 0, cols = 0;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, size_t r, size_t c)
      : name(std::move(n)), rows(r), cols(c), value(r * c, 0.0), grad(r * c, 0.0) {}
  size_t size() const { return rows * cols; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Fixed-structure sparse matrix (row major) for linear stencil operators.
struct CsrMatrix {
  size_t rows = 0, cols = 0;
  std::vector<size_t> offsets;  // rows + 1
  std::vector<uint32_t> col;
  std::vector<double> w;
};

/// Recorded operation graph. Execution order is the topological order;
/// backward replays it in exact reverse. Single-threaded by contract;
/// independent tapes may live on different threads.
class Tape {
 public:
  explicit Tape(Precision p = Precision::f64) : precision_(p) {}

  Precision precision() const { return precision_; }
  size_t num_nodes() const { return rows_.size(); }
  size_t num_ops() const { return backward_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Leaf node holding `data` (row major). Gradients accumulate on it when
  /// requires_grad is set.
  DTensor leaf(size_t rows, size_t cols, const std::vector<double>& data,
               bool requires_grad);
  DTensor leaf(size_t rows, size_t cols, const double* data, bool requires_grad);
  /// Leaf without gradient tracking.
  DTensor constant(size_t rows, size_t cols, const std::vector<double>& data);
  DTensor zeros(size_t rows, size_t cols, bool requires_grad = false);
  DTensor scalar(double v);

  size_t rows(DTensor t) const { return rows_[t.id]; }
  size_t cols(DTensor t) const { return cols_[t.id]; }
  const std::vector<double>& val(DTensor t) const { return val_[t.id]; }
  std::vector<double>& val_mut(DTensor t) { return val_[t.id]; }
  /// Gradient of a node after backward(); empty if the node never received one.
  const std::vector<double>& grad(DTensor t) const;
  bool requires_grad(DTensor t) const { return requires_grad_[t.id]; }

  /// Reverse sweep from a scalar (1x1) loss node. Errors if the loss is not
  /// scalar, the tape is empty, or backward already ran without a reset.
  void backward(DTensor loss);

  /// Clears all nodes and records so the tape can be reused.
  void reset();

  // -- internal: used by the op implementations ----------------------------
  DTensor make_node(size_t rows, size_t cols, bool requires_grad);
  void record(std::function<void()> bw) { backward_.push_back(std::move(bw)); }
  std::vector<double>& grad_buf(uint32_t id);
  bool has_grad(uint32_t id) const { return !grad_[id].empty(); }
  void round_f32(uint32_t id);

 private:
  Precision precision_;
  std::vector<size_t> rows_, cols_;
  std::vector<std::vector<double>> val_;
  std::vector<std::vector<double>> grad_;
  std::vector<uint8_t> requires_grad_;
  std::vector<std::function<void()>> backward_;
  bool backward_done_ = false;
};

/// Leases Parameters onto a tape and pulls gradients back after backward.
class Binder {
 public:
  explicit Binder(Tape& tape) : tape_(&tape) {}
  DTensor operator()(Parameter& p);
  /// Accumulate node gradients into the bound parameters' grad buffers.
  void harvest();

 private:
  Tape* tape_;
  std::vector<std::pair<Parameter*, DTensor>> bound_;
};

// --- primitives -----------------------------------------------------------
// All ops check shapes and throw std::invalid_argument naming the op and the
// offending shapes. Broadcasting is limited to scalar-tensor and explicit
// row/column vector forms.

DTensor add(DTensor a, DTensor b);
DTensor sub(DTensor a, DTensor b);
DTensor neg(DTensor a);
DTensor mul(DTensor a, DTensor b);
DTensor add_scalar(DTensor a, double c);
DTensor mul_scalar(DTensor a, double c);
DTensor add_rowvec(DTensor a, DTensor v);  // v: 1 x cols
DTensor mul_rowvec(DTensor a, DTensor v);  // v: 1 x cols
DTensor mul_colvec(DTensor a, DTensor v);  // v: rows x 1

DTensor matmul(DTensor a, DTensor b);
DTensor transpose(DTensor a);

DTensor concat_cols(DTensor a, DTensor b);
DTensor concat_rows(const std::vector<DTensor>& parts);
DTensor slice_cols(DTensor a, size_t start, size_t len);
DTensor slice_rows(DTensor a, size_t start, size_t len);
/// Row gather; an index of -1 yields a zero row (used for padding).
DTensor gather_rows(DTensor a, const std::vector<int64_t>& idx);
/// out[idx[k], :] += a[k, :]
DTensor scatter_sum_rows(DTensor a, const std::vector<int64_t>& idx, size_t out_rows);
/// Scatter a column vector (n x 1) into a zero (rows x cols) matrix at flat
/// positions `flat_idx` (row-major); positions must be distinct.
DTensor scatter_flat(DTensor a, const std::vector<int64_t>& flat_idx, size_t rows,
                     size_t cols);

DTensor sum_all(DTensor a);
DTensor mean_all(DTensor a);
DTensor sum_axis(DTensor a, int axis);   // axis 0 -> 1 x c, axis 1 -> r x 1
DTensor mean_axis(DTensor a, int axis);

DTensor exp_(DTensor a);
DTensor tanh_(DTensor a);
DTensor silu(DTensor a);
DTensor sigmoid(DTensor a);
DTensor sqrt_(DTensor a);
DTensor rsqrt(DTensor a);
DTensor recip(DTensor a);
DTensor softmax(DTensor a, int axis);
DTensor masked_fill(DTensor a, const std::vector<uint8_t>& mask, double value);

/// Rotates channel pairs (2k, 2k+1) for k < num_pairs by per-node angles
/// given as cos/sin tables (rows x num_pairs). Channels >= 2*num_pairs pass
/// through. The rotation is orthogonal, so the backward pass rotates the
/// incoming gradient by the opposite angle.
DTensor rope_rotate(DTensor x, const std::vector<double>& cos_tab,
                    const std::vector<double>& sin_tab, size_t num_pairs);

/// y = S * x for a constant sparse matrix S. Backward applies S^T.
DTensor sparse_matmul(const CsrMatrix& s, DTensor x);

inline DTensor operator+(DTensor a, DTensor b) { return add(a, b); }
inline DTensor operator-(DTensor a, DTensor b) { return sub(a, b); }
inline DTensor operator*(DTensor a, DTensor b) { return mul(a, b); }
inline DTensor operator*(double c, DTensor a) { return mul_scalar(a, c); }

/// Max over coordinates of |analytic - central difference| / (|analytic| + eps)
/// for a scalar-valued function of one tensor. Runs on f64 tapes.
double finite_difference_check(
    const std::function<DTensor(Tape&, DTensor)>& f,
    size_t rows, size_t cols, const std::vector<double>& x, double eps);

}  // namespace mrt

#include "mrt/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mrt {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

[[noreturn]] void shape_error(const char* op, size_t ar, size_t ac, size_t br,
                              size_t bc) {
  std::ostringstream os;
  os << op << ": incompatible shapes " << ar << "x" << ac << " and " << br << "x"
     << bc;
  throw std::invalid_argument(os.str());
}

[[noreturn]] void op_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

void check_same_tape(const char* op, DTensor a, DTensor b) {
  if (a.tape != b.tape) op_error(op, "operands live on different tapes");
}

}  // namespace

// --- Tape -------------------------------------------------------------------

DTensor Tape::make_node(size_t rows, size_t cols, bool requires_grad) {
  rows_.push_back(rows);
  cols_.push_back(cols);
  val_.emplace_back(rows * cols, 0.0);
  grad_.emplace_back();
  requires_grad_.push_back(requires_grad ? 1 : 0);
  return DTensor{this, static_cast<uint32_t>(rows_.size() - 1)};
}

DTensor Tape::leaf(size_t rows, size_t cols, const std::vector<double>& data,
                   bool requires_grad) {
  if (data.size() != rows * cols)
    op_error("leaf", "data size does not match shape");
  DTensor t = make_node(rows, cols, requires_grad);
  val_[t.id] = data;
  round_f32(t.id);
  return t;
}

DTensor Tape::leaf(size_t rows, size_t cols, const double* data,
                   bool requires_grad) {
  DTensor t = make_node(rows, cols, requires_grad);
  std::copy(data, data + rows * cols, val_[t.id].begin());
  round_f32(t.id);
  return t;
}

DTensor Tape::constant(size_t rows, size_t cols, const std::vector<double>& data) {
  return leaf(rows, cols, data, false);
}

DTensor Tape::zeros(size_t rows, size_t cols, bool requires_grad) {
  return make_node(rows, cols, requires_grad);
}

DTensor Tape::scalar(double v) {
  DTensor t = make_node(1, 1, false);
  val_[t.id][0] = v;
  round_f32(t.id);
  return t;
}

const std::vector<double>& Tape::grad(DTensor t) const {
  static const std::vector<double> kEmpty;
  if (grad_[t.id].empty()) return kEmpty;
  return grad_[t.id];
}

std::vector<double>& Tape::grad_buf(uint32_t id) {
  if (grad_[id].empty()) grad_[id].assign(rows_[id] * cols_[id], 0.0);
  return grad_[id];
}

void Tape::round_f32(uint32_t id) {
  if (precision_ != Precision::f32) return;
  for (double& v : val_[id]) v = static_cast<double>(static_cast<float>(v));
}

void Tape::backward(DTensor loss) {
  if (loss.tape != this) op_error("backward", "loss lives on another tape");
  if (backward_.empty()) op_error("backward", "tape is empty");
  if (backward_done_)
    op_error("backward", "backward already ran on this tape; reset() first");
  if (rows_[loss.id] != 1 || cols_[loss.id] != 1) {
    std::ostringstream os;
    os << "backward: loss must be scalar, got " << rows_[loss.id] << "x"
       << cols_[loss.id];
    throw std::invalid_argument(os.str());
  }
  grad_buf(loss.id)[0] = 1.0;
  for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
  backward_done_ = true;
}

void Tape::reset() {
  rows_.clear();
  cols_.clear();
  val_.clear();
  grad_.clear();
  requires_grad_.clear();
  backward_.clear();
  backward_done_ = false;
}

// --- Binder -------------------------------------------------------------------

DTensor Binder::operator()(Parameter& p) {
  DTensor t = tape_->leaf(p.rows, p.cols, p.value, true);
  bound_.emplace_back(&p, t);
  return t;
}

void Binder::harvest() {
  for (auto& [p, t] : bound_) {
    if (!tape_->has_grad(t.id)) continue;
    const auto& g = tape_->grad(t);
    for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  }
}

// --- elementwise ------------------------------------------------------------

namespace {

// Shared plumbing for binary ops with identical shapes.
template <class Fwd, class Bwd>
DTensor binary_same(const char* name, DTensor a, DTensor b, Fwd fwd, Bwd bwd) {
  check_same_tape(name, a, b);
  Tape& tp = *a.tape;
  if (tp.rows(a) != tp.rows(b) || tp.cols(a) != tp.cols(b))
    shape_error(name, tp.rows(a), tp.cols(a), tp.rows(b), tp.cols(b));
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  DTensor out = tp.make_node(tp.rows(a), tp.cols(a), rg);
  fwd(tp.val(a), tp.val(b), tp.val_mut(out));
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, bi = b.id, oi = out.id;
    tp.record([t, ai, bi, oi, bwd]() {
      if (!t->has_grad(oi)) return;
      bwd(*t, ai, bi, oi);
    });
  }
  return out;
}

template <class Fwd, class Bwd>
DTensor unary(const char* name, DTensor a, Fwd fwd, Bwd bwd) {
  (void)name;
  Tape& tp = *a.tape;
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(tp.rows(a), tp.cols(a), rg);
  fwd(tp.val(a), tp.val_mut(out));
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, bwd]() {
      if (!t->has_grad(oi)) return;
      bwd(*t, ai, oi);
    });
  }
  return out;
}

}  // namespace

DTensor add(DTensor a, DTensor b) {
  return binary_same(
      "add", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y,
         std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      },
      [](Tape& t, uint32_t ai, uint32_t bi, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        if (t.requires_grad(DTensor{&t, ai})) {
          auto& ga = t.grad_buf(ai);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(DTensor{&t, bi})) {
          auto& gb = t.grad_buf(bi);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

DTensor sub(DTensor a, DTensor b) {
  return binary_same(
      "sub", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y,
         std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      },
      [](Tape& t, uint32_t ai, uint32_t bi, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        if (t.requires_grad(DTensor{&t, ai})) {
          auto& ga = t.grad_buf(ai);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(DTensor{&t, bi})) {
          auto& gb = t.grad_buf(bi);
          for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

DTensor mul(DTensor a, DTensor b) {
  return binary_same(
      "mul", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y,
         std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      },
      [](Tape& t, uint32_t ai, uint32_t bi, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& xa = t.val(DTensor{&t, ai});
        const auto& xb = t.val(DTensor{&t, bi});
        if (t.requires_grad(DTensor{&t, ai})) {
          auto& ga = t.grad_buf(ai);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
        }
        if (t.requires_grad(DTensor{&t, bi})) {
          auto& gb = t.grad_buf(bi);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
        }
      });
}

DTensor neg(DTensor a) { return mul_scalar(a, -1.0); }

DTensor add_scalar(DTensor a, double c) {
  return unary(
      "add_scalar", a,
      [c](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + c;
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
}

DTensor mul_scalar(DTensor a, double c) {
  return unary(
      "mul_scalar", a,
      [c](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * c;
      },
      [c](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
}

DTensor add_rowvec(DTensor a, DTensor v) {
  check_same_tape("add_rowvec", a, v);
  Tape& tp = *a.tape;
  if (tp.rows(v) != 1 || tp.cols(v) != tp.cols(a))
    shape_error("add_rowvec", tp.rows(a), tp.cols(a), tp.rows(v), tp.cols(v));
  bool rg = tp.requires_grad(a) || tp.requires_grad(v);
  size_t R = tp.rows(a), C = tp.cols(a);
  DTensor out = tp.make_node(R, C, rg);
  {
    const auto& x = tp.val(a);
    const auto& b = tp.val(v);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r)
      for (size_t c = 0; c < C; ++c) o[r * C + c] = x[r * C + c] + b[c];
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, vi = v.id, oi = out.id;
    tp.record([t, ai, vi, oi, R, C]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      if (t->requires_grad(DTensor{t, ai})) {
        auto& ga = t->grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t->requires_grad(DTensor{t, vi})) {
        auto& gv = t->grad_buf(vi);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) gv[c] += g[r * C + c];
      }
    });
  }
  return out;
}

DTensor mul_rowvec(DTensor a, DTensor v) {
  check_same_tape("mul_rowvec", a, v);
  Tape& tp = *a.tape;
  if (tp.rows(v) != 1 || tp.cols(v) != tp.cols(a))
    shape_error("mul_rowvec", tp.rows(a), tp.cols(a), tp.rows(v), tp.cols(v));
  bool rg = tp.requires_grad(a) || tp.requires_grad(v);
  size_t R = tp.rows(a), C = tp.cols(a);
  DTensor out = tp.make_node(R, C, rg);
  {
    const auto& x = tp.val(a);
    const auto& b = tp.val(v);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r)
      for (size_t c = 0; c < C; ++c) o[r * C + c] = x[r * C + c] * b[c];
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, vi = v.id, oi = out.id;
    tp.record([t, ai, vi, oi, R, C]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      const auto& x = t->val(DTensor{t, ai});
      const auto& b = t->val(DTensor{t, vi});
      if (t->requires_grad(DTensor{t, ai})) {
        auto& ga = t->grad_buf(ai);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) ga[r * C + c] += g[r * C + c] * b[c];
      }
      if (t->requires_grad(DTensor{t, vi})) {
        auto& gv = t->grad_buf(vi);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) gv[c] += g[r * C + c] * x[r * C + c];
      }
    });
  }
  return out;
}

DTensor mul_colvec(DTensor a, DTensor v) {
  check_same_tape("mul_colvec", a, v);
  Tape& tp = *a.tape;
  if (tp.cols(v) != 1 || tp.rows(v) != tp.rows(a))
    shape_error("mul_colvec", tp.rows(a), tp.cols(a), tp.rows(v), tp.cols(v));
  bool rg = tp.requires_grad(a) || tp.requires_grad(v);
  size_t R = tp.rows(a), C = tp.cols(a);
  DTensor out = tp.make_node(R, C, rg);
  {
    const auto& x = tp.val(a);
    const auto& b = tp.val(v);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r)
      for (size_t c = 0; c < C; ++c) o[r * C + c] = x[r * C + c] * b[r];
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, vi = v.id, oi = out.id;
    tp.record([t, ai, vi, oi, R, C]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      const auto& x = t->val(DTensor{t, ai});
      const auto& b = t->val(DTensor{t, vi});
      if (t->requires_grad(DTensor{t, ai})) {
        auto& ga = t->grad_buf(ai);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) ga[r * C + c] += g[r * C + c] * b[r];
      }
      if (t->requires_grad(DTensor{t, vi})) {
        auto& gv = t->grad_buf(vi);
        for (size_t r = 0; r < R; ++r) {
          double s = 0.0;
          for (size_t c = 0; c < C; ++c) s += g[r * C + c] * x[r * C + c];
          gv[r] += s;
        }
      }
    });
  }
  return out;
}

// --- linear algebra -----------------------------------------------------------

DTensor matmul(DTensor a, DTensor b) {
  check_same_tape("matmul", a, b);
  Tape& tp = *a.tape;
  size_t ar = tp.rows(a), ac = tp.cols(a), br = tp.rows(b), bc = tp.cols(b);
  if (ac != br) shape_error("matmul", ar, ac, br, bc);
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  DTensor out = tp.make_node(ar, bc, rg);
  {
    ECMap ma(tp.val(a).data(), ar, ac);
    ECMap mb(tp.val(b).data(), br, bc);
    EMap mo(tp.val_mut(out).data(), ar, bc);
    mo.noalias() = ma * mb;
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, bi = b.id, oi = out.id;
    tp.record([t, ai, bi, oi, ar, ac, bc]() {
      if (!t->has_grad(oi)) return;
      ECMap g(t->grad_buf(oi).data(), ar, bc);
      if (t->requires_grad(DTensor{t, ai})) {
        ECMap mb(t->val(DTensor{t, bi}).data(), ac, bc);
        EMap ga(t->grad_buf(ai).data(), ar, ac);
        ga.noalias() += g * mb.transpose();
      }
      if (t->requires_grad(DTensor{t, bi})) {
        ECMap ma(t->val(DTensor{t, ai}).data(), ar, ac);
        EMap gb(t->grad_buf(bi).data(), ac, bc);
        gb.noalias() += ma.transpose() * g;
      }
    });
  }
  return out;
}

DTensor transpose(DTensor a) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(C, R, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r)
      for (size_t c = 0; c < C; ++c) o[c * R + r] = x[r * C + c];
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, R, C]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c) ga[r * C + c] += g[c * R + r];
    });
  }
  return out;
}

// --- structure ops --------------------------------------------------------

DTensor concat_cols(DTensor a, DTensor b) {
  check_same_tape("concat_cols", a, b);
  Tape& tp = *a.tape;
  if (tp.rows(a) != tp.rows(b))
    shape_error("concat_cols", tp.rows(a), tp.cols(a), tp.rows(b), tp.cols(b));
  size_t R = tp.rows(a), Ca = tp.cols(a), Cb = tp.cols(b);
  bool rg = tp.requires_grad(a) || tp.requires_grad(b);
  DTensor out = tp.make_node(R, Ca + Cb, rg);
  {
    const auto& x = tp.val(a);
    const auto& y = tp.val(b);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r) {
      std::copy(x.begin() + r * Ca, x.begin() + (r + 1) * Ca,
                o.begin() + r * (Ca + Cb));
      std::copy(y.begin() + r * Cb, y.begin() + (r + 1) * Cb,
                o.begin() + r * (Ca + Cb) + Ca);
    }
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, bi = b.id, oi = out.id;
    tp.record([t, ai, bi, oi, R, Ca, Cb]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      if (t->requires_grad(DTensor{t, ai})) {
        auto& ga = t->grad_buf(ai);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < Ca; ++c) ga[r * Ca + c] += g[r * (Ca + Cb) + c];
      }
      if (t->requires_grad(DTensor{t, bi})) {
        auto& gb = t->grad_buf(bi);
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < Cb; ++c)
            gb[r * Cb + c] += g[r * (Ca + Cb) + Ca + c];
      }
    });
  }
  return out;
}

DTensor concat_rows(const std::vector<DTensor>& parts) {
  if (parts.empty()) op_error("concat_rows", "empty part list");
  Tape& tp = *parts[0].tape;
  size_t C = tp.cols(parts[0]);
  size_t R = 0;
  bool rg = false;
  for (DTensor p : parts) {
    check_same_tape("concat_rows", parts[0], p);
    if (tp.cols(p) != C)
      shape_error("concat_rows", R, C, tp.rows(p), tp.cols(p));
    R += tp.rows(p);
    rg = rg || tp.requires_grad(p);
  }
  DTensor out = tp.make_node(R, C, rg);
  {
    auto& o = tp.val_mut(out);
    size_t at = 0;
    for (DTensor p : parts) {
      const auto& x = tp.val(p);
      std::copy(x.begin(), x.end(), o.begin() + at);
      at += x.size();
    }
  }
  if (rg) {
    Tape* t = &tp;
    std::vector<uint32_t> ids;
    ids.reserve(parts.size());
    for (DTensor p : parts) ids.push_back(p.id);
    uint32_t oi = out.id;
    tp.record([t, ids, oi]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      size_t at = 0;
      for (uint32_t pid : ids) {
        size_t n = t->val(DTensor{t, pid}).size();
        if (t->requires_grad(DTensor{t, pid})) {
          auto& gp = t->grad_buf(pid);
          for (size_t i = 0; i < n; ++i) gp[i] += g[at + i];
        }
        at += n;
      }
    });
  }
  return out;
}

DTensor slice_cols(DTensor a, size_t start, size_t len) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  if (start + len > C) op_error("slice_cols", "slice out of range");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(R, len, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < R; ++r)
      std::copy(x.begin() + r * C + start, x.begin() + r * C + start + len,
                o.begin() + r * len);
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, R, C, start, len]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < len; ++c) ga[r * C + start + c] += g[r * len + c];
    });
  }
  return out;
}

DTensor slice_rows(DTensor a, size_t start, size_t len) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  if (start + len > R) op_error("slice_rows", "slice out of range");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(len, C, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    std::copy(x.begin() + start * C, x.begin() + (start + len) * C, o.begin());
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, C, start, len]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t i = 0; i < len * C; ++i) ga[start * C + i] += g[i];
    });
  }
  return out;
}

DTensor gather_rows(DTensor a, const std::vector<int64_t>& idx) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  for (int64_t i : idx)
    if (i >= static_cast<int64_t>(R) || i < -1)
      op_error("gather_rows", "row index out of range");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(idx.size(), C, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0) continue;  // padding row stays zero
      std::copy(x.begin() + idx[k] * C, x.begin() + (idx[k] + 1) * C,
                o.begin() + k * C);
    }
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    auto ids = idx;
    tp.record([t, ai, oi, C, ids]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] < 0) continue;
        for (size_t c = 0; c < C; ++c) ga[ids[k] * C + c] += g[k * C + c];
      }
    });
  }
  return out;
}

DTensor scatter_sum_rows(DTensor a, const std::vector<int64_t>& idx,
                         size_t out_rows) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  if (idx.size() != R) op_error("scatter_sum_rows", "index count != rows");
  for (int64_t i : idx)
    if (i < 0 || i >= static_cast<int64_t>(out_rows))
      op_error("scatter_sum_rows", "target row out of range");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(out_rows, C, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t k = 0; k < R; ++k)
      for (size_t c = 0; c < C; ++c) o[idx[k] * C + c] += x[k * C + c];
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    auto ids = idx;
    tp.record([t, ai, oi, C, ids]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t k = 0; k < ids.size(); ++k)
        for (size_t c = 0; c < C; ++c) ga[k * C + c] += g[ids[k] * C + c];
    });
  }
  return out;
}

DTensor scatter_flat(DTensor a, const std::vector<int64_t>& flat_idx, size_t rows,
                     size_t cols) {
  Tape& tp = *a.tape;
  if (tp.cols(a) != 1) op_error("scatter_flat", "input must be a column vector");
  if (flat_idx.size() != tp.rows(a))
    op_error("scatter_flat", "index count != rows");
  for (int64_t i : flat_idx)
    if (i < 0 || i >= static_cast<int64_t>(rows * cols))
      op_error("scatter_flat", "flat index out of range");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(rows, cols, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t k = 0; k < flat_idx.size(); ++k) o[flat_idx[k]] = x[k];
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    auto ids = flat_idx;
    tp.record([t, ai, oi, ids]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t k = 0; k < ids.size(); ++k) ga[k] += g[ids[k]];
    });
  }
  return out;
}

// --- reductions -------------------------------------------------------------

DTensor sum_all(DTensor a) {
  Tape& tp = *a.tape;
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(1, 1, rg);
  {
    double s = 0.0;
    for (double v : tp.val(a)) s += v;
    tp.val_mut(out)[0] = s;
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi]() {
      if (!t->has_grad(oi)) return;
      double g = t->grad_buf(oi)[0];
      auto& ga = t->grad_buf(ai);
      for (double& v : ga) v += g;
    });
  }
  return out;
}

DTensor mean_all(DTensor a) {
  Tape& tp = *a.tape;
  size_t n = tp.val(a).size();
  if (n == 0) op_error("mean_all", "empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(n));
}

DTensor sum_axis(DTensor a, int axis) {
  Tape& tp = *a.tape;
  size_t R = tp.rows(a), C = tp.cols(a);
  if (axis != 0 && axis != 1) op_error("sum_axis", "axis must be 0 or 1");
  bool rg = tp.requires_grad(a);
  DTensor out = axis == 0 ? tp.make_node(1, C, rg) : tp.make_node(R, 1, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    if (axis == 0) {
      for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c) o[c] += x[r * C + c];
    } else {
      for (size_t r = 0; r < R; ++r) {
        double s = 0.0;
        for (size_t c = 0; c < C; ++c) s += x[r * C + c];
        o[r] = s;
      }
    }
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, R, C, axis]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      if (axis == 0) {
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) ga[r * C + c] += g[c];
      } else {
        for (size_t r = 0; r < R; ++r)
          for (size_t c = 0; c < C; ++c) ga[r * C + c] += g[r];
      }
    });
  }
  return out;
}

DTensor mean_axis(DTensor a, int axis) {
  Tape& tp = *a.tape;
  size_t n = axis == 0 ? tp.rows(a) : tp.cols(a);
  if (n == 0) op_error("mean_axis", "empty axis");
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

// --- nonlinearities ---------------------------------------------------------

DTensor exp_(DTensor a) {
  return unary(
      "exp", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x[i]);
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      });
}

DTensor tanh_(DTensor a) {
  return unary(
      "tanh", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

DTensor sigmoid(DTensor a) {
  return unary(
      "sigmoid", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-x[i]));
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

DTensor silu(DTensor a) {
  return unary(
      "silu", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i)
          o[i] = x[i] / (1.0 + std::exp(-x[i]));
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& x = t.val(DTensor{&t, ai});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) {
          double s = 1.0 / (1.0 + std::exp(-x[i]));
          ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
      });
}

DTensor sqrt_(DTensor a) {
  return unary(
      "sqrt", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = std::sqrt(x[i]);
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 0.5 / y[i];
      });
}

DTensor rsqrt(DTensor a) {
  return unary(
      "rsqrt", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / std::sqrt(x[i]);
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i)
          ga[i] += g[i] * (-0.5) * y[i] * y[i] * y[i];
      });
}

DTensor recip(DTensor a) {
  return unary(
      "recip", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = 1.0 / x[i];
      },
      [](Tape& t, uint32_t ai, uint32_t oi) {
        const auto& g = t.grad_buf(oi);
        const auto& y = t.val(DTensor{&t, oi});
        auto& ga = t.grad_buf(ai);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += -g[i] * y[i] * y[i];
      });
}

DTensor softmax(DTensor a, int axis) {
  Tape& tp = *a.tape;
  if (axis != 0 && axis != 1) op_error("softmax", "axis must be 0 or 1");
  size_t R = tp.rows(a), C = tp.cols(a);
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(R, C, rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    size_t outer = axis == 1 ? R : C;
    size_t inner = axis == 1 ? C : R;
    for (size_t i = 0; i < outer; ++i) {
      auto at = [&](size_t k) { return axis == 1 ? i * C + k : k * C + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < inner; ++k) m = std::max(m, x[at(k)]);
      double s = 0.0;
      for (size_t k = 0; k < inner; ++k) {
        double e = std::exp(x[at(k)] - m);
        o[at(k)] = e;
        s += e;
      }
      for (size_t k = 0; k < inner; ++k) o[at(k)] /= s;
    }
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    tp.record([t, ai, oi, R, C, axis]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      const auto& y = t->val(DTensor{t, oi});
      auto& ga = t->grad_buf(ai);
      size_t outer = axis == 1 ? R : C;
      size_t inner = axis == 1 ? C : R;
      for (size_t i = 0; i < outer; ++i) {
        auto at = [&](size_t k) { return axis == 1 ? i * C + k : k * C + i; };
        double dot = 0.0;
        for (size_t k = 0; k < inner; ++k) dot += g[at(k)] * y[at(k)];
        for (size_t k = 0; k < inner; ++k)
          ga[at(k)] += y[at(k)] * (g[at(k)] - dot);
      }
    });
  }
  return out;
}

DTensor masked_fill(DTensor a, const std::vector<uint8_t>& mask, double value) {
  Tape& tp = *a.tape;
  if (mask.size() != tp.val(a).size())
    op_error("masked_fill", "mask size does not match tensor size");
  bool rg = tp.requires_grad(a);
  DTensor out = tp.make_node(tp.rows(a), tp.cols(a), rg);
  {
    const auto& x = tp.val(a);
    auto& o = tp.val_mut(out);
    for (size_t i = 0; i < o.size(); ++i) o[i] = mask[i] ? value : x[i];
  }
  if (rg) {
    Tape* t = &tp;
    uint32_t ai = a.id, oi = out.id;
    auto m = mask;
    tp.record([t, ai, oi, m]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& ga = t->grad_buf(ai);
      for (size_t i = 0; i < g.size(); ++i)
        if (!m[i]) ga[i] += g[i];
    });
  }
  return out;
}

DTensor rope_rotate(DTensor x, const std::vector<double>& cos_tab,
                    const std::vector<double>& sin_tab, size_t num_pairs) {
  Tape& tp = *x.tape;
  size_t R = tp.rows(x), C = tp.cols(x);
  if (2 * num_pairs > C) op_error("rope_rotate", "pair count exceeds width");
  if (cos_tab.size() != R * num_pairs || sin_tab.size() != R * num_pairs)
    op_error("rope_rotate", "angle table size does not match rows x pairs");
  bool rg = tp.requires_grad(x);
  DTensor out = tp.make_node(R, C, rg);
  {
    const auto& v = tp.val(x);
    auto& o = tp.val_mut(out);
    o = v;
    for (size_t r = 0; r < R; ++r) {
      for (size_t p = 0; p < num_pairs; ++p) {
        double cs = cos_tab[r * num_pairs + p];
        double sn = sin_tab[r * num_pairs + p];
        double u = v[r * C + 2 * p], w = v[r * C + 2 * p + 1];
        o[r * C + 2 * p] = cs * u - sn * w;
        o[r * C + 2 * p + 1] = sn * u + cs * w;
      }
    }
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t xi = x.id, oi = out.id;
    auto ct = cos_tab;
    auto st = sin_tab;
    tp.record([t, xi, oi, ct, st, R, C, num_pairs]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& gx = t->grad_buf(xi);
      for (size_t r = 0; r < R; ++r) {
        for (size_t c = 2 * num_pairs; c < C; ++c) gx[r * C + c] += g[r * C + c];
        for (size_t p = 0; p < num_pairs; ++p) {
          double cs = ct[r * num_pairs + p];
          double sn = st[r * num_pairs + p];
          double gu = g[r * C + 2 * p], gw = g[r * C + 2 * p + 1];
          gx[r * C + 2 * p] += cs * gu + sn * gw;
          gx[r * C + 2 * p + 1] += -sn * gu + cs * gw;
        }
      }
    });
  }
  return out;
}

DTensor sparse_matmul(const CsrMatrix& s, DTensor x) {
  Tape& tp = *x.tape;
  size_t R = tp.rows(x), C = tp.cols(x);
  if (s.cols != R) shape_error("sparse_matmul", s.rows, s.cols, R, C);
  bool rg = tp.requires_grad(x);
  DTensor out = tp.make_node(s.rows, C, rg);
  {
    const auto& v = tp.val(x);
    auto& o = tp.val_mut(out);
    for (size_t r = 0; r < s.rows; ++r)
      for (size_t k = s.offsets[r]; k < s.offsets[r + 1]; ++k)
        for (size_t c = 0; c < C; ++c)
          o[r * C + c] += s.w[k] * v[s.col[k] * C + c];
  }
  tp.round_f32(out.id);
  if (rg) {
    Tape* t = &tp;
    uint32_t xi = x.id, oi = out.id;
    const CsrMatrix* sp = &s;  // caller keeps the matrix alive across backward
    tp.record([t, xi, oi, sp, C]() {
      if (!t->has_grad(oi)) return;
      const auto& g = t->grad_buf(oi);
      auto& gx = t->grad_buf(xi);
      for (size_t r = 0; r < sp->rows; ++r)
        for (size_t k = sp->offsets[r]; k < sp->offsets[r + 1]; ++k)
          for (size_t c = 0; c < C; ++c)
            gx[sp->col[k] * C + c] += sp->w[k] * g[r * C + c];
    });
  }
  return out;
}

// --- verification harness -----------------------------------------------------

double finite_difference_check(
    const std::function<DTensor(Tape&, DTensor)>& f,
    size_t rows, size_t cols, const std::vector<double>& x, double eps) {
  // Analytic gradient.
  std::vector<double> analytic(rows * cols, 0.0);
  {
    Tape tape(Precision::f64);
    DTensor xt = tape.leaf(rows, cols, x, true);
    DTensor y = f(tape, xt);
    tape.backward(y);
    if (tape.has_grad(xt.id)) analytic = tape.grad(xt);
  }
  auto eval = [&](const std::vector<double>& xv) {
    Tape tape(Precision::f64);
    DTensor xt = tape.leaf(rows, cols, xv, false);
    DTensor y = f(tape, xt);
    if (tape.rows(y) != 1 || tape.cols(y) != 1)
      op_error("finite_difference_check", "f must be scalar-valued");
    return tape.val(y)[0];
  };
  double max_rel = 0.0;
  std::vector<double> xv = x;
  for (size_t i = 0; i < xv.size(); ++i) {
    double keep = xv[i];
    xv[i] = keep + eps;
    double fp = eval(xv);
    xv[i] = keep - eps;
    double fm = eval(xv);
    xv[i] = keep;
    double fd = (fp - fm) / (2.0 * eps);
    double rel = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + eps);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace mrt

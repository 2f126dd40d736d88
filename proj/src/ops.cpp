#include "gemdepth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace gemdepth {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

[[noreturn]] void shape_error(const std::string& op, const Tensor& a,
                              const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " +
                              shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw std::invalid_argument(std::string(op) + ": axis " +
                                std::to_string(axis) + " out of range for rank " +
                                std::to_string(rank));
  return a;
}

// outer * n * inner decomposition around `axis`.
struct AxisSplit {
  int64_t outer, n, inner;
};
AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
    r.inner *= s[i];
  return r;
}

// Raw GEMM kernels over contiguous float buffers. `acc` accumulates into C.
void gemm_nn(float* c, const float* a, const float* b, int64_t m, int64_t k,
             int64_t n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(float* c, const float* a, const float* b, int64_t m, int64_t k,
             int64_t n, bool acc) {
  for (int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float s = 0.0f;
      for (int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = acc ? crow[j] + s : s;
    }
  }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(float* c, const float* a, const float* b, int64_t m, int64_t k,
             int64_t n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m * n));
  for (int64_t p = 0; p < k; ++p) {
    const float* arow = a + p * m;
    const float* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const float av = arow[i];
      if (av == 0.0f) continue;
      float* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor unary_op(const char* name, const Tensor& x, float (*f)(float),
                float (*df)(float)) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op(name, {x}, y, [xc, y, df]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i] * df(xd2[i]);
  });
  return y;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("add", a, b);
  std::vector<float> out(static_cast<size_t>(a.numel()));
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out));
  Tensor ac = a, bc = b;
  detail::record_op("add", {a, b}, y, [ac, bc, y]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (ac.requires_grad()) {
      auto ga = ac.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (bc.requires_grad()) {
      auto gb = bc.grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    }
  });
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a, b);
  std::vector<float> out(static_cast<size_t>(a.numel()));
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out));
  Tensor ac = a, bc = b;
  detail::record_op("sub", {a, b}, y, [ac, bc, y]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (ac.requires_grad()) {
      auto ga = ac.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (bc.requires_grad()) {
      auto gb = bc.grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", a, b);
  std::vector<float> out(static_cast<size_t>(a.numel()));
  auto ad = a.data(), bd = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(out));
  Tensor ac = a, bc = b;
  detail::record_op("mul", {a, b}, y, [ac, bc, y]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    auto ad2 = ac.data();
    auto bd2 = bc.data();
    if (ac.requires_grad()) {
      auto ga = ac.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bd2[i];
    }
    if (bc.requires_grad()) {
      auto gb = bc.grad();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * ad2[i];
    }
  });
  return y;
}

Tensor smul(const Tensor& x, float c) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * c;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("smul", {x}, y, [xc, y, c]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i] * c;
  });
  return y;
}

Tensor sadd(const Tensor& x, float c) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + c;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("sadd", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
  });
  return y;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  require(s.numel() == 1, "scale_by: scale must have one element, got " +
                              shape_str(s.shape()));
  const float sv = s.data()[0];
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * sv;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, sc = s;
  detail::record_op("scale_by", {x, s}, y, [xc, sc, y, sv]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i] * sv;
    }
    if (sc.requires_grad()) {
      auto xd2 = xc.data();
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i)
        acc += static_cast<double>(g[i]) * xd2[i];
      sc.grad()[0] += static_cast<float>(acc);
    }
  });
  return y;
}

Tensor shift_by(const Tensor& x, const Tensor& s) {
  require(s.numel() == 1, "shift_by: shift must have one element, got " +
                              shape_str(s.shape()));
  const float sv = s.data()[0];
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + sv;
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, sc = s;
  detail::record_op("shift_by", {x, s}, y, [xc, sc, y]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
    }
    if (sc.requires_grad()) {
      double acc = 0.0;
      for (float v : g) acc += v;
      sc.grad()[0] += static_cast<float>(acc);
    }
  });
  return y;
}

// ------------------------------------------------------------------ broadcasts

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require(b.rank() == 1 && x.rank() >= 1 && x.dim(-1) == b.dim(0),
          "add_bias: bias " + shape_str(b.shape()) + " does not match last axis of " +
              shape_str(x.shape()));
  const int64_t d = b.dim(0);
  const int64_t rows = x.numel() / d;
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  auto bd = b.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] + bd[j];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, bc = b;
  detail::record_op("add_bias", {x, b}, y, [xc, bc, y, rows, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
    }
    if (bc.requires_grad()) {
      auto bg = bc.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) bg[j] += g[r * d + j];
    }
  });
  return y;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require(v.rank() == 1 && x.dim(-1) == v.dim(0),
          "mul_rowvec: vector " + shape_str(v.shape()) +
              " does not match last axis of " + shape_str(x.shape()));
  const int64_t d = v.dim(0);
  const int64_t rows = x.numel() / d;
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  auto vd = v.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * vd[j];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, vc = v;
  detail::record_op("mul_rowvec", {x, v}, y, [xc, vc, y, rows, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto vd2 = vc.data();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) xg[r * d + j] += g[r * d + j] * vd2[j];
    }
    if (vc.requires_grad()) {
      auto vg = vc.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) vg[j] += g[r * d + j] * xd2[r * d + j];
    }
  });
  return y;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  Shape expect = x.shape();
  expect.back() = 1;
  require(s.shape() == expect, "scale_rows: scales " + shape_str(s.shape()) +
                                   " must be " + shape_str(expect) + " for x " +
                                   shape_str(x.shape()));
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  auto sd = s.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * sd[r];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, sc = s;
  detail::record_op("scale_rows", {x, s}, y, [xc, sc, y, rows, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto sd2 = sc.data();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) xg[r * d + j] += g[r * d + j] * sd2[r];
    }
    if (sc.requires_grad()) {
      auto sg = sc.grad();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j)
          acc += static_cast<double>(g[r * d + j]) * xd2[r * d + j];
        sg[r] += static_cast<float>(acc);
      }
    }
  });
  return y;
}

Tensor add_token_bias(const Tensor& x, const Tensor& v) {
  require(x.rank() == 3 && v.rank() == 2 && x.dim(0) == v.dim(0) &&
              x.dim(2) == v.dim(1),
          "add_token_bias: expected x [B,L,D] and v [B,D], got " +
              shape_str(x.shape()) + " and " + shape_str(v.shape()));
  const int64_t bsz = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  auto vd = v.data();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t t = 0; t < l; ++t)
      for (int64_t j = 0; j < d; ++j)
        out[(b * l + t) * d + j] = xd[(b * l + t) * d + j] + vd[b * d + j];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, vc = v;
  detail::record_op("add_token_bias", {x, v}, y, [xc, vc, y, bsz, l, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
    }
    if (vc.requires_grad()) {
      auto vg = vc.grad();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t t = 0; t < l; ++t)
          for (int64_t j = 0; j < d; ++j)
            vg[b * d + j] += g[(b * l + t) * d + j];
    }
  });
  return y;
}

Tensor add_seq_bias(const Tensor& x, const Tensor& e) {
  require(x.rank() == 3 && e.rank() == 2 && x.dim(1) == e.dim(0) &&
              x.dim(2) == e.dim(1),
          "add_seq_bias: expected x [B,L,D] and e [L,D], got " +
              shape_str(x.shape()) + " and " + shape_str(e.shape()));
  const int64_t bsz = x.dim(0), l = x.dim(1), d = x.dim(2);
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  auto ed = e.data();
  for (int64_t b = 0; b < bsz; ++b)
    for (int64_t t = 0; t < l; ++t)
      for (int64_t j = 0; j < d; ++j)
        out[(b * l + t) * d + j] = xd[(b * l + t) * d + j] + ed[t * d + j];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, ec = e;
  detail::record_op("add_seq_bias", {x, e}, y, [xc, ec, y, bsz, l, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    if (xc.requires_grad()) {
      auto xg = xc.grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
    }
    if (ec.requires_grad()) {
      auto eg = ec.grad();
      for (int64_t b = 0; b < bsz; ++b)
        for (int64_t t = 0; t < l; ++t)
          for (int64_t j = 0; j < d; ++j)
            eg[t * d + j] += g[(b * l + t) * d + j];
    }
  });
  return y;
}

// ----------------------------------------------------------------------- unary

Tensor neg(const Tensor& x) {
  return unary_op(
      "neg", x, [](float v) { return -v; }, [](float) { return -1.0f; });
}

Tensor exp_t(const Tensor& x) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xd[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("exp", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto yd = y.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i] * yd[i];
  });
  return y;
}

Tensor log_t(const Tensor& x) {
  return unary_op(
      "log", x, [](float v) { return std::log(v); },
      [](float v) { return 1.0f / v; });
}

Tensor sqrt_t(const Tensor& x) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(xd[i]);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("sqrt", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto yd = y.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i] * 0.5f / yd[i];
  });
  return y;
}

Tensor abs_t(const Tensor& x) {
  return unary_op(
      "abs", x, [](float v) { return std::fabs(v); },
      [](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor recip(const Tensor& x) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0f / xd[i];
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("recip", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto yd = y.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] -= g[i] * yd[i] * yd[i];
  });
  return y;
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      "gelu", x,
      [](float v) {
        return static_cast<float>(
            0.5 * v * (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2)));
      },
      [](float v) {
        const double phi =
            0.5 * (1.0 + std::erf(static_cast<double>(v) * kInvSqrt2));
        const double pdf =
            kInvSqrt2Pi * std::exp(-0.5 * static_cast<double>(v) * v);
        return static_cast<float>(phi + v * pdf);
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      "softplus", x,
      [](float v) {
        return static_cast<float>(std::log1p(std::exp(-std::fabs(v))) +
                                  std::max(v, 0.0f));
      },
      [](float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-v))); });
}

Tensor clamp_min(const Tensor& x, float lo) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(xd[i], lo);
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("clamp_min", {x}, y, [xc, y, lo]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i)
      if (xd2[i] > lo) xg[i] += g[i];
  });
  return y;
}

Tensor huber(const Tensor& x, float delta) {
  require(delta > 0.0f, "huber: delta must be positive");
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) {
    const float a = std::fabs(xd[i]);
    out[i] = a <= delta ? 0.5f * xd[i] * xd[i] : delta * (a - 0.5f * delta);
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("huber", {x}, y, [xc, y, delta]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i)
      xg[i] += g[i] * std::clamp(xd2[i], -delta, delta);
  });
  return y;
}

Tensor sign_detached(const Tensor& x) {
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = xd[i] > 0.0f ? 1.0f : (xd[i] < 0.0f ? -1.0f : 0.0f);
  return Tensor::from_data(x.shape(), std::move(out));
}

Tensor detach(const Tensor& x) { return x.detach_copy(); }

// --------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int ra = a.rank(), rb = b.rank();
  int64_t batch = 1, m = 0, k = 0, n = 0;
  bool b_shared = false;
  if (ra == 2 && rb == 2) {
    m = a.dim(0);
    k = a.dim(1);
    if (b.dim(0) != k) shape_error("matmul", a, b);
    n = b.dim(1);
  } else if (ra == 3 && rb == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) shape_error("matmul", a, b);
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    n = b.dim(2);
  } else if (ra == 3 && rb == 2) {
    if (a.dim(2) != b.dim(0)) shape_error("matmul", a, b);
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    n = b.dim(1);
    b_shared = true;
  } else {
    shape_error("matmul", a, b);
  }

  Shape out_shape = (ra == 2) ? Shape{m, n} : Shape{batch, m, n};
  Tensor y = Tensor::zeros(out_shape);
  {
    auto ad = a.data();
    auto bd = b.data();
    auto yd = y.mutable_data();
    for (int64_t bi = 0; bi < batch; ++bi) {
      const float* ap = ad.data() + bi * m * k;
      const float* bp = bd.data() + (b_shared ? 0 : bi * k * n);
      gemm_nn(yd.data() + bi * m * n, ap, bp, m, k, n, false);
    }
  }
  Tensor ac = a, bc = b;
  detail::record_op("matmul", {a, b}, y,
                    [ac, bc, y, batch, m, k, n, b_shared]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    auto ad = ac.data();
    auto bd = bc.data();
    if (ac.requires_grad()) {
      auto ag = ac.grad();
      for (int64_t bi = 0; bi < batch; ++bi) {
        const float* gp = g.data() + bi * m * n;
        const float* bp = bd.data() + (b_shared ? 0 : bi * k * n);
        // dA = dC * B^T
        gemm_nt(ag.data() + bi * m * k, gp, bp, m, n, k, true);
      }
    }
    if (bc.requires_grad()) {
      auto bg = bc.grad();
      for (int64_t bi = 0; bi < batch; ++bi) {
        const float* gp = g.data() + bi * m * n;
        const float* ap = ad.data() + bi * m * k;
        // dB = A^T * dC (accumulates across batch when B is shared)
        gemm_tn(bg.data() + (b_shared ? 0 : bi * k * n), ap, gp, k, m, n, true);
      }
    }
  });
  return y;
}

// -------------------------------------------------------------- normalization

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), ax);
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (int64_t o = 0; o < sp.outer; ++o) {
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.n * sp.inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t i = 0; i < sp.n; ++i)
        mx = std::max(mx, xd[base + i * sp.inner]);
      double denom = 0.0;
      for (int64_t i = 0; i < sp.n; ++i) {
        const float e = std::exp(xd[base + i * sp.inner] - mx);
        out[static_cast<size_t>(base + i * sp.inner)] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int64_t i = 0; i < sp.n; ++i)
        out[static_cast<size_t>(base + i * sp.inner)] *= inv;
    }
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("softmax", {x}, y, [xc, y, sp]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto yd = y.data();
    auto xg = xc.grad();
    for (int64_t o = 0; o < sp.outer; ++o) {
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = o * sp.n * sp.inner + in;
        double dot = 0.0;
        for (int64_t i = 0; i < sp.n; ++i) {
          const int64_t idx = base + i * sp.inner;
          dot += static_cast<double>(g[idx]) * yd[idx];
        }
        for (int64_t i = 0; i < sp.n; ++i) {
          const int64_t idx = base + i * sp.inner;
          xg[idx] += yd[idx] * (g[idx] - static_cast<float>(dot));
        }
      }
    }
  });
  return y;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 float eps) {
  const int64_t d = x.dim(-1);
  require(gain.rank() == 1 && gain.dim(0) == d && bias.rank() == 1 &&
              bias.dim(0) == d,
          "layernorm: gain/bias must be [" + std::to_string(d) + "], got " +
              shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const int64_t rows = x.numel() / d;
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto mean = std::make_shared<std::vector<float>>(rows);
  auto rstd = std::make_shared<std::vector<float>>(rows);
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = xd.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*mean)[static_cast<size_t>(r)] = static_cast<float>(mu);
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int64_t j = 0; j < d; ++j) {
      const float xh = (row[j] - static_cast<float>(mu)) * rs;
      out[static_cast<size_t>(r * d + j)] = xh * gd[j] + bd[j];
    }
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x, gc = gain, bc = bias;
  detail::record_op("layernorm", {x, gain, bias}, y,
                    [xc, gc, bc, y, mean, rstd, rows, d]() mutable {
    if (!y.has_grad()) return;
    auto g = y.grad_view();
    auto xd2 = xc.data();
    auto gd2 = gc.data();
    for (int64_t r = 0; r < rows; ++r) {
      const float mu = (*mean)[static_cast<size_t>(r)];
      const float rs = (*rstd)[static_cast<size_t>(r)];
      const float* xrow = xd2.data() + r * d;
      const float* grow = g.data() + r * d;
      if (gc.requires_grad() || bc.requires_grad()) {
        auto gg = gc.grad();
        auto bg = bc.grad();
        for (int64_t j = 0; j < d; ++j) {
          const float xh = (xrow[j] - mu) * rs;
          if (gc.requires_grad()) gg[j] += grow[j] * xh;
          if (bc.requires_grad()) bg[j] += grow[j];
        }
      }
      if (xc.requires_grad()) {
        auto xg = xc.grad();
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const float xh = (xrow[j] - mu) * rs;
          const float dxh = grow[j] * gd2[j];
          sum_dxh += dxh;
          sum_dxh_xh += static_cast<double>(dxh) * xh;
        }
        const float m1 = static_cast<float>(sum_dxh / static_cast<double>(d));
        const float m2 = static_cast<float>(sum_dxh_xh / static_cast<double>(d));
        for (int64_t j = 0; j < d; ++j) {
          const float xh = (xrow[j] - mu) * rs;
          const float dxh = grow[j] * gd2[j];
          xg[r * d + j] += rs * (dxh - m1 - xh * m2);
        }
      }
    }
  });
  return y;
}

// ----------------------------------------------------------------- structural

Tensor reshape(const Tensor& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: cannot reshape " + shape_str(x.shape()) + " to " +
              shape_str(new_shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  Tensor y = Tensor::from_data(std::move(new_shape), std::move(out));
  Tensor xc = x;
  detail::record_op("reshape", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (size_t i = 0; i < xg.size(); ++i) xg[i] += g[i];
  });
  return y;
}

namespace {
std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Permutation copy: dst laid out contiguously in the permuted order while
// walking src through permuted strides.
void permute_copy(float* dst, const float* src, const Shape& in_shape,
                  const std::vector<int>& perm, bool accumulate) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(static_cast<size_t>(r));
  auto in_strides = contiguous_strides(in_shape);
  std::vector<int64_t> walk(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(perm[i])];
    walk[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[i])];
  }
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  const int64_t total = shape_numel(in_shape);
  int64_t src_off = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    if (accumulate)
      dst[flat] += src[src_off];
    else
      dst[flat] = src[src_off];
    for (int axis = r - 1; axis >= 0; --axis) {
      idx[static_cast<size_t>(axis)]++;
      src_off += walk[static_cast<size_t>(axis)];
      if (idx[static_cast<size_t>(axis)] < out_shape[static_cast<size_t>(axis)])
        break;
      src_off -= walk[static_cast<size_t>(axis)] * out_shape[static_cast<size_t>(axis)];
      idx[static_cast<size_t>(axis)] = 0;
    }
  }
}
}  // namespace

Tensor transpose(const Tensor& x, std::vector<int> perm) {
  const int r = x.rank();
  require(static_cast<int>(perm.size()) == r,
          "transpose: perm size " + std::to_string(perm.size()) +
              " does not match rank of " + shape_str(x.shape()));
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    require(p >= 0 && p < r && !seen[static_cast<size_t>(p)],
            "transpose: invalid permutation for " + shape_str(x.shape()));
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i)
    out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  Tensor y = Tensor::zeros(out_shape);
  permute_copy(y.mutable_data().data(), x.data().data(), x.shape(), perm, false);
  Tensor xc = x;
  Shape in_shape = x.shape();
  detail::record_op("transpose", {x}, y, [xc, y, perm, in_shape]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    // inverse permutation routes the gradient back
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i)
      inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    Shape y_shape = y.shape();
    permute_copy(xc.grad().data(), y.grad_view().data(), y_shape, inv, true);
  });
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: empty input list");
  const int r = parts[0].rank();
  const int ax = normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    require(p.rank() == r, "concat: rank mismatch " + shape_str(p.shape()) +
                               " vs " + shape_str(parts[0].shape()));
    for (int i = 0; i < r; ++i)
      if (i != ax)
        require(p.dim(i) == parts[0].dim(i),
                "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                    shape_str(parts[0].shape()));
    total_axis += p.dim(ax);
  }
  out_shape[static_cast<size_t>(ax)] = total_axis;
  const AxisSplit sp = split_at(out_shape, ax);
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.mutable_data();
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t pn = p.dim(ax);
    auto pd = p.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::memcpy(yd.data() + (o * sp.n + offset) * sp.inner,
                  pd.data() + o * pn * sp.inner,
                  sizeof(float) * static_cast<size_t>(pn * sp.inner));
    }
    offset += pn;
  }
  std::vector<Tensor> pc = parts;
  bool any_rg = false;
  for (const auto& p : parts) any_rg |= p.requires_grad();
  Tensor first = parts[0];
  // record_op needs an initializer_list; register against the first input and
  // handle the rest inside the closure.
  if (Tape::current() && any_rg) {
    y.set_requires_grad(true);
    Tape::current()->push("concat", [pc, y, sp, ax]() mutable {
      if (!y.has_grad()) return;
      auto g = y.grad_view();
      int64_t off = 0;
      for (auto& p : pc) {
        const int64_t pn = p.dim(ax);
        if (p.requires_grad()) {
          auto pg = p.grad();
          for (int64_t o = 0; o < sp.outer; ++o) {
            const float* src = g.data() + (o * sp.n + off) * sp.inner;
            float* dst = pg.data() + o * pn * sp.inner;
            for (int64_t i = 0; i < pn * sp.inner; ++i) dst[i] += src[i];
          }
        }
        off += pn;
      }
    });
  }
  if (debug_check_finite_enabled()) detail::check_finite_or_throw(y, "concat");
  return y;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  const int ax = normalize_axis(axis, x.rank(), "slice");
  const int64_t n = x.dim(ax);
  require(start >= 0 && len > 0 && start + len <= n,
          "slice: range [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") out of bounds for axis " +
              std::to_string(axis) + " of " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = len;
  const AxisSplit sp = split_at(x.shape(), ax);
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.mutable_data();
  auto xd = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    std::memcpy(yd.data() + o * len * sp.inner,
                xd.data() + (o * sp.n + start) * sp.inner,
                sizeof(float) * static_cast<size_t>(len * sp.inner));
  Tensor xc = x;
  detail::record_op("slice", {x}, y, [xc, y, sp, start, len]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (int64_t o = 0; o < sp.outer; ++o) {
      const float* src = g.data() + o * len * sp.inner;
      float* dst = xg.data() + (o * sp.n + start) * sp.inner;
      for (int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
  return y;
}

Tensor tile_axis(const Tensor& x, int axis, int64_t times) {
  const int ax = normalize_axis(axis, x.rank(), "tile_axis");
  require(x.dim(ax) == 1, "tile_axis: axis " + std::to_string(axis) +
                              " of " + shape_str(x.shape()) + " must be 1");
  require(times >= 1, "tile_axis: times must be >= 1");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = times;
  const AxisSplit sp = split_at(x.shape(), ax);  // n == 1
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.mutable_data();
  auto xd = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t t = 0; t < times; ++t)
      std::memcpy(yd.data() + (o * times + t) * sp.inner,
                  xd.data() + o * sp.inner,
                  sizeof(float) * static_cast<size_t>(sp.inner));
  Tensor xc = x;
  detail::record_op("tile_axis", {x}, y, [xc, y, sp, times]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t t = 0; t < times; ++t) {
        const float* src = g.data() + (o * times + t) * sp.inner;
        float* dst = xg.data() + o * sp.inner;
        for (int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  });
  return y;
}

Tensor embedding(const Tensor& table, const std::vector<int64_t>& indices) {
  require(table.rank() == 2, "embedding: table must be rank 2, got " +
                                 shape_str(table.shape()));
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int64_t idx : indices)
    require(idx >= 0 && idx < v,
            "embedding: index " + std::to_string(idx) + " out of range [0," +
                std::to_string(v) + ")");
  const int64_t n = static_cast<int64_t>(indices.size());
  Tensor y = Tensor::zeros({n, d});
  auto yd = y.mutable_data();
  auto td = table.data();
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(yd.data() + i * d, td.data() + indices[static_cast<size_t>(i)] * d,
                sizeof(float) * static_cast<size_t>(d));
  Tensor tc = table;
  detail::record_op("embedding", {table}, y, [tc, y, indices, d]() mutable {
    if (!y.has_grad() || !tc.requires_grad()) return;
    auto g = y.grad_view();
    auto tg = tc.grad();
    for (size_t i = 0; i < indices.size(); ++i) {
      float* dst = tg.data() + indices[i] * d;
      const float* src = g.data() + static_cast<int64_t>(i) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return y;
}

// ----------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor y = Tensor::scalar(static_cast<float>(acc));
  Tensor xc = x;
  detail::record_op("sum_all", {x}, y, [xc, y]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    const float g = y.grad_view()[0];
    auto xg = xc.grad();
    for (auto& v : xg) v += g;
  });
  return y;
}

Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor y = Tensor::scalar(static_cast<float>(acc * inv));
  Tensor xc = x;
  detail::record_op("mean_all", {x}, y, [xc, y, inv]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    const float g = y.grad_view()[0] * static_cast<float>(inv);
    auto xg = xc.grad();
    for (auto& v : xg) v += g;
  });
  return y;
}

namespace {
Tensor reduce_axis(const Tensor& x, int axis, bool keepdim, bool mean) {
  const int ax = normalize_axis(axis, x.rank(), "sum_axis");
  const AxisSplit sp = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[static_cast<size_t>(ax)] = 1;
  else
    out_shape.erase(out_shape.begin() + ax);
  if (out_shape.empty()) out_shape = {1};
  const double scale = mean ? 1.0 / static_cast<double>(sp.n) : 1.0;
  Tensor y = Tensor::zeros(out_shape);
  auto yd = y.mutable_data();
  auto xd = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      double acc = 0.0;
      for (int64_t i = 0; i < sp.n; ++i)
        acc += xd[o * sp.n * sp.inner + i * sp.inner + in];
      yd[o * sp.inner + in] = static_cast<float>(acc * scale);
    }
  Tensor xc = x;
  detail::record_op(mean ? "mean_axis" : "sum_axis", {x}, y,
                    [xc, y, sp, scale]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t in = 0; in < sp.inner; ++in) {
        const float gv = g[o * sp.inner + in] * static_cast<float>(scale);
        for (int64_t i = 0; i < sp.n; ++i)
          xg[o * sp.n * sp.inner + i * sp.inner + in] += gv;
      }
  });
  return y;
}
}  // namespace

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, false);
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  return reduce_axis(x, axis, keepdim, true);
}

// ----------------------------------------------------------------------- rope

Tensor rope2d(const Tensor& x, const std::vector<std::pair<int, int>>& positions,
              float base) {
  require(x.rank() == 3, "rope2d: expected [R,T,dh], got " + shape_str(x.shape()));
  const int64_t rows = x.dim(0), t = x.dim(1), dh = x.dim(2);
  require(dh % 4 == 0, "rope2d: head dim must be divisible by 4, got " +
                           std::to_string(dh));
  require(static_cast<int64_t>(positions.size()) == t,
          "rope2d: positions size " + std::to_string(positions.size()) +
              " != sequence length " + std::to_string(t));
  const int64_t half = dh / 2;        // dims per spatial axis
  const int64_t pairs = half / 2;     // rotation pairs per axis
  // cos/sin lookup per token: [T, dh/2] — shared with the backward pass.
  auto cs = std::make_shared<std::vector<float>>(static_cast<size_t>(t * half));
  auto sn = std::make_shared<std::vector<float>>(static_cast<size_t>(t * half));
  for (int64_t tok = 0; tok < t; ++tok) {
    for (int64_t axis = 0; axis < 2; ++axis) {
      const double pos = axis == 0 ? positions[static_cast<size_t>(tok)].first
                                   : positions[static_cast<size_t>(tok)].second;
      for (int64_t j = 0; j < pairs; ++j) {
        const double freq =
            std::pow(static_cast<double>(base),
                     -static_cast<double>(j) / static_cast<double>(pairs));
        const double ang = pos * freq;
        const int64_t slot = tok * half + axis * pairs + j;
        (*cs)[static_cast<size_t>(slot)] = static_cast<float>(std::cos(ang));
        (*sn)[static_cast<size_t>(slot)] = static_cast<float>(std::sin(ang));
      }
    }
  }
  std::vector<float> out(static_cast<size_t>(x.numel()));
  auto xd = x.data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t tok = 0; tok < t; ++tok) {
      const float* src = xd.data() + (r * t + tok) * dh;
      float* dst = out.data() + (r * t + tok) * dh;
      for (int64_t p = 0; p < half; ++p) {
        const float c = (*cs)[static_cast<size_t>(tok * half + p)];
        const float s = (*sn)[static_cast<size_t>(tok * half + p)];
        const float a = src[2 * p], b = src[2 * p + 1];
        dst[2 * p] = a * c - b * s;
        dst[2 * p + 1] = a * s + b * c;
      }
    }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  Tensor xc = x;
  detail::record_op("rope2d", {x}, y, [xc, y, cs, sn, rows, t, dh, half]() mutable {
    if (!y.has_grad() || !xc.requires_grad()) return;
    auto g = y.grad_view();
    auto xg = xc.grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t tok = 0; tok < t; ++tok) {
        const float* src = g.data() + (r * t + tok) * dh;
        float* dst = xg.data() + (r * t + tok) * dh;
        for (int64_t p = 0; p < half; ++p) {
          // inverse rotation
          const float c = (*cs)[static_cast<size_t>(tok * half + p)];
          const float s = (*sn)[static_cast<size_t>(tok * half + p)];
          const float a = src[2 * p], b = src[2 * p + 1];
          dst[2 * p] += a * c + b * s;
          dst[2 * p + 1] += -a * s + b * c;
        }
      }
  });
  return y;
}

// --------------------------------------------------------------- compositions

Tensor l2normalize_rows(const Tensor& x, float eps) {
  Tensor sq = mul(x, x);
  Tensor n2 = sum_axis(sq, -1, /*keepdim=*/true);
  Tensor inv = recip(sqrt_t(sadd(n2, eps)));
  return scale_rows(x, inv);
}

Tensor norm_rows(const Tensor& x, float eps) {
  Tensor sq = mul(x, x);
  Tensor n2 = sum_axis(sq, -1, /*keepdim=*/true);
  return sqrt_t(sadd(n2, eps));
}

Tensor quat_mul(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 1 && a.dim(-1) == 4 && b.shape() == a.shape(),
          "quat_mul: expected matching [...,4] quaternions, got " +
              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  auto comp = [](const Tensor& q, int64_t i) { return slice(q, -1, i, 1); };
  Tensor aw = comp(a, 0), ax = comp(a, 1), ay = comp(a, 2), az = comp(a, 3);
  Tensor bw = comp(b, 0), bx = comp(b, 1), by = comp(b, 2), bz = comp(b, 3);
  Tensor w = sub(sub(sub(mul(aw, bw), mul(ax, bx)), mul(ay, by)), mul(az, bz));
  Tensor x = sub(add(add(mul(aw, bx), mul(ax, bw)), mul(ay, bz)), mul(az, by));
  Tensor y = add(add(sub(mul(aw, by), mul(ax, bz)), mul(ay, bw)), mul(az, bx));
  Tensor z = add(add(sub(mul(aw, bz), mul(ay, bx)), mul(ax, by)), mul(az, bw));
  return concat({w, x, y, z}, -1);
}

Tensor quat_conj(const Tensor& q) {
  require(q.dim(-1) == 4, "quat_conj: expected [...,4], got " + shape_str(q.shape()));
  return mul_rowvec(q, Tensor::from_data({4}, {1.0f, -1.0f, -1.0f, -1.0f}));
}

Tensor quat_rotate(const Tensor& q, const Tensor& v) {
  require(q.dim(-1) == 4 && v.dim(-1) == 3,
          "quat_rotate: expected q [...,4], v [...,3], got " +
              shape_str(q.shape()) + " and " + shape_str(v.shape()));
  Shape zero_shape = v.shape();
  zero_shape.back() = 1;
  Tensor v4 = concat({Tensor::zeros(zero_shape), v}, -1);
  Tensor r = quat_mul(quat_mul(q, v4), quat_conj(q));
  return slice(r, -1, 1, 3);
}

Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* attn_out) {
  require(q.rank() == 3 && k.rank() == 3 && v.rank() == 3,
          "sdpa: expected rank-3 q/k/v");
  const float scale = 1.0f / std::sqrt(static_cast<float>(q.dim(-1)));
  Tensor kt = transpose(k, {0, 2, 1});
  Tensor scores = smul(matmul(q, kt), scale);
  Tensor attn = softmax(scores, -1);
  if (attn_out) *attn_out = attn;
  return matmul(attn, v);
}

}  // namespace gemdepth

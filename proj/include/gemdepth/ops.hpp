#pragma once

#include <utility>
#include <vector>

#include "gemdepth/tensor.hpp"

namespace gemdepth {

// Differentiable tensor operations. Every op validates shapes up front
// (errors carry both shapes), allocates a fresh output, and records its
// backward closure on the active tape when an input is tracked.
//
// Broadcasting is never implicit: the explicit *_bias / scale_* variants
// below are the only sanctioned broadcast patterns.

// -- elementwise, same shape --------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// -- compile-time scalar ------------------------------------------------
Tensor smul(const Tensor& x, float c);
Tensor sadd(const Tensor& x, float c);

// -- one-element tensor broadcast over everything -----------------------
Tensor scale_by(const Tensor& x, const Tensor& s);  // s: numel()==1
Tensor shift_by(const Tensor& x, const Tensor& s);

// -- row/column broadcasts ----------------------------------------------
/// b has shape [D] == x's last axis; added to every row.
Tensor add_bias(const Tensor& x, const Tensor& b);
/// v has shape [D]; multiplies every row elementwise.
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
/// s has x's leading dims with last dim 1; scales each row by its scalar.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// x:[B,L,D], v:[B,D]; v[b] added to all L tokens of batch row b.
Tensor add_token_bias(const Tensor& x, const Tensor& v);
/// x:[B,L,D], e:[L,D]; e[l] added to token l of every batch row.
Tensor add_seq_bias(const Tensor& x, const Tensor& e);

// -- unary ----------------------------------------------------------------
Tensor neg(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);
Tensor abs_t(const Tensor& x);
Tensor recip(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor clamp_min(const Tensor& x, float lo);
/// Elementwise Huber: 0.5*x^2 inside |x|<=delta, linear outside.
Tensor huber(const Tensor& x, float delta);
/// Non-differentiable: elementwise sign as a fresh constant tensor.
Tensor sign_detached(const Tensor& x);
/// Fresh constant copy cut off from the tape.
Tensor detach(const Tensor& x);

// -- matmul ---------------------------------------------------------------
/// [m,k]x[k,n]; [B,m,k]x[B,k,n]; [B,m,k]x[k,n] (shared right operand).
Tensor matmul(const Tensor& a, const Tensor& b);

// -- normalization --------------------------------------------------------
Tensor softmax(const Tensor& x, int axis);
/// Normalizes the last axis; gain/bias shaped [D].
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 float eps = 1e-5f);

// -- structural -----------------------------------------------------------
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, std::vector<int> perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);
/// x.dim(axis) must be 1; repeats it `times` times.
Tensor tile_axis(const Tensor& x, int axis, int64_t times);

// -- lookup ---------------------------------------------------------------
/// table:[V,D], out:[indices.size(),D]; backward scatter-adds into table.
Tensor embedding(const Tensor& table, const std::vector<int64_t>& indices);

// -- reductions (f64 accumulation) -----------------------------------------
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

// -- rotary position encoding ----------------------------------------------
/// x:[R,T,dh] with dh%4==0. Axial 2-D rotary encoding: the first dh/2 dims
/// rotate with the row index, the rest with the column index. positions[t]
/// is the (row,col) grid cell of token t. Norm-preserving.
Tensor rope2d(const Tensor& x, const std::vector<std::pair<int, int>>& positions,
              float base = 100.0f);

// -- compositions (no new primitives) ---------------------------------------
/// L2-normalizes the last axis: x / sqrt(sum(x^2) + eps).
Tensor l2normalize_rows(const Tensor& x, float eps = 1e-12f);
/// Euclidean norm of each row: [..., D] -> [..., 1].
Tensor norm_rows(const Tensor& x, float eps = 0.0f);
/// Hamilton product of quaternion rows [(w,x,y,z)]: [F,4] x [F,4] -> [F,4].
Tensor quat_mul(const Tensor& a, const Tensor& b);
/// Conjugate of quaternion rows.
Tensor quat_conj(const Tensor& q);
/// Rotates 3-vector rows v:[F,3] by unit quaternion rows q:[F,4].
Tensor quat_rotate(const Tensor& q, const Tensor& v);
/// Scaled dot-product attention over [B,T,dh] q/k/v (single head).
Tensor sdpa(const Tensor& q, const Tensor& k, const Tensor& v,
            Tensor* attn_out = nullptr);

}  // namespace gemdepth

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the denoiser kernels.

Mirrors ``kernels_py`` operation for operation: same parameter layout,
same float64 math, same function signatures. The hot loops run over raw
C pointers so the compiler can vectorize them. Summation order inside
the matmul loops differs from numpy's BLAS, so results agree with the
numpy backend to roundoff rather than bit-for-bit; the test suite pins
the two backends together at tight tolerances.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh
from libc.string cimport memcpy, memset

cnp.import_array()

# Restrict-qualified pointer aliases: every helper below is called with
# non-overlapping buffers, and telling the C compiler so is what lets it
# vectorize the inner loops.
cdef extern from *:
    """
    typedef double * __restrict__ mdm_dptr;
    typedef const double * __restrict__ mdm_cdptr;
    """
    ctypedef double* dptr "mdm_dptr"
    ctypedef const double* cdptr "mdm_cdptr"

cdef double LOG_ZERO = -1.0e4
cdef double LN_EPS = 1e-5
cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


def param_count(V, L_max, d, n_layers, d_ff):
    """Total number of parameters for the given shapes."""
    per_layer = 4 * d * d + 4 * d + 2 * d + 2 * d + d * d_ff + d_ff + d_ff * d + d
    return V * d + L_max * d + n_layers * per_layer + 2 * d + d * V + V


# ---------------------------------------------------------------------------
# Flat-layout offsets (must walk the identical order as kernels_py._views)
# ---------------------------------------------------------------------------

cdef struct LayerOff:
    Py_ssize_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo
    Py_ssize_t ln2_g, ln2_b, w1, b1, w2, b2

cdef struct Off:
    Py_ssize_t tok_emb, pos_emb, layers, stride, lnf_g, lnf_b, w_out, b_out, total

cdef Off _offsets(Py_ssize_t V, Py_ssize_t L_max, Py_ssize_t d,
                  Py_ssize_t n_layers, Py_ssize_t d_ff) noexcept:
    cdef Off o
    o.tok_emb = 0
    o.pos_emb = V * d
    o.layers = o.pos_emb + L_max * d
    o.stride = 4 * d * d + 9 * d + 2 * d * d_ff + d_ff
    o.lnf_g = o.layers + n_layers * o.stride
    o.lnf_b = o.lnf_g + d
    o.w_out = o.lnf_b + d
    o.b_out = o.w_out + d * V
    o.total = o.b_out + V
    return o

cdef LayerOff _layer_offsets(Py_ssize_t base, Py_ssize_t d, Py_ssize_t d_ff) noexcept:
    cdef LayerOff lo
    lo.ln1_g = base
    lo.ln1_b = lo.ln1_g + d
    lo.wq = lo.ln1_b + d
    lo.bq = lo.wq + d * d
    lo.wk = lo.bq + d
    lo.bk = lo.wk + d * d
    lo.wv = lo.bk + d
    lo.bv = lo.wv + d * d
    lo.wo = lo.bv + d
    lo.bo = lo.wo + d * d
    lo.ln2_g = lo.bo + d
    lo.ln2_b = lo.ln2_g + d
    lo.w1 = lo.ln2_b + d
    lo.b1 = lo.w1 + d * d_ff
    lo.w2 = lo.b1 + d_ff
    lo.b2 = lo.w2 + d_ff * d
    return lo


# ---------------------------------------------------------------------------
# Dense primitives (raw pointers, row-major)
# ---------------------------------------------------------------------------

cdef void _linear(cdptr x, cdptr w, cdptr b,
                  dptr out, Py_ssize_t L, Py_ssize_t din,
                  Py_ssize_t dout) noexcept:
    # out = x @ W + b with x (L, din), W (din, dout)
    cdef Py_ssize_t i, j, k
    cdef cdptr xr
    cdef cdptr wr
    cdef dptr outr
    cdef double xv
    for i in range(L):
        xr = x + i * din
        outr = out + i * dout
        memcpy(outr, b, dout * sizeof(double))
        for k in range(din):
            xv = xr[k]
            wr = w + k * dout
            for j in range(dout):
                outr[j] += xv * wr[j]

cdef void _linear_bwd(cdptr x, cdptr w, dptr gw, dptr gb,
                      cdptr dout, dptr dx, bint acc_dx,
                      Py_ssize_t L, Py_ssize_t din, Py_ssize_t dout_n) noexcept:
    # gradients of out = x @ W + b: gw += x^T dout, gb += colsum dout,
    # dx (+)= dout @ W^T
    cdef Py_ssize_t i, j, k
    cdef cdptr xr
    cdef cdptr dor
    cdef cdptr wr
    cdef dptr gwr
    cdef dptr dxr
    cdef double xv, acc
    for i in range(L):
        xr = x + i * din
        dor = dout + i * dout_n
        dxr = dx + i * din
        for j in range(dout_n):
            gb[j] += dor[j]
        for k in range(din):
            xv = xr[k]
            wr = w + k * dout_n
            gwr = gw + k * dout_n
            acc = 0.0
            for j in range(dout_n):
                gwr[j] += xv * dor[j]
                acc += dor[j] * wr[j]
            if acc_dx:
                dxr[k] += acc
            else:
                dxr[k] = acc

cdef void _layernorm(cdptr x, cdptr g, cdptr b,
                     dptr out, dptr xhat, dptr inv,
                     Py_ssize_t L, Py_ssize_t d) noexcept:
    cdef Py_ssize_t i, c
    cdef cdptr xr
    cdef dptr outr
    cdef dptr xhr
    cdef double mu, var, dv, iv
    for i in range(L):
        xr = x + i * d
        outr = out + i * d
        xhr = xhat + i * d
        mu = 0.0
        for c in range(d):
            mu += xr[c]
        mu /= d
        var = 0.0
        for c in range(d):
            dv = xr[c] - mu
            var += dv * dv
        var /= d
        iv = 1.0 / sqrt(var + LN_EPS)
        inv[i] = iv
        for c in range(d):
            xhr[c] = (xr[c] - mu) * iv
            outr[c] = xhr[c] * g[c] + b[c]

cdef void _layernorm_bwd(cdptr dy, cdptr g, dptr gg,
                         dptr gb, cdptr xhat, cdptr inv,
                         dptr dx, bint acc_dx,
                         Py_ssize_t L, Py_ssize_t d) noexcept:
    cdef Py_ssize_t i, c
    cdef cdptr dyr
    cdef const double* xhr
    cdef dptr dxr
    cdef double m1, m2, dxh, v
    for i in range(L):
        dyr = dy + i * d
        xhr = xhat + i * d
        dxr = dx + i * d
        m1 = 0.0
        m2 = 0.0
        for c in range(d):
            dxh = dyr[c] * g[c]
            m1 += dxh
            m2 += dxh * xhr[c]
            gg[c] += dyr[c] * xhr[c]
            gb[c] += dyr[c]
        m1 /= d
        m2 /= d
        for c in range(d):
            dxh = dyr[c] * g[c]
            v = inv[i] * (dxh - m1 - xhr[c] * m2)
            if acc_dx:
                dxr[c] += v
            else:
                dxr[c] = v

cdef void _attention_fwd(cdptr q, cdptr k, cdptr v,
                         dptr att, dptr ctx,
                         Py_ssize_t L, Py_ssize_t H, Py_ssize_t dh) noexcept:
    # q, k, v, ctx are (L, H*dh); att is (H, L, L). Head blocks are
    # contiguous column ranges, so all inner loops have unit stride.
    cdef Py_ssize_t hh, hc, i, j, c, d = H * dh
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef cdptr qr
    cdef cdptr kr
    cdef cdptr vr
    cdef dptr ar
    cdef dptr cr
    cdef double s, mx, tot
    for hh in range(H):
        hc = hh * dh
        for i in range(L):
            qr = q + i * d + hc
            ar = att + (hh * L + i) * L
            mx = -1e300
            for j in range(L):
                kr = k + j * d + hc
                s = 0.0
                for c in range(dh):
                    s += qr[c] * kr[c]
                s *= scale
                ar[j] = s
                if s > mx:
                    mx = s
            tot = 0.0
            for j in range(L):
                s = exp(ar[j] - mx)
                ar[j] = s
                tot += s
            for j in range(L):
                ar[j] /= tot
            cr = ctx + i * d + hc
            memset(cr, 0, dh * sizeof(double))
            for j in range(L):
                vr = v + j * d + hc
                s = ar[j]
                for c in range(dh):
                    cr[c] += s * vr[c]

cdef void _attention_bwd(cdptr q, cdptr k, cdptr v,
                         cdptr att, cdptr dctx,
                         dptr dq, dptr dk, dptr dv, dptr dsc,
                         Py_ssize_t L, Py_ssize_t H, Py_ssize_t dh) noexcept:
    # dsc is an (L, L) scratch for one head's softmax-gradient scores.
    cdef Py_ssize_t hh, hc, i, j, c, d = H * dh
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef cdptr ar
    cdef cdptr dcr
    cdef cdptr vr
    cdef cdptr qr
    cdef cdptr kr
    cdef dptr dr
    cdef double s, row_dot
    for hh in range(H):
        hc = hh * dh
        # dv_h = att_h^T @ dctx_h (accumulated j-major for unit stride)
        for j in range(L):
            memset(dv + j * d + hc, 0, dh * sizeof(double))
        for i in range(L):
            ar = att + (hh * L + i) * L
            dcr = dctx + i * d + hc
            for j in range(L):
                s = ar[j]
                dr = dv + j * d + hc
                for c in range(dh):
                    dr[c] += s * dcr[c]
        # dscores = att * (datt - rowsum(datt * att)), datt = dctx_h @ v_h^T
        for i in range(L):
            ar = att + (hh * L + i) * L
            dcr = dctx + i * d + hc
            dr = dsc + i * L
            row_dot = 0.0
            for j in range(L):
                vr = v + j * d + hc
                s = 0.0
                for c in range(dh):
                    s += dcr[c] * vr[c]
                dr[j] = s
                row_dot += s * ar[j]
            for j in range(L):
                dr[j] = ar[j] * (dr[j] - row_dot)
        # dq_h = dscores @ k_h * scale ; dk_h = dscores^T @ q_h * scale
        for i in range(L):
            dr = dq + i * d + hc
            memset(dr, 0, dh * sizeof(double))
            for j in range(L):
                s = dsc[i * L + j] * scale
                kr = k + j * d + hc
                for c in range(dh):
                    dr[c] += s * kr[c]
        for j in range(L):
            memset(dk + j * d + hc, 0, dh * sizeof(double))
        for i in range(L):
            qr = q + i * d + hc
            for j in range(L):
                s = dsc[i * L + j] * scale
                dr = dk + j * d + hc
                for c in range(dh):
                    dr[c] += s * qr[c]

cdef void _gelu(cdptr z, dptr f, dptr th, Py_ssize_t n) noexcept:
    cdef Py_ssize_t i
    cdef double zz, t
    for i in range(n):
        zz = z[i]
        t = tanh(GELU_C * (zz + GELU_A * zz * zz * zz))
        th[i] = t
        f[i] = 0.5 * zz * (1.0 + t)

cdef void _gelu_bwd(cdptr df, cdptr z, cdptr th,
                    dptr dz, Py_ssize_t n) noexcept:
    cdef Py_ssize_t i
    cdef double zz, t, du
    for i in range(n):
        zz = z[i]
        t = th[i]
        du = GELU_C * (1.0 + 3.0 * GELU_A * zz * zz)
        dz[i] = df[i] * (0.5 * (1.0 + t) + 0.5 * zz * (1.0 - t * t) * du)

cdef void _add_into(dptr dst, cdptr src, Py_ssize_t n) noexcept:
    cdef Py_ssize_t i
    for i in range(n):
        dst[i] += src[i]

cdef void _head_fwd(cdptr hf, cdptr p, Off o, dptr logprobs,
                    Py_ssize_t cond_len, Py_ssize_t Lt, Py_ssize_t d,
                    Py_ssize_t V, Py_ssize_t mask_id) noexcept:
    cdef Py_ssize_t r, c, vv
    cdef cdptr hr
    cdef cdptr wr
    cdef dptr lr
    cdef double xv, mx, tot
    for r in range(Lt):
        hr = hf + (cond_len + r) * d
        lr = logprobs + r * V
        memcpy(lr, p + o.b_out, V * sizeof(double))
        for c in range(d):
            xv = hr[c]
            wr = p + o.w_out + c * V
            for vv in range(V):
                lr[vv] += xv * wr[vv]
        lr[mask_id] = LOG_ZERO
        mx = -1e300
        for vv in range(V):
            if lr[vv] > mx:
                mx = lr[vv]
        tot = 0.0
        for vv in range(V):
            tot += exp(lr[vv] - mx)
        tot = mx + log(tot)
        for vv in range(V):
            lr[vv] -= tot


cdef void _embed_fwd(cdptr p, Off o, const long long* tok, dptr h,
                     Py_ssize_t L, Py_ssize_t d) noexcept:
    cdef Py_ssize_t i, c
    cdef cdptr te
    cdef cdptr pe
    cdef dptr hr
    for i in range(L):
        te = p + o.tok_emb + tok[i] * d
        pe = p + o.pos_emb + i * d
        hr = h + i * d
        for c in range(d):
            hr[c] = te[c] + pe[c]


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------

def forward_logprobs(params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff,
                     mask_id):
    """Normalized log-probability grid over the target region.

    Same contract as ``kernels_py.forward_logprobs``.
    """
    cdef double[::1] p_mv = np.ascontiguousarray(params, dtype=np.float64)
    cdef long long[::1] tok_mv = np.ascontiguousarray(tokens, dtype=np.int64)
    cdef Py_ssize_t L = tok_mv.shape[0], C = cond_len, Lt = L - C
    cdef Py_ssize_t V_ = V, Lm = L_max, d_ = d, H_ = H, nl = n_layers, f_ = d_ff
    cdef Py_ssize_t mid = mask_id, dh_n = d_ // H_
    cdef Off o = _offsets(V_, Lm, d_, nl, f_)
    if p_mv.shape[0] != o.total:
        raise ValueError(
            f"parameter vector has {p_mv.shape[0]} entries, expected {o.total}"
        )

    work_arr = np.empty(5 * L * d_ + H_ * L * L + 2 * L * f_ + L)
    out_arr = np.empty((Lt, V_))
    cdef double[::1] work = work_arr
    cdef double[:, ::1] out_mv = out_arr
    cdef const double* p = &p_mv[0]
    cdef const long long* tok = &tok_mv[0]

    cdef double* h = &work[0]
    cdef double* a = h + L * d_
    cdef double* q = a + L * d_
    cdef double* k = q + L * d_
    cdef double* v = k + L * d_
    cdef double* att = v + L * d_
    cdef double* z = att + H_ * L * L
    cdef double* ff = z + L * f_
    cdef double* inv = ff + L * f_
    # a doubles as layernorm output, ctx, and xhat scratch where safe.
    ctx_arr = np.empty(L * d_)
    xh_arr = np.empty(L * d_)
    tmp_arr = np.empty((L, max(d_, f_)))
    cdef double[::1] ctx_mv = ctx_arr, xh_mv = xh_arr
    cdef double[:, ::1] tmp_mv = tmp_arr
    cdef double* ctx = &ctx_mv[0]
    cdef double* xh = &xh_mv[0]
    cdef double* tmp = &tmp_mv[0, 0]

    cdef LayerOff lo
    cdef Py_ssize_t li

    _embed_fwd(p, o, tok, h, L, d_)
    for li in range(nl):
        lo = _layer_offsets(o.layers + li * o.stride, d_, f_)
        _layernorm(h, p + lo.ln1_g, p + lo.ln1_b, a, xh, inv, L, d_)
        _linear(a, p + lo.wq, p + lo.bq, q, L, d_, d_)
        _linear(a, p + lo.wk, p + lo.bk, k, L, d_, d_)
        _linear(a, p + lo.wv, p + lo.bv, v, L, d_, d_)
        _attention_fwd(q, k, v, att, ctx, L, H_, dh_n)
        _linear(ctx, p + lo.wo, p + lo.bo, tmp, L, d_, d_)
        _add_into(h, tmp, L * d_)
        _layernorm(h, p + lo.ln2_g, p + lo.ln2_b, a, xh, inv, L, d_)
        _linear(a, p + lo.w1, p + lo.b1, z, L, d_, f_)
        _gelu(z, ff, tmp, L * f_)
        _linear(ff, p + lo.w2, p + lo.b2, tmp, L, f_, d_)
        _add_into(h, tmp, L * d_)

    _layernorm(h, p + o.lnf_g, p + o.lnf_b, a, xh, inv, L, d_)
    _head_fwd(a, p, o, &out_mv[0, 0], C, Lt, d_, V_, mid)
    return out_arr


def masked_loss_grad(params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff,
                     mask_id, targets, masked, weight):
    """Weighted masked cross-entropy and its flat gradient.

    Same contract as ``kernels_py.masked_loss_grad``.
    """
    cdef double[::1] p_mv = np.ascontiguousarray(params, dtype=np.float64)
    cdef long long[::1] tok_mv = np.ascontiguousarray(tokens, dtype=np.int64)
    cdef long long[::1] tgt_mv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef cnp.uint8_t[::1] msk_mv = np.ascontiguousarray(masked, dtype=np.uint8)
    cdef double wgt = weight
    cdef Py_ssize_t L = tok_mv.shape[0], C = cond_len, Lt = L - C
    cdef Py_ssize_t V_ = V, Lm = L_max, d_ = d, H_ = H, nl = n_layers, f_ = d_ff
    cdef Py_ssize_t mid = mask_id, dh_n = d_ // H_
    cdef Off o = _offsets(V_, Lm, d_, nl, f_)
    if p_mv.shape[0] != o.total:
        raise ValueError(
            f"parameter vector has {p_mv.shape[0]} entries, expected {o.total}"
        )
    cdef const double* p = &p_mv[0]
    cdef const long long* tok = &tok_mv[0]
    cdef const long long* tgt = &tgt_mv[0]
    cdef const cnp.uint8_t* msk = &msk_mv[0]

    # Forward caches: one block per layer, nine (L, d) fields plus the
    # attention tensor, two inv vectors, and three (L, d_ff) fields.
    cdef Py_ssize_t blk = 9 * L * d_ + H_ * L * L + 3 * L * f_ + 2 * L
    cache_arr = np.empty(nl * blk + 3 * L * d_ + L + Lt * V_)
    cdef double[::1] cache = cache_arr
    cdef double* base_ptr = &cache[0]
    # Per-layer block field offsets.
    cdef Py_ssize_t off_h0 = 0
    cdef Py_ssize_t off_a1 = off_h0 + L * d_
    cdef Py_ssize_t off_xh1 = off_a1 + L * d_
    cdef Py_ssize_t off_inv1 = off_xh1 + L * d_
    cdef Py_ssize_t off_q = off_inv1 + L
    cdef Py_ssize_t off_k = off_q + L * d_
    cdef Py_ssize_t off_v = off_k + L * d_
    cdef Py_ssize_t off_att = off_v + L * d_
    cdef Py_ssize_t off_ctx = off_att + H_ * L * L
    cdef Py_ssize_t off_a2 = off_ctx + L * d_
    cdef Py_ssize_t off_xh2 = off_a2 + L * d_
    cdef Py_ssize_t off_inv2 = off_xh2 + L * d_
    cdef Py_ssize_t off_z = off_inv2 + L
    cdef Py_ssize_t off_th = off_z + L * f_
    cdef Py_ssize_t off_f = off_th + L * f_
    # Tail fields after the layer blocks.
    cdef double* h = base_ptr + nl * blk          # running hidden state (L, d)
    cdef double* hf = h + L * d_                  # final LN output
    cdef double* xhf = hf + L * d_                # final LN xhat
    cdef double* invf = xhf + L * d_              # final LN inv (L)
    cdef double* logprobs = invf + L

    tmp_arr = np.empty((L, max(d_, f_)))
    cdef double[:, ::1] tmp_mv = tmp_arr
    cdef double* tmp = &tmp_mv[0, 0]

    cdef LayerOff lo
    cdef Py_ssize_t li, i, c, r, vv
    cdef double* cb

    _embed_fwd(p, o, tok, h, L, d_)
    for li in range(nl):
        lo = _layer_offsets(o.layers + li * o.stride, d_, f_)
        cb = base_ptr + li * blk
        memcpy(cb + off_h0, h, L * d_ * sizeof(double))
        _layernorm(cb + off_h0, p + lo.ln1_g, p + lo.ln1_b, cb + off_a1,
                   cb + off_xh1, cb + off_inv1, L, d_)
        _linear(cb + off_a1, p + lo.wq, p + lo.bq, cb + off_q, L, d_, d_)
        _linear(cb + off_a1, p + lo.wk, p + lo.bk, cb + off_k, L, d_, d_)
        _linear(cb + off_a1, p + lo.wv, p + lo.bv, cb + off_v, L, d_, d_)
        _attention_fwd(cb + off_q, cb + off_k, cb + off_v, cb + off_att,
                       cb + off_ctx, L, H_, dh_n)
        _linear(cb + off_ctx, p + lo.wo, p + lo.bo, tmp, L, d_, d_)
        # h becomes h1 = h0 + attn_out; cache keeps h1 implicitly via h0+tmp.
        _add_into(h, tmp, L * d_)
        _layernorm(h, p + lo.ln2_g, p + lo.ln2_b, cb + off_a2, cb + off_xh2,
                   cb + off_inv2, L, d_)
        _linear(cb + off_a2, p + lo.w1, p + lo.b1, cb + off_z, L, d_, f_)
        _gelu(cb + off_z, cb + off_f, cb + off_th, L * f_)
        _linear(cb + off_f, p + lo.w2, p + lo.b2, tmp, L, f_, d_)
        _add_into(h, tmp, L * d_)

    _layernorm(h, p + o.lnf_g, p + o.lnf_b, hf, xhf, invf, L, d_)
    _head_fwd(hf, p, o, logprobs, C, Lt, d_, V_, mid)

    cdef double loss = 0.0
    for r in range(Lt):
        if msk[r]:
            loss -= logprobs[r * V_ + tgt[r]]
    loss *= wgt

    # Backward.
    grad_arr = np.zeros(o.total)
    cdef double[::1] g_mv = grad_arr
    cdef double* g = &g_mv[0]

    work_arr = np.zeros(4 * L * d_ + 2 * L * f_ + L * L + Lt * V_)
    cdef double[::1] work = work_arr
    cdef double* dh_ = &work[0]
    cdef double* dtmp = dh_ + L * d_
    cdef double* dq = dtmp + L * d_          # reused for dctx as well
    cdef double* da = dq + L * d_
    cdef double* dff = da + L * d_
    cdef double* dz = dff + L * f_
    cdef double* dsc = dz + L * f_
    cdef double* dlogits = dsc + L * L
    # dk and dv ride in dff/dz space? No: they need (L, d) each; allocate.
    dkv_arr = np.empty(2 * L * d_)
    cdef double[::1] dkv = dkv_arr
    cdef double* dk = &dkv[0]
    cdef double* dv = dk + L * d_

    cdef dptr lr
    cdef double* dlr
    cdef cdptr wr
    cdef double xv, acc

    # d loss / d logits = weight * (p - onehot) on masked rows; p is exactly
    # zero on the mask column, so the overwritten logit gets no gradient.
    for r in range(Lt):
        dlr = dlogits + r * V_
        if msk[r]:
            lr = logprobs + r * V_
            for vv in range(V_):
                dlr[vv] = wgt * exp(lr[vv])
            dlr[tgt[r]] -= wgt

    # Output head.
    for r in range(Lt):
        dlr = dlogits + r * V_
        for vv in range(V_):
            g[o.b_out + vv] += dlr[vv]
        for c in range(d_):
            xv = hf[(C + r) * d_ + c]
            wr = p + o.w_out + c * V_
            acc = 0.0
            for vv in range(V_):
                g[o.w_out + c * V_ + vv] += xv * dlr[vv]
                acc += dlr[vv] * wr[vv]
            dh_[(C + r) * d_ + c] = acc

    _layernorm_bwd(dh_, p + o.lnf_g, g + o.lnf_g, g + o.lnf_b, xhf, invf,
                   dtmp, False, L, d_)
    memcpy(dh_, dtmp, L * d_ * sizeof(double))

    for li in range(nl - 1, -1, -1):
        lo = _layer_offsets(o.layers + li * o.stride, d_, f_)
        cb = base_ptr + li * blk
        # Feed-forward block.
        _linear_bwd(cb + off_f, p + lo.w2, g + lo.w2, g + lo.b2, dh_, dff,
                    False, L, f_, d_)
        _gelu_bwd(dff, cb + off_z, cb + off_th, dz, L * f_)
        _linear_bwd(cb + off_a2, p + lo.w1, g + lo.w1, g + lo.b1, dz, da,
                    False, L, d_, f_)
        _layernorm_bwd(da, p + lo.ln2_g, g + lo.ln2_g, g + lo.ln2_b,
                       cb + off_xh2, cb + off_inv2, dh_, True, L, d_)
        # Attention block (dq buffer holds dctx first, then dq).
        _linear_bwd(cb + off_ctx, p + lo.wo, g + lo.wo, g + lo.bo, dh_, dtmp,
                    False, L, d_, d_)
        _attention_bwd(cb + off_q, cb + off_k, cb + off_v, cb + off_att, dtmp,
                       dq, dk, dv, dsc, L, H_, dh_n)
        _linear_bwd(cb + off_a1, p + lo.wq, g + lo.wq, g + lo.bq, dq, da,
                    False, L, d_, d_)
        _linear_bwd(cb + off_a1, p + lo.wk, g + lo.wk, g + lo.bk, dk, da,
                    True, L, d_, d_)
        _linear_bwd(cb + off_a1, p + lo.wv, g + lo.wv, g + lo.bv, dv, da,
                    True, L, d_, d_)
        _layernorm_bwd(da, p + lo.ln1_g, g + lo.ln1_g, g + lo.ln1_b,
                       cb + off_xh1, cb + off_inv1, dh_, True, L, d_)

    # Embeddings.
    for i in range(L):
        for c in range(d_):
            g[o.tok_emb + tok[i] * d_ + c] += dh_[i * d_ + c]
            g[o.pos_emb + i * d_ + c] += dh_[i * d_ + c]

    return loss, grad_arr

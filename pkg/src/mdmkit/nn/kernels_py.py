"""Numpy reference implementation of the denoiser kernels.

The model is a small time-independent transformer encoder over the full
layout (condition region plus target region), with bidirectional
attention everywhere:

    h = tok_emb[tokens] + pos_emb[:L]
    repeat n_layers times:
        h = h + attn_out( multi_head_attention( layernorm1(h) ) )
        h = h + ff2( gelu( ff1( layernorm2(h) ) ) )
    h = layernorm_final(h)
    logits = h[cond_len:] @ w_out + b_out        # target rows only
    logits[:, mask_id] = LOG_ZERO                # mask token unpredictable
    logprobs = logits - logsumexp(logits, rows)

Parameters live in one flat float64 vector; the layout walk below is
the single source of truth for offsets and is mirrored verbatim by the
Cython backend. All math is float64. The backward pass is written by
hand and checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

# Same floor as mdmkit.diffusion.LOG_ZERO; duplicated here so the kernel
# modules stay dependency-free (the Cython backend cannot import it either).
LOG_ZERO = -1.0e4

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def param_count(V: int, L_max: int, d: int, n_layers: int, d_ff: int) -> int:
    """Total number of parameters for the given shapes."""
    per_layer = 4 * d * d + 4 * d + 2 * d + 2 * d + d * d_ff + d_ff + d_ff * d + d
    return V * d + L_max * d + n_layers * per_layer + 2 * d + d * V + V


def _views(params: np.ndarray, V: int, L_max: int, d: int, n_layers: int, d_ff: int):
    """Slice the flat vector into named weight views (no copies)."""
    o = 0

    def take(*shape):
        nonlocal o
        n = int(np.prod(shape))
        out = params[o : o + n].reshape(shape)
        o += n
        return out

    w = {"tok_emb": take(V, d), "pos_emb": take(L_max, d)}
    layers = []
    for _ in range(n_layers):
        layers.append(
            {
                "ln1_g": take(d), "ln1_b": take(d),
                "wq": take(d, d), "bq": take(d),
                "wk": take(d, d), "bk": take(d),
                "wv": take(d, d), "bv": take(d),
                "wo": take(d, d), "bo": take(d),
                "ln2_g": take(d), "ln2_b": take(d),
                "w1": take(d, d_ff), "b1": take(d_ff),
                "w2": take(d_ff, d), "b2": take(d),
            }
        )
    w["layers"] = layers
    w["lnf_g"] = take(d)
    w["lnf_b"] = take(d)
    w["w_out"] = take(d, V)
    w["b_out"] = take(V)
    if o != params.shape[0]:
        raise ValueError(f"parameter vector has {params.shape[0]} entries, expected {o}")
    return w


def _layernorm(x, g, b):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_bwd(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _gelu(z):
    u = _GELU_C * (z + _GELU_A * z**3)
    th = np.tanh(u)
    return 0.5 * z * (1.0 + th), th


def _gelu_bwd(dz_out, z, th):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * z * z)
    return dz_out * (0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * du)


def _softmax_rows(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff, mask_id,
             want_cache):
    w = _views(np.asarray(params, dtype=np.float64), V, L_max, d, n_layers, d_ff)
    tokens = np.asarray(tokens, dtype=np.int64)
    L = tokens.shape[0]
    dh = d // H
    scale = 1.0 / np.sqrt(dh)

    h = w["tok_emb"][tokens] + w["pos_emb"][:L]
    cache = {"tokens": tokens, "L": L, "layers": []} if want_cache else None
    for lw in w["layers"]:
        h0 = h
        a, ln1c = _layernorm(h0, lw["ln1_g"], lw["ln1_b"])
        q = a @ lw["wq"] + lw["bq"]
        k = a @ lw["wk"] + lw["bk"]
        v = a @ lw["wv"] + lw["bv"]
        qh = q.reshape(L, H, dh).transpose(1, 0, 2)
        kh = k.reshape(L, H, dh).transpose(1, 0, 2)
        vh = v.reshape(L, H, dh).transpose(1, 0, 2)
        att = _softmax_rows(np.matmul(qh, kh.transpose(0, 2, 1)) * scale)
        ctx = np.matmul(att, vh).transpose(1, 0, 2).reshape(L, d)
        h1 = h0 + ctx @ lw["wo"] + lw["bo"]
        a2, ln2c = _layernorm(h1, lw["ln2_g"], lw["ln2_b"])
        z = a2 @ lw["w1"] + lw["b1"]
        f, th = _gelu(z)
        h = h1 + f @ lw["w2"] + lw["b2"]
        if want_cache:
            cache["layers"].append(
                {"h0": h0, "a": a, "ln1c": ln1c, "qh": qh, "kh": kh, "vh": vh,
                 "att": att, "ctx": ctx, "h1": h1, "a2": a2, "ln2c": ln2c,
                 "z": z, "f": f, "th": th}
            )
        del h0, h1

    hf, lnfc = _layernorm(h, w["lnf_g"], w["lnf_b"])
    logits = hf[cond_len:] @ w["w_out"] + w["b_out"]
    logits[:, mask_id] = LOG_ZERO
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    logprobs = logits - lse
    if want_cache:
        cache["h_pre_lnf"] = h
        cache["lnfc"] = lnfc
        cache["hf"] = hf
        cache["logprobs"] = logprobs
    return logprobs, cache, w


def forward_logprobs(params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff,
                     mask_id):
    """Normalized log-probability grid over the target region.

    Returns an array of shape ``(len(tokens) - cond_len, V)`` whose rows
    sum to 1 in probability space; the mask column carries probability
    exactly 0.
    """
    logprobs, _, _ = _forward(
        params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff, mask_id, False
    )
    return logprobs


def masked_loss_grad(params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff,
                     mask_id, targets, masked, weight):
    """Weighted masked cross-entropy and its gradient in the flat layout.

    loss = weight * sum over masked target positions of
           -logprob(clean token at that position)

    Args:
        targets: clean target tokens, shape ``(target_len,)``.
        masked: boolean array, True where the position contributes.
        weight: scalar multiplier (the 1/t loss weight).

    Returns:
        ``(loss, grad)`` with ``grad`` the same length as ``params``.
    """
    params = np.asarray(params, dtype=np.float64)
    logprobs, cache, w = _forward(
        params, tokens, cond_len, V, L_max, d, H, n_layers, d_ff, mask_id, True
    )
    targets = np.asarray(targets, dtype=np.int64)
    masked = np.asarray(masked, dtype=bool)
    Lt = logprobs.shape[0]
    rows = np.nonzero(masked)[0]
    loss = -weight * float(logprobs[rows, targets[rows]].sum())

    grad = np.zeros_like(params)
    gw = _views(grad, V, L_max, d, n_layers, d_ff)
    L = cache["L"]
    dh_ = d // H
    scale = 1.0 / np.sqrt(dh_)

    # Softmax cross-entropy: d loss / d logits = weight * (p - onehot) on
    # masked rows. p is exactly 0 on the mask column, so no gradient ever
    # reaches the overwritten logit.
    dlogits = np.zeros((Lt, V))
    p = np.exp(logprobs[rows])
    dlogits[rows] = weight * p
    dlogits[rows, targets[rows]] -= weight

    hf = cache["hf"]
    gw["w_out"] += hf[cond_len:].T @ dlogits
    gw["b_out"] += dlogits.sum(axis=0)
    dhf = np.zeros((L, d))
    dhf[cond_len:] = dlogits @ w["w_out"].T

    dh, dg, db = _layernorm_bwd(dhf, w["lnf_g"], cache["lnfc"])
    gw["lnf_g"] += dg
    gw["lnf_b"] += db

    for li in range(n_layers - 1, -1, -1):
        lw = w["layers"][li]
        gl = gw["layers"][li]
        c = cache["layers"][li]

        # Feed-forward block.
        df = dh @ lw["w2"].T
        gl["w2"] += c["f"].T @ dh
        gl["b2"] += dh.sum(axis=0)
        dz = _gelu_bwd(df, c["z"], c["th"])
        gl["w1"] += c["a2"].T @ dz
        gl["b1"] += dz.sum(axis=0)
        da2 = dz @ lw["w1"].T
        dh1, dg2, db2 = _layernorm_bwd(da2, lw["ln2_g"], c["ln2c"])
        gl["ln2_g"] += dg2
        gl["ln2_b"] += db2
        dh1 = dh1 + dh  # residual

        # Attention block.
        dctx = dh1 @ lw["wo"].T
        gl["wo"] += c["ctx"].T @ dh1
        gl["bo"] += dh1.sum(axis=0)
        dctx_h = dctx.reshape(L, H, dh_).transpose(1, 0, 2)
        datt = np.matmul(dctx_h, c["vh"].transpose(0, 2, 1))
        dvh = np.matmul(c["att"].transpose(0, 2, 1), dctx_h)
        att = c["att"]
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dqh = np.matmul(dscores, c["kh"]) * scale
        dkh = np.matmul(dscores.transpose(0, 2, 1), c["qh"]) * scale
        dq = dqh.transpose(1, 0, 2).reshape(L, d)
        dk = dkh.transpose(1, 0, 2).reshape(L, d)
        dv = dvh.transpose(1, 0, 2).reshape(L, d)
        a = c["a"]
        gl["wq"] += a.T @ dq
        gl["bq"] += dq.sum(axis=0)
        gl["wk"] += a.T @ dk
        gl["bk"] += dk.sum(axis=0)
        gl["wv"] += a.T @ dv
        gl["bv"] += dv.sum(axis=0)
        da = dq @ lw["wq"].T + dk @ lw["wk"].T + dv @ lw["wv"].T
        dh0, dg1, db1 = _layernorm_bwd(da, lw["ln1_g"], c["ln1c"])
        gl["ln1_g"] += dg1
        gl["ln1_b"] += db1
        dh = dh0 + dh1  # residual

    # Embeddings.
    np.add.at(gw["tok_emb"], cache["tokens"], dh)
    gw["pos_emb"][:L] += dh
    return loss, grad

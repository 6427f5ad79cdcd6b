"""Forward and backward passes for the surrogate's layer types.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays are plain numpy arrays;
the dtype of the inputs is preserved (float64 for checks, float32 in fast
mode).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import erf

from .fft import irfft, rfft

__all__ = [
    "linear_forward",
    "linear_backward",
    "gelu_forward",
    "gelu_backward",
    "sigmoid",
    "gru_cell_forward",
    "gru_recurrent_forward",
    "gru_recurrent_backward",
    "gru_sequence_forward",
    "gru_sequence_backward",
    "spectral_conv1d_forward",
    "spectral_conv1d_backward",
]


def _check_last(x: np.ndarray, size: int, what: str) -> None:
    if x.shape[-1] != size:
        raise ValueError(f"{what}: expected trailing dimension {size}, got shape {x.shape}")


# ---------------------------------------------------------------- linear

def linear_forward(x, W, b):
    """``y = x @ W + b`` over the trailing axis of ``x``."""
    _check_last(x, W.shape[0], "linear")
    if b.shape != (W.shape[1],):
        raise ValueError(f"linear: bias shape {b.shape} does not match W {W.shape}")
    return x @ W + b, x


def linear_backward(dy, cache, W):
    x = cache
    _check_last(dy, W.shape[1], "linear backward")
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dW = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ W.T
    return dx, dW, db


# ---------------------------------------------------------------- activations

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_forward(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return (x * cdf).astype(x.dtype, copy=False), (x, cdf)


def gelu_backward(dy, cache):
    x, cdf = cache
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return (dy * (cdf + x * pdf)).astype(x.dtype, copy=False)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------- GRU
#
# Gate blocks are stored side by side along the output axis in the order
# (update z, reset r, candidate): Wx is [d, 3H], Uh is [H, 3H], b is [3H].
#
#   z  = sigmoid(x Wz + h Uz + bz)
#   r  = sigmoid(x Wr + h Ur + br)
#   h~ = tanh(x Wc + (r * h) Uc + bc)
#   h' = (1 - z) * h~ + z * h


def _split_u(Uh):
    H = Uh.shape[0]
    return np.ascontiguousarray(Uh[:, : 2 * H]), np.ascontiguousarray(Uh[:, 2 * H :])


def _gru_step(xw_t, h, Uzr, Uc, zr_out=None, rh_out=None, cand_out=None):
    H = h.shape[-1]
    zr = sigmoid(xw_t[:, : 2 * H] + h @ Uzr)
    if zr_out is not None:
        zr_out[...] = zr
    z = zr[:, :H]
    rh = zr[:, H:] * h
    if rh_out is not None:
        rh_out[...] = rh
    cand = np.tanh(xw_t[:, 2 * H :] + rh @ Uc)
    if cand_out is not None:
        cand_out[...] = cand
    return cand + z * (h - cand)


def gru_cell_forward(x_t, h_prev, Wx, Uh, b):
    """One GRU update for rows ``x_t`` [M, d] and state ``h_prev`` [M, H]."""
    _check_last(x_t, Wx.shape[0], "gru input")
    _check_last(h_prev, Uh.shape[0], "gru state")
    if Wx.shape[1] != 3 * Uh.shape[0] or Uh.shape[1] != 3 * Uh.shape[0]:
        raise ValueError("gru: gate matrices must have 3H output columns")
    return _gru_step(x_t @ Wx + b, h_prev, *_split_u(Uh))


def gru_recurrent_forward(xw, Uh, h0=None):
    """Recurrent part of the GRU given the input projections ``xw`` [L, M, 3H].

    ``xw[t]`` holds ``x_t @ Wx + b``. The state starts at zero unless ``h0``
    is given. Returns the final state [M, H] and the cache for
    :func:`gru_recurrent_backward`.
    """
    L, M, H3 = xw.shape
    H = Uh.shape[0]
    if H3 != 3 * H or Uh.shape[1] != 3 * H:
        raise ValueError("gru: gate matrices must have 3H output columns")
    Uzr, Uc = _split_u(Uh)
    dtype = xw.dtype
    hs = np.empty((L + 1, M, H), dtype=dtype)      # hs[t] is the state entering step t
    zrs = np.empty((L, M, 2 * H), dtype=dtype)
    rhs = np.empty((L, M, H), dtype=dtype)
    cands = np.empty((L, M, H), dtype=dtype)
    hs[0] = 0.0 if h0 is None else h0
    for t in range(L):
        hs[t + 1] = _gru_step(xw[t], hs[t], Uzr, Uc, zrs[t], rhs[t], cands[t])
    return hs[L].copy(), (hs, zrs, rhs, cands)


def gru_recurrent_backward(dh_final, cache, Uh):
    """BPTT through the recurrence.

    Returns ``(da, dUh, dh0)`` where ``da`` [L, M, 3H] is the gradient with
    respect to the input projections ``xw``.
    """
    hs, zrs, rhs, cands = cache
    L, M, H = rhs.shape
    Uzr, Uc = _split_u(Uh)
    UzrT = np.ascontiguousarray(Uzr.T)
    UcT = np.ascontiguousarray(Uc.T)
    da_all = np.empty((L, M, 3 * H), dtype=dh_final.dtype)
    dUzr = np.zeros_like(Uzr)
    dUc = np.zeros_like(Uc)
    dh = dh_final
    for t in range(L - 1, -1, -1):
        h, zr, cand = hs[t], zrs[t], cands[t]
        z = zr[:, :H]
        da = da_all[t]
        da_c = da[:, 2 * H :]
        np.multiply(dh - dh * z, 1.0 - cand * cand, out=da_c)
        drh = da_c @ UcT
        dzr = da[:, : 2 * H]
        np.multiply(dh, h - cand, out=dzr[:, :H])
        np.multiply(drh, h, out=dzr[:, H:])
        dzr *= zr - zr * zr
        dh = dh * z + drh * zr[:, H:] + dzr @ UzrT
        # per-step products beat one stacked [H, L*M] product here
        dUzr += h.T @ dzr
        dUc += rhs[t].T @ da_c
    return da_all, np.concatenate([dUzr, dUc], axis=1), dh


def gru_sequence_forward(x, Wx, Uh, b, h0=None):
    """Run a GRU over ``x`` [M, L, d] and return the final state [M, H]."""
    M, L, d = x.shape
    _check_last(x, Wx.shape[0], "gru input")
    H = Uh.shape[0]
    if Wx.shape[1] != 3 * H or Uh.shape[1] != 3 * H or b.shape != (3 * H,):
        raise ValueError("gru: gate matrices must have 3H output columns")
    # time-major so every step reads a contiguous block
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    xw = (xt.reshape(L * M, d) @ Wx + b).reshape(L, M, 3 * H)
    h, rcache = gru_recurrent_forward(xw, Uh, h0)
    return h, (xt, rcache)


def gru_sequence_backward(dh_final, cache, Wx, Uh):
    """Backpropagation through time.

    Returns ``(dx, dWx, dUh, db, dh0)`` with ``dx`` shaped like the forward
    input [M, L, d].
    """
    xt, rcache = cache
    L, M, d = xt.shape
    da_all, dUh, dh0 = gru_recurrent_backward(dh_final, rcache, Uh)
    da_flat = da_all.reshape(L * M, -1)
    dWx = xt.reshape(L * M, d).T @ da_flat
    db = da_flat.sum(axis=0)
    dx = (da_flat @ Wx.T).reshape(L, M, d).transpose(1, 0, 2)
    return dx, dWx, dUh, db, dh0


# ---------------------------------------------------------------- spectral conv
#
# Only k_max <= N//2 + 1 one-sided modes are ever needed, so the layer
# evaluates its transforms as products with cached basis matrices that are
# themselves generated by the FFT routines (a mode-pruned DFT).


@lru_cache(maxsize=32)
def _spectral_basis(n: int, k_max: int):
    eye = np.eye(n)
    fwd = rfft(eye, k_max)                        # [N, K]: row j = spectrum of e_j
    eye_k = np.eye(k_max)
    inv_re = irfft(eye_k, n)                      # [K, N]: response to Re Y_k = 1
    inv_im = irfft(1j * eye_k, n)                 # [K, N]: response to Im Y_k = 1
    return (np.ascontiguousarray(fwd.real), np.ascontiguousarray(fwd.imag),
            np.ascontiguousarray(inv_re), np.ascontiguousarray(inv_im))


def _basis(n, k_max, dtype):
    return tuple(m.astype(dtype, copy=False) for m in _spectral_basis(n, k_max))


def spectral_conv1d_forward(v, w_re, w_im):
    """Fourier-domain channel mixing along the spatial axis.

    Takes the one-sided DFT of every channel column along N, keeps modes
    ``0 .. k_max-1``, multiplies each retained mode by its complex
    [H, H_out] matrix and returns the real inverse transform (discarded
    modes are zero). Only the real part of the DC coefficient (and of the
    Nyquist coefficient when it is kept) reaches the output, as for any
    Hermitian spectrum.

    Args:
        v: real input [M, N, H].
        w_re, w_im: real and imaginary parts of the per-mode mixing
            matrices, each [k_max, H, H_out].

    Returns:
        Real output [M, N, H_out] and the cache for the backward pass.
    """
    M, N, H = v.shape
    k_max = w_re.shape[0]
    if w_re.shape != w_im.shape or w_re.shape[1] != H:
        raise ValueError(f"spectral weights {w_re.shape}/{w_im.shape} incompatible with input {v.shape}")
    if not 1 <= k_max <= N // 2 + 1:
        raise ValueError(f"k_max={k_max} out of range for N={N} (max {N // 2 + 1})")
    f_re, f_im, g_re, g_im = _basis(N, k_max, v.dtype)
    vt = v.transpose(0, 2, 1)                            # [M, H, N]
    # [K, M, H] spectra
    x_re = np.ascontiguousarray((vt @ f_re).transpose(2, 0, 1))
    x_im = np.ascontiguousarray((vt @ f_im).transpose(2, 0, 1))
    y_re = x_re @ w_re - x_im @ w_im                     # [K, M, H_out]
    y_im = x_re @ w_im + x_im @ w_re
    # sum over modes: [M, H_out, K] @ [K, N]
    out = y_re.transpose(1, 2, 0) @ g_re + y_im.transpose(1, 2, 0) @ g_im
    return out.transpose(0, 2, 1), (x_re, x_im, w_re, w_im, N)


def spectral_conv1d_backward(dy, cache):
    """Returns ``(dv, dw_re, dw_im)``."""
    x_re, x_im, w_re, w_im, N = cache
    k_max = w_re.shape[0]
    f_re, f_im, g_re, g_im = _basis(N, k_max, dy.dtype)
    g = dy.transpose(0, 2, 1)                            # [M, H_out, N]
    gy_re = np.ascontiguousarray((g @ g_re.T).transpose(2, 0, 1))   # [K, M, H_out]
    gy_im = np.ascontiguousarray((g @ g_im.T).transpose(2, 0, 1))
    xT_re = x_re.transpose(0, 2, 1)
    xT_im = x_im.transpose(0, 2, 1)
    dw_re = xT_re @ gy_re + xT_im @ gy_im
    dw_im = xT_re @ gy_im - xT_im @ gy_re
    wT_re = w_re.transpose(0, 2, 1)
    wT_im = w_im.transpose(0, 2, 1)
    gx_re = gy_re @ wT_re + gy_im @ wT_im                # [K, M, H]
    gx_im = gy_im @ wT_re - gy_re @ wT_im
    dv = gx_re.transpose(1, 2, 0) @ f_re.T + gx_im.transpose(1, 2, 0) @ f_im.T   # [M, H, N]
    return dv.transpose(0, 2, 1), dw_re, dw_im

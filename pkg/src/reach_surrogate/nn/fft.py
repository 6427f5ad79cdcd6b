"""Discrete Fourier transforms of arbitrary length along the last axis.

Power-of-two lengths use a vectorised radix-2 Cooley-Tukey; every other
length goes through Bluestein's chirp-z reformulation, which reduces the
transform to a circular convolution evaluated with the radix-2 path.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["dft", "idft", "rfft", "irfft"]

_BASE = 8


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _base_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


@lru_cache(maxsize=64)
def _twiddles(m: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(m) / m)[:, None]


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    lead = x.shape[:-1]
    n_min = min(n, _BASE)
    # column j holds the stride-(n/n_min) decimated subsequence starting at j
    sub = x.reshape(*lead, n_min, n // n_min)
    X = np.matmul(_base_matrix(n_min), sub)
    while X.shape[-2] < n:
        half = X.shape[-1] // 2
        even = X[..., :half]
        odd = X[..., half:] * _twiddles(X.shape[-2])
        X = np.concatenate([even + odd, even - odd], axis=-2)
    return X.reshape(*lead, n)


@lru_cache(maxsize=64)
def _chirp(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    m = 1
    while m < 2 * n - 1:
        m <<= 1
    k = np.arange(n)
    # reduce k^2 modulo 2n before scaling to keep the phase accurate
    w = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(w)
    b[m - n + 1:] = np.conj(w[1:])[::-1]
    return w, _fft_pow2(b), m


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    w, b_hat, m = _chirp(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * w
    conv = _ifft_pow2(_fft_pow2(a) * b_hat)
    return conv[..., :n] * w


def _ifft_pow2(X: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(X))) / X.shape[-1]


def dft(x) -> np.ndarray:
    """Forward DFT ``X[k] = sum_j x[j] exp(-2 pi i j k / N)`` over the last axis."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("dft needs at least one sample")
    if n == 1:
        return x.copy()
    if _is_pow2(n):
        return _fft_pow2(x)
    return _bluestein(x)


def idft(X) -> np.ndarray:
    """Inverse of :func:`dft` (includes the 1/N factor)."""
    X = np.asarray(X, dtype=complex)
    return np.conj(dft(np.conj(X))) / X.shape[-1]


def rfft(x, n_modes: int | None = None) -> np.ndarray:
    """One-sided spectrum of a real signal, optionally truncated to ``n_modes``."""
    x = np.asarray(x, dtype=float)
    full = x.shape[-1] // 2 + 1
    n_modes = full if n_modes is None else n_modes
    if not 1 <= n_modes <= full:
        raise ValueError(f"n_modes must lie in [1, {full}], got {n_modes}")
    return dft(x)[..., :n_modes]


def irfft(X, n: int) -> np.ndarray:
    """Real signal of length ``n`` from its (possibly truncated) one-sided spectrum.

    Missing modes are treated as zero. The imaginary parts of the DC and,
    for even ``n``, the Nyquist coefficient do not contribute.
    """
    X = np.asarray(X, dtype=complex)
    k = X.shape[-1]
    full = n // 2 + 1
    if k > full:
        raise ValueError(f"{k} modes exceed the {full} available for n={n}")
    spec = np.zeros(X.shape[:-1] + (n,), dtype=complex)
    spec[..., :k] = X
    spec[..., 0] = spec[..., 0].real
    if n % 2 == 0 and k == full:
        spec[..., n // 2] = spec[..., n // 2].real
    upper = min(k, (n + 1) // 2)
    if upper > 1:
        spec[..., n - upper + 1:] = np.conj(X[..., 1:upper])[..., ::-1]
    return idft(spec).real


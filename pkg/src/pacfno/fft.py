"""Arbitrary-length discrete Fourier transforms.

``fft`` is a vectorised mixed-radix Cooley-Tukey transform over the last axis.
Prime factors up to ``DIRECT_PRIME_LIMIT`` use a dense butterfly; larger
primes go through Bluestein's chirp-z reduction onto a power-of-two length.

``naive_dft2`` is the O(N^2) double sum used as an independent oracle.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["fft", "ifft", "fft2", "ifft2", "naive_dft2", "NAIVE_LIMIT", "set_backend", "get_backend"]

DIRECT_PRIME_LIMIT = 17
NAIVE_LIMIT = 4096

_BACKEND = "native"


def set_backend(name: str) -> None:
    """Select ``"native"`` (this module) or ``"numpy"`` (pocketfft) for fft/ifft."""
    global _BACKEND
    if name not in ("native", "numpy"):
        raise ValueError(f"unknown FFT backend {name!r}")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


def _smallest_factor(n: int) -> int:
    if n % 4 == 0:
        return 4
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(p: int, sign: int) -> np.ndarray:
    k = np.arange(p)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / p)


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int, sign: int) -> np.ndarray:
    n = p * m
    return np.exp(sign * 2j * np.pi * np.outer(np.arange(p), np.arange(m)) / n)


@lru_cache(maxsize=None)
def _bluestein_plan(n: int, sign: int):
    size = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase exact for large n
    chirp = np.exp(sign * 1j * np.pi * ((k * k) % (2 * n)) / n)
    kernel = np.zeros(size, dtype=complex)
    kernel[:n] = np.conj(chirp)
    kernel[size - n + 1 :] = np.conj(chirp[1:][::-1])
    return size, chirp, _transform(kernel, -1)


def _bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    size, chirp, kernel_hat = _bluestein_plan(n, sign)
    a = np.zeros(x.shape[:-1] + (size,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _transform(_transform(a, -1) * kernel_hat, 1) / size
    return conv[..., :n] * chirp


def _transform(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p == n:
        if n <= DIRECT_PRIME_LIMIT or n == 4:
            return x @ _dft_matrix(n, sign).T
        return _bluestein(x, sign)
    m = n // p
    # decimation in time: x[j*p + r] -> sub-sequence r, position j
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    y = _transform(sub, sign) * _twiddles(p, m, sign)
    # X[q*m + k] = sum_r W_p^{rq} y[r, k]
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p, sign), y, optimize=True)
    return out.reshape(x.shape[:-1] + (n,))


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalised forward DFT along ``axis``."""
    x = np.asarray(x)
    if _BACKEND == "numpy":
        return np.fft.fft(x, axis=axis)
    moved = np.moveaxis(x.astype(complex, copy=False), axis, -1)
    return np.moveaxis(_transform(moved, -1), -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse DFT along ``axis`` with ``1/n`` normalisation."""
    x = np.asarray(x)
    if _BACKEND == "numpy":
        return np.fft.ifft(x, axis=axis)
    moved = np.moveaxis(x.astype(complex, copy=False), axis, -1)
    return np.moveaxis(_transform(moved, 1), -1, axis) / x.shape[axis]


def fft2(x: np.ndarray) -> np.ndarray:
    return fft(fft(x, axis=-1), axis=-2)


def ifft2(x: np.ndarray) -> np.ndarray:
    return ifft(ifft(x, axis=-1), axis=-2)


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Direct double-sum 2-D DFT over the last two axes (testing oracle)."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if h * w > NAIVE_LIMIT:
        raise ValueError(f"naive_dft2 is capped at {NAIVE_LIMIT} pixels, got {h}x{w}")
    out = np.zeros(x.shape, dtype=complex)
    rows = np.arange(h)
    cols = np.arange(w)
    for u in range(h):
        row_phase = np.exp(-2j * np.pi * u * rows / h)
        for v in range(w):
            col_phase = np.exp(-2j * np.pi * v * cols / w)
            basis = row_phase[:, None] * col_phase[None, :]
            out[..., u, v] = (x * basis).sum(axis=(-2, -1))
    return out

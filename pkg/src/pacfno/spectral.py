"""Differentiable 2-D spectral operations on real images.

Spectra are stored Hermitian-halved: ``H x (W // 2 + 1)`` complex bins over
the last two axes, DC at ``[0, 0]``. Row ``r`` holds signed frequency ``r``
for ``r < ceil(H / 2)`` and ``r - H`` otherwise. The forward transform is
unnormalised; the inverse carries the ``1 / (H W)`` factor.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import fft as _fft
from .autodiff import ShapeError, Tensor, record

__all__ = [
    "HalfSpectrum",
    "SpectralFilter",
    "rfft2",
    "irfft2",
    "naive_dft2",
    "row_frequencies",
    "lowpass_truncate",
    "highpass_mask",
    "crop_spectrum",
    "spectrum_pad",
    "embed_spectrum",
    "apply_filter",
    "bilinear_resize",
    "bicubic_resize",
    "resize",
    "resize_matrix",
    "radial_spectrum",
]


class HalfSpectrum(Tensor):
    """Complex half spectrum; ``width`` is the spatial W it came from."""

    __slots__ = ("width",)

    @property
    def height(self) -> int:
        return self.shape[-2]


def naive_dft2(x) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return _fft.naive_dft2(data)


def _half_columns(w: int) -> int:
    return w // 2 + 1


def _column_weights(w: int) -> np.ndarray:
    """Multiplicity of each stored column in the full spectrum (1 for DC/Nyquist, else 2)."""
    weights = np.full(_half_columns(w), 2.0)
    weights[0] = 1.0
    if w % 2 == 0:
        weights[-1] = 1.0
    return weights


def _rfft2_data(x: np.ndarray) -> np.ndarray:
    w = x.shape[-1]
    if _fft.get_backend() == "numpy":
        return np.fft.rfft2(x)
    return _fft.fft(_fft.fft(x, axis=-1)[..., : _half_columns(w)], axis=-2)


def _irfft2_data(s: np.ndarray, h: int, w: int) -> np.ndarray:
    if _fft.get_backend() == "numpy":
        return np.fft.irfft2(s, s=(h, w))
    rows = _fft.ifft(s, axis=-2)
    full = np.zeros(rows.shape[:-1] + (w,), dtype=complex)
    kept = _half_columns(w)
    full[..., :kept] = rows
    # conjugate-mirror the strictly interior columns; imag parts of DC/Nyquist drop out below
    interior = np.arange(1, (w + 1) // 2)
    full[..., w - interior] = np.conj(rows[..., interior])
    return _fft.ifft(full, axis=-1).real


def rfft2(x: Tensor) -> HalfSpectrum:
    """Forward real 2-D DFT over the last two axes, keeping ``W // 2 + 1`` columns."""
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError("rfft2 needs non-empty spatial extents")
    spec = _rfft2_data(x.data)

    def rule(g):
        # adjoint: Re(sum_k g_k e^{+i w k n}) over the kept half
        full = np.zeros(g.shape[:-1] + (w,), dtype=complex)
        full[..., : g.shape[-1]] = g
        return (_fft.ifft2(full).real * (h * w),)

    return record(spec, (x,), rule, cls=HalfSpectrum, width=w)


def irfft2(s: HalfSpectrum, h: int, w: int) -> Tensor:
    """Inverse of :func:`rfft2` at spatial size ``h x w`` (real output)."""
    if s.shape[-1] != _half_columns(w) or s.shape[-2] != h:
        raise ShapeError(f"half spectrum {s.shape[-2:]} does not match a {h}x{w} image")
    out = _irfft2_data(s.data, h, w)
    weights = _column_weights(w)

    def rule(g):
        return (_rfft2_data(g) * (weights / (h * w)),)

    return record(out, (s,), rule)


@lru_cache(maxsize=None)
def row_frequencies(h: int) -> np.ndarray:
    """Signed frequency held by each spectrum row of an ``h``-row image."""
    r = np.arange(h)
    return np.where(r < (h + 1) // 2, r, r - h)


def _window_mask(h: int, w: int, h_r: int, w_r: int) -> np.ndarray:
    f = row_frequencies(h)
    rows = (f >= -(h_r // 2)) & (f <= (h_r + 1) // 2 - 1)
    cols = np.arange(_half_columns(w)) <= w_r // 2
    return rows[:, None] & cols[None, :]


def _check_threshold(s: HalfSpectrum, h_r: int, w_r: int) -> tuple[int, int]:
    h, w = s.height, s.width
    if not (1 <= h_r <= h and 1 <= w_r <= w):
        raise ShapeError(f"threshold {h_r}x{w_r} outside input extent {h}x{w}")
    return h, w


def _masked(s: HalfSpectrum, mask: np.ndarray) -> HalfSpectrum:
    return record(s.data * mask, (s,), lambda g: (g * mask,), cls=HalfSpectrum, width=s.width)


def lowpass_truncate(s: HalfSpectrum, h_r: int, w_r: int) -> HalfSpectrum:
    """Ideal low-pass: zero every bin outside the ``h_r x w_r`` frequency window.

    Kept rows are the signed frequencies an ``h_r``-point transform owns
    (``-h_r//2 .. ceil(h_r/2)-1``); kept columns are ``0 .. w_r//2``.
    Extents are unchanged.
    """
    h, w = _check_threshold(s, h_r, w_r)
    return _masked(s, _window_mask(h, w, h_r, w_r))


def highpass_mask(s: HalfSpectrum, h_r: int, w_r: int) -> HalfSpectrum:
    """Complement of :func:`lowpass_truncate`; the two partition the bins."""
    h, w = _check_threshold(s, h_r, w_r)
    return _masked(s, ~_window_mask(h, w, h_r, w_r))


@lru_cache(maxsize=None)
def _row_map(h_small: int, h_big: int) -> np.ndarray:
    """Row index in an ``h_big`` spectrum for each row of an ``h_small`` one."""
    return row_frequencies(h_small) % h_big


def crop_spectrum(s: HalfSpectrum, h: int, w: int) -> HalfSpectrum:
    """Gather the bins of an ``h x w`` image's spectrum out of a larger one (no rescale)."""
    big_h, big_w = s.height, s.width
    if h > big_h or w > big_w:
        raise ShapeError(f"cannot crop {big_h}x{big_w} spectrum to larger {h}x{w}")
    rows = _row_map(h, big_h)
    cols = _half_columns(w)
    out = s.data[..., rows, :cols]

    def rule(g):
        full = np.zeros(s.shape, dtype=complex)
        full[..., rows, :cols] = g
        return (full,)

    return record(out, (s,), rule, cls=HalfSpectrum, width=w)


def _embed(s: HalfSpectrum, h_t: int, w_t: int, factor: float) -> HalfSpectrum:
    h, w = s.height, s.width
    rows = _row_map(h, h_t)
    cols = _half_columns(w)
    out = np.zeros(s.shape[:-2] + (h_t, _half_columns(w_t)), dtype=complex)
    out[..., rows, :cols] = s.data * factor

    def rule(g):
        return (g[..., rows, :cols] * factor,)

    return record(out, (s,), rule, cls=HalfSpectrum, width=w_t)


def spectrum_pad(s: HalfSpectrum, h_t: int, w_t: int) -> HalfSpectrum:
    """Zero-pad a spectrum to an ``h_t x w_t`` image, rescaled so constants survive irfft2.

    Non-negative rows go to the top, negative rows to the bottom, columns to
    the left. An even-size Nyquist column is copied as-is (no energy split).
    """
    h, w = s.height, s.width
    if h_t < h or w_t < w:
        raise ShapeError(f"spectrum_pad cannot shrink {h}x{w} to {h_t}x{w_t}")
    if (h_t, w_t) == (h, w):
        return s
    return _embed(s, h_t, w_t, (h_t * w_t) / (h * w))


def embed_spectrum(s: HalfSpectrum, h: int, w: int) -> HalfSpectrum:
    """Place a small spectrum's bins into an ``h x w`` image's spectrum, zeros elsewhere."""
    if h < s.height or w < s.width:
        raise ShapeError(f"cannot embed {s.height}x{s.width} spectrum into smaller {h}x{w}")
    return _embed(s, h, w, 1.0)


class SpectralFilter:
    """Learnable per-bin channel mixer anchored at resolution ``(h_r, w_r)``.

    ``weight`` is a real tensor ``C_out x C_in x h_r x (w_r//2+1) x 2``
    holding real/imaginary parts, so each complex entry is two parameters.
    """

    def __init__(self, weight: Tensor, anchor: tuple[int, int]):
        h_r, w_r = anchor
        if weight.shape[2:] != (h_r, _half_columns(w_r), 2):
            raise ShapeError(f"filter weight {weight.shape} does not match anchor {anchor}")
        self.weight = weight
        self.anchor = (h_r, w_r)

    @classmethod
    def identity(cls, channels: int, anchor: tuple[int, int], value: complex = 1.0) -> "SpectralFilter":
        h_r, w_r = anchor
        data = np.zeros((channels, channels, h_r, _half_columns(w_r), 2))
        for c in range(channels):
            data[c, c, ..., 0] = np.real(value)
            data[c, c, ..., 1] = np.imag(value)
        return cls(Tensor(data, requires_grad=True), anchor)

    @classmethod
    def random(cls, channels: int, anchor: tuple[int, int], rng: np.random.Generator, gain: float = 0.02):
        h_r, w_r = anchor
        std = gain / np.sqrt(channels)
        data = rng.normal(0.0, std, size=(channels, channels, h_r, _half_columns(w_r), 2))
        return cls(Tensor(data, requires_grad=True), anchor)

    @property
    def channels(self) -> tuple[int, int]:
        return self.weight.shape[0], self.weight.shape[1]

    def num_parameters(self) -> int:
        return int(self.weight.data.size)


def apply_filter(s: HalfSpectrum, filt: SpectralFilter) -> HalfSpectrum:
    """Per-bin channel mixing ``out[o] = sum_i F[o, i, bin] * S[i, bin]``.

    Inputs smaller than the anchor resolution use the filter bins at the
    same signed frequencies.
    """
    h, w = s.height, s.width
    h_r, w_r = filt.anchor
    if h > h_r or w > w_r:
        raise ShapeError(f"input {h}x{w} exceeds filter anchor {h_r}x{w_r}")
    c_out, c_in = filt.channels
    if s.shape[-3] != c_in:
        raise ShapeError(f"spectrum has {s.shape[-3]} channels, filter expects {c_in}")
    rows = _row_map(h, h_r)
    cols = _half_columns(w)
    wd = filt.weight.data
    sub = wd[:, :, rows, :cols]
    fc = sub[..., 0] + 1j * sub[..., 1]
    sd = s.data
    out = np.einsum("oihw,...ihw->...ohw", fc, sd, optimize=True)

    def rule(g):
        gs = np.einsum("oihw,...ohw->...ihw", np.conj(fc), g, optimize=True) if s.requires_grad else None
        gw = None
        if filt.weight.requires_grad:
            gc = np.einsum("...ohw,...ihw->oihw", g, np.conj(sd), optimize=True)
            gw = np.zeros(wd.shape)
            gw[..., 0][:, :, rows, :cols] = gc.real
            gw[..., 1][:, :, rows, :cols] = gc.imag
        return gs, gw

    return record(out, (s, filt.weight), rule, cls=HalfSpectrum, width=w)


# ---------------------------------------------------------------- resampling


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys kernel taps for offsets -1, 0, 1, 2 around ``floor(src)``."""
    d = np.stack([t + 1, t, 1 - t, 2 - t], axis=-1)
    ad = np.abs(d)
    near = ((a + 2) * ad - (a + 3)) * ad * ad + 1
    far = ((a * ad - 5 * a) * ad + 8 * a) * ad - 4 * a
    return np.where(ad <= 1, near, np.where(ad < 2, far, 0.0))


@lru_cache(maxsize=None)
def resize_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """``n_out x n_in`` 1-D resampling operator with half-pixel centres.

    Kinds: ``nearest``, ``bilinear``, ``bicubic`` (Catmull-Rom, edge clamp),
    ``area`` (adaptive average pooling).
    """
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    ratio = n_in / n_out
    dst = np.arange(n_out)
    if kind == "nearest":
        src = np.minimum(np.floor(dst * ratio).astype(int), n_in - 1)
        m[dst, src] = 1.0
    elif kind == "bilinear":
        src = np.maximum((dst + 0.5) * ratio - 0.5, 0.0)
        lo = np.minimum(np.floor(src).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        np.add.at(m, (dst, lo), 1.0 - frac)
        np.add.at(m, (dst, hi), frac)
    elif kind == "bicubic":
        src = (dst + 0.5) * ratio - 0.5
        base = np.floor(src).astype(int)
        taps = _cubic_weights(src - base)
        for k in range(4):
            idx = np.clip(base - 1 + k, 0, n_in - 1)
            np.add.at(m, (dst, idx), taps[:, k])
    elif kind == "area":
        for i in range(n_out):
            start = int(np.floor(i * n_in / n_out))
            stop = int(np.ceil((i + 1) * n_in / n_out))
            m[i, start:stop] = 1.0 / (stop - start)
    else:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    return m


def resize(x: Tensor, h_out: int, w_out: int, kind: str = "bilinear") -> Tensor:
    """Separable resampling over the last two axes; differentiable in ``x``."""
    if h_out < 1 or w_out < 1:
        raise ShapeError("resize target must be at least 1x1")
    h, w = x.shape[-2:]
    if (h, w) == (h_out, w_out):
        return x
    mh = resize_matrix(h, h_out, kind)
    mw = resize_matrix(w, w_out, kind)
    out = np.einsum("ph,...hw,qw->...pq", mh, x.data, mw, optimize=True)

    def rule(g):
        return (np.einsum("ph,...pq,qw->...hw", mh, g, mw, optimize=True),)

    return record(out, (x,), rule)


def bilinear_resize(x: Tensor, h_out: int, w_out: int) -> Tensor:
    return resize(x, h_out, w_out, "bilinear")


def bicubic_resize(x: Tensor, h_out: int, w_out: int) -> Tensor:
    return resize(x, h_out, w_out, "bicubic")


# ---------------------------------------------------------------- analysis


def radial_spectrum(x, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Annulus-averaged ``log(1 + |X|)`` of a centred spectrum.

    Returns ``(radius, curve)``; radius is the bin centre in ``[0, 1]``,
    curve is normalised so bin 0 equals 1 (left as-is if bin 0 is zero).
    Leading axes (batch, channel) are averaged.
    """
    if bins < 2:
        raise ValueError("radial_spectrum needs at least two bins")
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    h, w = data.shape[-2:]
    mag = np.log1p(np.abs(np.fft.fftshift(_fft.fft2(data), axes=(-2, -1))))
    mag = mag.reshape(-1, h, w).mean(axis=0)
    fy = (np.arange(h) - h // 2) / max(h // 2, 1)
    fx = (np.arange(w) - w // 2) / max(w // 2, 1)
    radius = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2) / np.sqrt(2.0)
    which = np.minimum((radius * bins).astype(int), bins - 1)
    sums = np.bincount(which.ravel(), weights=mag.ravel(), minlength=bins)
    counts = np.bincount(which.ravel(), minlength=bins)
    curve = np.divide(sums, counts, out=np.zeros(bins), where=counts > 0)
    if curve[0] > 0:
        curve = curve / curve[0]
    centres = (np.arange(bins) + 0.5) / bins
    return centres, curve

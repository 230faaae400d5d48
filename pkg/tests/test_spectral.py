import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pacfno import fft as pfft
from pacfno.autodiff import ShapeError, Tensor, grad_check, mul, tsum
from pacfno.spectral import (
    SpectralFilter,
    apply_filter,
    bicubic_resize,
    bilinear_resize,
    highpass_mask,
    irfft2,
    lowpass_truncate,
    naive_dft2,
    radial_spectrum,
    resize,
    rfft2,
    spectrum_pad,
)

RNG = np.random.default_rng(7)


@pytest.fixture(params=["native", "numpy"])
def backend(request):
    old = pfft.get_backend()
    pfft.set_backend(request.param)
    yield request.param
    pfft.set_backend(old)


# ---------------------------------------------------------------- transforms


def test_constant_dc(backend):
    s = rfft2(Tensor(np.full((1, 4, 4), 5.0))).data
    assert s[0, 0, 0] == pytest.approx(80.0)
    s[0, 0, 0] = 0
    assert np.abs(s).max() < 1e-12


def test_single_harmonic_column_one(backend):
    w = np.arange(8)
    x = np.broadcast_to(np.cos(2 * np.pi * w / 8), (1, 6, 8))
    s = np.abs(rfft2(Tensor(x.copy())).data[0])
    mask = np.zeros_like(s, dtype=bool)
    mask[:, 1] = True
    assert s[~mask].max() < 1e-12 and s[mask].max() > 1


def test_rfft2_matches_naive(backend):
    x = RNG.normal(size=(3, 7, 9))
    assert np.abs(rfft2(Tensor(x)).data - naive_dft2(x)[..., :5]).max() < 1e-9


def test_naive_delta_and_cap():
    x = np.zeros((1, 5, 6))
    x[0, 0, 0] = 1
    assert np.allclose(naive_dft2(x), 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        naive_dft2(np.zeros((1, 65, 64)))


def test_parseval_naive():
    x = RNG.normal(size=(2, 11, 13))
    spec = naive_dft2(x)
    assert abs((x**2).sum() - (np.abs(spec) ** 2).sum() / (11 * 13)) < 1e-9


def test_irfft2_roundtrip_and_dc(backend):
    x = RNG.normal(size=(3, 5, 6))
    assert np.abs(irfft2(rfft2(Tensor(x)), 5, 6).data - x).max() < 1e-10
    dc = np.zeros((1, 4, 4), dtype=complex)
    dc[0, 0, 0] = 4 * 6 * 2.5
    assert np.allclose(irfft2(_half(dc, 6), 4, 6).data, 2.5, atol=1e-14)


def _half(data, width):
    from pacfno.autodiff import record
    from pacfno.spectral import HalfSpectrum

    padded = np.zeros(data.shape[:-1] + (width // 2 + 1,), dtype=complex)
    padded[..., : data.shape[-1]] = data[..., : width // 2 + 1]
    return record(padded, (), None, cls=HalfSpectrum, width=width)


def test_irfft2_extent_mismatch():
    s = rfft2(Tensor(RNG.normal(size=(1, 4, 6))))
    with pytest.raises(ShapeError):
        irfft2(s, 4, 8)


def test_inner_product_adjoint(backend):
    h, w = 6, 7
    x, y = RNG.normal(size=(2, h, w)), RNG.normal(size=(2, h, w))
    s = rfft2(Tensor(x))
    weights = np.full(w // 2 + 1, 2.0)
    weights[0] = 1.0
    lhs = (irfft2(s, h, w).data * y).sum()
    rhs = np.real(weights * s.data * np.conj(rfft2(Tensor(y)).data)).sum() / (h * w)
    assert lhs == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 64), st.integers(1, 64))
def test_roundtrip_property(c, h, w):
    x = np.random.default_rng(h * 97 + w).normal(size=(c, h, w))
    assert np.abs(irfft2(rfft2(Tensor(x)), h, w).data - x).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24))
def test_dc_bin_is_real(h, w):
    x = np.random.default_rng(h + 31 * w).normal(size=(1, h, w))
    assert abs(rfft2(Tensor(x)).data[0, 0, 0].imag) < 1e-12


def test_fft_backends_agree_on_awkward_sizes():
    for n in (1, 2, 3, 17, 19, 23, 97, 128, 210, 1009):
        x = RNG.normal(size=n) + 1j * RNG.normal(size=n)
        assert np.abs(pfft.fft(x) - np.fft.fft(x)).max() < 1e-9 * max(1, n)
        assert np.abs(pfft.ifft(pfft.fft(x)) - x).max() < 1e-12


# ---------------------------------------------------------------- masks


def test_lowpass_full_window_is_identity():
    s = rfft2(Tensor(RNG.normal(size=(3, 7, 8))))
    assert np.array_equal(lowpass_truncate(s, 7, 8).data, s.data)


def test_lowpass_keeps_constant():
    s = rfft2(Tensor(np.full((1, 6, 6), 0.3)))
    for k in range(1, 7):
        assert np.allclose(lowpass_truncate(s, k, k).data, s.data, atol=1e-12)


def test_lowpass_removes_checkerboard():
    hh, ww = np.meshgrid(np.arange(6), np.arange(6), indexing="ij")
    x = 0.5 + 0.25 * (-1.0) ** (hh + ww)
    s = lowpass_truncate(rfft2(Tensor(x[None])), 2, 2)
    assert np.allclose(irfft2(s, 6, 6).data, 0.5, atol=1e-12)


def test_highpass_partition_and_constant():
    x = RNG.normal(size=(3, 9, 10))
    s = rfft2(Tensor(x))
    lo, hi = lowpass_truncate(s, 5, 4), highpass_mask(s, 5, 4)
    assert np.array_equal(lo.data + hi.data, s.data)
    assert not np.any((lo.data != 0) & (hi.data != 0))
    recon = irfft2(lo, 9, 10).data + irfft2(hi, 9, 10).data
    assert np.abs(recon - x).max() < 1e-10
    const = highpass_mask(rfft2(Tensor(np.full((1, 4, 4), 2.0))), 2, 2)
    assert np.abs(const.data).max() < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_masks_partition_property(h, w, data):
    h_r, w_r = data.draw(st.integers(1, h)), data.draw(st.integers(1, w))
    s = rfft2(Tensor(np.random.default_rng(h * w).normal(size=(1, h, w))))
    lo, hi = lowpass_truncate(s, h_r, w_r).data, highpass_mask(s, h_r, w_r).data
    assert np.array_equal(lo + hi, s.data)


def test_threshold_errors():
    s = rfft2(Tensor(np.zeros((1, 4, 4))))
    for fn in (lowpass_truncate, highpass_mask):
        with pytest.raises(ShapeError):
            fn(s, 5, 4)


# ---------------------------------------------------------------- padding


def test_pad_constant_2x2_to_4x4():
    s = spectrum_pad(rfft2(Tensor(np.ones((1, 2, 2)))), 4, 4)
    assert np.allclose(irfft2(s, 4, 4).data, 1.0, atol=1e-14)


def test_pad_identity_and_shrink():
    s = rfft2(Tensor(RNG.normal(size=(1, 5, 5))))
    assert np.array_equal(spectrum_pad(s, 5, 5).data, s.data)
    with pytest.raises(ShapeError):
        spectrum_pad(s, 4, 5)


def test_pad_low_harmonic_is_resampled_sinusoid():
    h = np.arange(8)
    x = np.broadcast_to(np.cos(2 * np.pi * h / 8)[:, None], (1, 8, 8)).copy()
    up = irfft2(spectrum_pad(rfft2(Tensor(x)), 16, 16), 16, 16).data
    fine = np.cos(2 * np.pi * np.arange(16) / 16)[:, None]
    assert np.abs(up[0] - fine).max() < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 6), st.integers(0, 6),
       st.floats(-3, 3), st.floats(-3, 3))
def test_pad_linear_and_constant_preserving(h, w, dh, dw, a, b):
    rng = np.random.default_rng(h * 10 + w)
    s1, s2 = (rfft2(Tensor(rng.normal(size=(1, h, w)))) for _ in range(2))
    ht, wt = h + dh, w + dw
    lhs = spectrum_pad(_half(a * s1.data + b * s2.data, w), ht, wt).data
    rhs = a * spectrum_pad(s1, ht, wt).data + b * spectrum_pad(s2, ht, wt).data
    assert np.allclose(lhs, rhs, atol=1e-12)
    const = irfft2(spectrum_pad(rfft2(Tensor(np.full((1, h, w), 0.7))), ht, wt), ht, wt).data
    assert np.allclose(const, 0.7, atol=1e-12)


# ---------------------------------------------------------------- filters


def test_identity_filter_at_every_resolution():
    filt = SpectralFilter.identity(3, (12, 12))
    for size in range(1, 13):
        s = rfft2(Tensor(RNG.normal(size=(3, size, size))))
        assert np.array_equal(apply_filter(s, filt).data, s.data)


def test_imaginary_unit_filter_on_dc():
    filt = SpectralFilter.identity(3, (4, 4), value=1j)
    s = apply_filter(rfft2(Tensor(np.full((3, 4, 4), 2.0))), filt)
    assert s.data[0, 0, 0] == pytest.approx(32j)
    # the imaginary DC part has no real-signal counterpart and is dropped
    assert np.allclose(irfft2(s, 4, 4).data, 0.0, atol=1e-14)


def test_filter_larger_input_rejected():
    with pytest.raises(ShapeError):
        apply_filter(rfft2(Tensor(np.zeros((3, 5, 4)))), SpectralFilter.identity(3, (4, 4)))


def test_filter_weight_grad(backend):
    filt = SpectralFilter.random(3, (4, 4), RNG, gain=1.0)
    x = Tensor(RNG.normal(size=(3, 4, 4)))
    probe = Tensor(RNG.normal(size=(3, 4, 4)))
    f = lambda: tsum(mul(irfft2(apply_filter(rfft2(x), filt), 4, 4), probe))  # noqa: E731
    assert grad_check(f, [filt.weight]) < 1e-5


def test_pad_chain_grad(backend):
    filt = SpectralFilter.random(3, (8, 8), RNG, gain=1.0)
    x = Tensor(RNG.normal(size=(2, 3, 5, 6)), requires_grad=True)
    probe = Tensor(RNG.normal(size=(2, 3, 8, 8)))

    def f():
        return tsum(mul(irfft2(spectrum_pad(apply_filter(rfft2(x), filt), 8, 8), 8, 8), probe))

    assert grad_check(f, [x, filt.weight]) < 1e-5


# ---------------------------------------------------------------- resampling


@pytest.mark.parametrize("kind", ["bilinear", "bicubic", "nearest", "area"])
def test_resize_constant_and_identity(kind):
    x = Tensor(np.full((3, 5, 7), 0.4))
    assert np.allclose(resize(x, 11, 3, kind).data, 0.4, atol=1e-14)
    y = Tensor(RNG.normal(size=(3, 6, 6)))
    assert np.array_equal(resize(y, 6, 6, kind).data, y.data)


def test_bilinear_half_pixel_weights():
    x = Tensor(np.array([[[0.0, 1.0], [0.0, 1.0]]]))
    assert np.allclose(bilinear_resize(x, 2, 4).data[0], [[0, 0.25, 0.75, 1]] * 2)


def test_bilinear_grad():
    x = Tensor(RNG.normal(size=(2, 3, 5, 4)), requires_grad=True)
    probe = Tensor(RNG.normal(size=(2, 3, 9, 7)))
    assert grad_check(lambda: tsum(mul(bilinear_resize(x, 9, 7), probe)), [x]) < 1e-8


def test_bicubic_ramp_overshoot_bound():
    ramp = np.broadcast_to(np.linspace(0, 1, 6), (1, 6, 6)).copy()
    up = bicubic_resize(Tensor(ramp), 24, 24).data
    assert up.min() >= -0.5 and up.max() <= 1.5


# ---------------------------------------------------------------- radial spectrum


def test_radial_constant():
    _, curve = radial_spectrum(np.full((3, 16, 16), 0.5), 8)
    assert curve[0] == 1.0 and np.abs(curve[1:]).max() < 1e-12


def test_radial_white_noise_flat():
    rng = np.random.default_rng(0)
    curves = [radial_spectrum(rng.normal(size=(1, 32, 32)), 8)[1] for _ in range(1000)]
    mean = np.mean(curves, axis=0)
    assert mean.max() / mean.min() < 2


def test_radial_lowpass_has_less_high_mass():
    x = RNG.normal(size=(3, 32, 32))
    low = irfft2(lowpass_truncate(rfft2(Tensor(x)), 12, 12), 32, 32).data
    radius, raw = radial_spectrum(x, 8)
    _, filt = radial_spectrum(low, 8)
    high = radius >= 0.5
    assert filt[high].sum() < raw[high].sum()
    assert np.all((radius >= 0) & (radius <= 1))

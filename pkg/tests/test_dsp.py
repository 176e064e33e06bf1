import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from specklepose.dsp import (
    Autocorrelogram,
    Spectrum,
    autocorrelation,
    autocorrelation_from_spectrum,
    brute_force_autocorrelation,
    central_crop,
    fft_logmag,
    find_side_peaks,
    parabola_vertex,
    stripe_orientation,
)


def speckle(n, grain, seed):
    """Fully developed speckle with grain size ~``grain`` px (circular pupil)."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[:n, :n] - n // 2
    pupil = (np.hypot(xx, yy) < n / (2 * grain)).astype(float)
    u = np.fft.ifft2(np.fft.ifftshift(pupil * np.exp(2j * np.pi * r.random((n, n)))))
    return np.abs(u) ** 2


def two_copies(n=256, du=6, dv=0, seed=0, grain=3):
    P = speckle(n, grain, seed)
    return P + np.roll(P, (dv, du), axis=(0, 1))


# --- spectrum -------------------------------------------------------------


def test_constant_frame_spectrum_is_zero():
    s = fft_logmag(np.full((32, 48), 7.0))
    assert s.logmag.shape == (32, 48) and not s.logmag.any()


def test_cosine_maxima_on_horizontal_axis():
    n = 64
    x = np.arange(n)
    img = np.tile(np.cos(2 * np.pi * x / 8), (n, 1))
    s = fft_logmag(img).logmag
    r, c = np.unravel_index(np.argsort(s, axis=None)[-2:], s.shape)
    assert set(r) == {n // 2}
    assert sorted(c - n // 2) == [-n // 8, n // 8]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), dy=st.integers(-20, 20), dx=st.integers(-20, 20))
def test_spectrum_symmetric_and_translation_invariant(seed, dy, dx):
    a = np.random.default_rng(seed).random((32, 40))
    s = fft_logmag(a).logmag
    # zero frequency at index n//2: the reflection of k is (n - k) mod n
    flipped = np.roll(s[::-1, ::-1], (1, 1), axis=(0, 1))
    assert np.max(np.abs(s - flipped)) < 1e-9
    t = fft_logmag(np.roll(a, (dy, dx), axis=(0, 1))).logmag
    assert np.max(np.abs(s - t)) < 1e-9


def test_spectrum_invariants():
    with pytest.raises(ValueError):
        Spectrum(np.zeros((5, 4)), (5, 4))
    with pytest.raises(ValueError):
        Spectrum(np.full((4, 4), np.inf), (4, 4))


def test_central_crop():
    s = fft_logmag(np.random.default_rng(0).random((360, 640)))
    c = central_crop(s, 320, 180)
    assert c.logmag.shape == (180, 320) and c.cropped
    # the zero-frequency bin stays at the center index
    assert c.logmag[90, 160] == s.logmag[180, 320]
    assert abs(c.logmag[90, 160]) < 1e-9
    full = central_crop(s, 640, 360)
    assert np.array_equal(full.logmag, s.logmag) and not full.cropped
    with pytest.raises(ValueError):
        central_crop(s, 642, 360)


# --- autocorrelation -------------------------------------------------------


def test_wiener_khinchin_matches_brute_force():
    a = np.random.default_rng(3).random((32, 32))
    ref = brute_force_autocorrelation(a)
    got = autocorrelation(a).ac
    assert np.max(np.abs(got - ref)) / np.max(np.abs(ref)) < 1e-6


def test_autocorrelation_from_spectrum_matches_direct():
    a = speckle(128, 3, 1)
    d = autocorrelation(a).ac
    s = autocorrelation_from_spectrum(fft_logmag(a)).ac
    assert np.max(np.abs(d - s)) < 1e-9
    with pytest.raises(ValueError):
        autocorrelation_from_spectrum(central_crop(fft_logmag(a), 64, 64))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.sampled_from([8, 16, 30]), w=st.sampled_from([8, 12, 32]))
def test_autocorrelation_symmetry_and_unit_zero_lag(seed, h, w):
    ac = autocorrelation(np.random.default_rng(seed).random((h, w))).ac
    cy, cx = h // 2, w // 2
    assert ac[cy, cx] == pytest.approx(1.0, abs=1e-12)
    assert np.max(ac) <= 1.0 + 1e-12
    flipped = np.roll(ac[::-1, ::-1], (1, 1), axis=(0, 1))
    assert np.max(np.abs(ac - flipped)) < 1e-9


def test_zero_variance_frame_rejected():
    with pytest.raises(ValueError):
        autocorrelation(np.full((16, 16), 3.0))


def test_white_noise_autocorrelation_is_delta():
    ac = autocorrelation(np.random.default_rng(5).random((256, 256))).ac
    ac[127:130, 127:130] = 0
    assert np.max(np.abs(ac)) < 0.1


def test_autocorrelogram_invariants():
    with pytest.raises(ValueError):
        Autocorrelogram(np.zeros((4, 4)))


# --- side peaks ------------------------------------------------------------


def test_constructed_shift_gives_side_peaks():
    ac = autocorrelation(two_copies(du=6))
    pk = find_side_peaks(ac, 4)
    assert pk.valid
    assert pk.offset_px[0] == pytest.approx(6.0, abs=0.25)
    assert pk.offset_px[1] == pytest.approx(0.0, abs=0.25)
    assert pk.prominence == pytest.approx(0.5, abs=0.1)
    assert pk.mirror_offset_px[0] == pytest.approx(-6.0, abs=0.25)


@settings(max_examples=20, deadline=None)
@given(du=st.integers(-30, 30), dv=st.integers(0, 30), seed=st.integers(0, 1000))
def test_integer_shifts_recovered(du, dv, seed):
    if np.hypot(du, dv) < 10:
        return
    pk = find_side_peaks(autocorrelation(two_copies(128, du, dv, seed)), 8)
    assert pk.valid
    # the positive half-plane holds either the shift or its mirror
    sign = 1 if (dv > 0 or (dv == 0 and du > 0)) else -1
    assert np.hypot(pk.offset_px[0] - sign * du, pk.offset_px[1] - sign * dv) < 0.3
    # mirror peak within 0.5 px whenever valid
    assert np.hypot(pk.offset_px[0] + pk.mirror_offset_px[0], pk.offset_px[1] + pk.mirror_offset_px[1]) <= 0.5


def test_single_copy_has_no_valid_peak():
    pk = find_side_peaks(autocorrelation(speckle(256, 3, 2)), 8)
    assert not pk.valid


def test_subpixel_shift_recovered():
    P = speckle(256, 4, 7)
    fy, fx = np.meshgrid(np.fft.fftfreq(256), np.fft.fftfreq(256), indexing="ij")
    Q = np.fft.ifft2(np.fft.fft2(P) * np.exp(-2j * np.pi * (fx * 14.4 + fy * 3.3))).real
    pk = find_side_peaks(autocorrelation(P + Q), 8)
    assert pk.valid
    assert np.hypot(pk.offset_px[0] - 14.4, pk.offset_px[1] - 3.3) < 0.3


def test_small_exclusion_rejected():
    with pytest.raises(ValueError):
        find_side_peaks(autocorrelation(speckle(64, 3, 0)), 1)


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(-5, -0.01),
    x0=st.floats(-0.5, 0.5),
    c=st.floats(-10, 10),
)
def test_parabola_vertex_exact(a, x0, c):
    f = lambda x: a * (x - x0) ** 2 + c
    assert parabola_vertex(f(-1), f(0), f(1)) == pytest.approx(x0, abs=1e-12)


def test_parabola_flat_is_zero():
    assert parabola_vertex(1.0, 1.0, 1.0) == 0.0


# --- stripe orientation ------------------------------------------------------


def _center(a, n=256):
    h = (a.shape[0] - n) // 2
    return a[h : h + n, h : h + n]


def test_vertical_fringes_read_ninety_degrees():
    # two speckle copies offset horizontally: the spectrum carries vertical fringes
    img = _center(two_copies(512, 40, 0, 0, 4))
    o = stripe_orientation(fft_logmag(img), 8)
    assert o.valid
    assert o.angle_deg == pytest.approx(90.0, abs=0.2)


@pytest.mark.parametrize("turn", [30, 45, 60, 100, 135])
def test_orientation_follows_image_rotation(turn):
    img = two_copies(512, 40, 0, 1, 4)
    base = stripe_orientation(fft_logmag(_center(img)), 8).angle_deg
    rot = ndimage.rotate(img, turn, reshape=False, order=3, mode="wrap")
    got = stripe_orientation(fft_logmag(_center(rot)), 8).angle_deg
    err = (got - base - turn + 90) % 180 - 90
    assert abs(err) <= 0.5


def test_isotropic_spectrum_flagged_invalid():
    o = stripe_orientation(fft_logmag(speckle(256, 3, 9)), 8)
    assert not o.valid
    o = stripe_orientation(fft_logmag(np.random.default_rng(0).random((256, 256))), 8)
    assert not o.valid


def test_orientation_range():
    for seed in range(3):
        o = stripe_orientation(fft_logmag(np.random.default_rng(seed).random((64, 64))), 4)
        assert 0.0 <= o.angle_deg < 180.0

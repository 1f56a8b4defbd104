import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pitof.phasor import (CaptureStack, Phasor, TapSet, decode_taps, encode_taps,
                          phasor_to_complex, subtract_ambient, tap_subtract, wrap_phase)

finite = st.floats(-50, 50, allow_nan=False)


def taps(*v, **kw):
    return TapSet.from_values(*v, **kw)


def test_decode_constant_is_degenerate():
    p = decode_taps(taps(2, 2, 2, 2))
    assert (p.amplitude, p.phase, p.offset) == (0.0, 0.0, 2.0)
    assert p.degenerate


def test_decode_hand_example():
    p = decode_taps(taps(2, 1, 2, 3))
    assert p.amplitude == pytest.approx(1.0, abs=1e-15)
    assert p.phase == pytest.approx(np.pi / 2, abs=1e-15)
    assert p.offset == 2.0
    assert not p.degenerate


def test_roundtrip_example():
    p = decode_taps(encode_taps(Phasor(0.7, 1.3, 2.0)))
    np.testing.assert_allclose([p.amplitude, p.phase, p.offset], [0.7, 1.3, 2.0], atol=1e-12)


@pytest.mark.parametrize("phasor,expected", [
    ((1.0, np.pi / 2, 2.0), (2, 1, 2, 3)),
    ((0.0, 4.2, 5.0), (5, 5, 5, 5)),
    ((1.0, 0.0, 2.0), (1, 2, 3, 2)),
])
def test_encode_examples(phasor, expected):
    np.testing.assert_allclose(encode_taps(Phasor(*phasor)).taps, expected, atol=1e-15)


def test_encode_rejects_negative_amplitude():
    with pytest.raises(ValueError):
        encode_taps(Phasor(-1.0, 0.0, 1.0))


def test_tapset_rejects_nonfinite_and_bad_shape():
    with pytest.raises(ValueError):
        taps(1, np.nan, 1, 1)
    with pytest.raises(ValueError):
        TapSet(np.zeros((3, 2)))


def test_subtract_examples():
    d = tap_subtract(taps(4, 3, 4, 5), taps(2, 1, 2, 3))
    np.testing.assert_array_equal(d.taps, [2, 2, 2, 2])
    assert d.difference and decode_taps(d).amplitude == 0.0
    x = taps(1.5, -2, 3, 0.25)
    np.testing.assert_array_equal(tap_subtract(x, x).taps, 0.0)


def test_subtract_matches_complex_difference_random_pairs():
    rng = np.random.default_rng(3)
    a1, a2 = rng.uniform(0, 5, (2, 100))
    f1, f2 = rng.uniform(0, 2 * np.pi, (2, 100))
    s1, s2 = a1 + rng.uniform(0, 5, 100), a2 + rng.uniform(0, 5, 100)
    x, y = Phasor(a1, f1, s1), Phasor(a2, f2, s2)
    d = decode_taps(tap_subtract(encode_taps(x), encode_taps(y)))
    ref = Phasor.from_complex(x.to_complex() - y.to_complex(), s1 - s2)
    np.testing.assert_allclose(d.to_complex(), ref.to_complex(), atol=1e-12)
    np.testing.assert_allclose(d.offset, s1 - s2, atol=1e-12)


def test_subtract_ambient_examples():
    np.testing.assert_array_equal(subtract_ambient(taps(5, 5, 5, 5), 3).taps, [2, 2, 2, 2])
    t = taps(2, 1, 2, 3)
    np.testing.assert_array_equal(subtract_ambient(t, 0).taps, t.taps)
    out = subtract_ambient(t, 1)
    np.testing.assert_array_equal(out.taps, [1, 0, 1, 2])
    p, q = decode_taps(t), decode_taps(out)
    assert (q.amplitude, q.phase, q.offset) == (p.amplitude, p.phase, p.offset - 1)


def test_subtract_ambient_clamps_with_warning():
    with pytest.warns(RuntimeWarning, match="clamped"):
        out = subtract_ambient(taps(2, 1, 2, 3), 1.5)
    assert out.taps.min() == 0.0 and bool(out.clamped)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = subtract_ambient(taps(2, 1, 2, 3), 1.05, tolerance=0.1)
    assert out.taps.min() == pytest.approx(-0.05)
    with pytest.raises(ValueError):
        subtract_ambient(taps(2, 1, 2, 3), -1)


@pytest.mark.parametrize("p,z,s", [((1, 0, 2), 1 + 0j, 2), ((1, np.pi / 2, 0), 1j, 0),
                                    ((2, np.pi, 1), -2 + 0j, 1)])
def test_phasor_to_complex(p, z, s):
    zz, ss = phasor_to_complex(Phasor(*p))
    assert zz == pytest.approx(z, abs=1e-15) and ss == s


@given(st.floats(0, 10), st.floats(0, 2 * np.pi, exclude_max=True), st.floats(0, 10))
def test_roundtrip_property(a, phi, extra):
    s = a + extra
    p = decode_taps(encode_taps(Phasor(a, phi, s)))
    assert p.amplitude == pytest.approx(a, rel=1e-10, abs=1e-12)
    assert p.offset == pytest.approx(s, rel=1e-10, abs=1e-12)
    if a > 1e-6:
        dphi = np.angle(np.exp(1j * (p.phase - phi)))
        assert abs(dphi) < 1e-10


@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4))
def test_linearity_property(x, y):
    px, py = decode_taps(taps(*x)), decode_taps(taps(*y))
    s = decode_taps(TapSet(np.add(x, y)))
    assert abs(s.to_complex() - (px.to_complex() + py.to_complex())) < 1e-10 * (1 + max(map(abs, x + y)))
    assert s.offset == pytest.approx(px.offset + py.offset, abs=1e-10)


@given(st.lists(finite, min_size=4, max_size=4), finite)
def test_offset_shift_invariance(x, c):
    p, q = decode_taps(taps(*x)), decode_taps(taps(*(np.array(x) + c)))
    assert q.amplitude == pytest.approx(p.amplitude, abs=1e-10)
    assert q.offset == pytest.approx(p.offset + c, abs=1e-10)
    if p.amplitude > 1e-6:
        assert abs(np.angle(np.exp(1j * (q.phase - p.phase)))) < 1e-8


@given(st.floats(-1e6, 1e6))
def test_wrap_range(phi):
    w = wrap_phase(phi)
    assert 0.0 <= w < 2 * np.pi


def test_wrap_tiny_negative():
    assert wrap_phase(-1e-300) == 0.0


def test_capture_stack_shape_checks():
    t = TapSet(np.ones((4, 3, 2)))
    with pytest.raises(ValueError):
        CaptureStack(t, TapSet(np.ones((4, 2, 3))))
    with pytest.raises(ValueError):
        CaptureStack(t, t, ambient_parallel=np.ones((2, 2)))
    st_ = CaptureStack(t, t, ambient_cross=0.5)
    assert st_.has_ambient and st_.ambient_cross.shape == (3, 2)
    assert (st_.height, st_.width) == (3, 2)
    np.testing.assert_array_equal(st_.ambient_subtracted().cross.taps, 0.5)

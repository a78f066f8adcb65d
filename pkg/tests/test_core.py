import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpasync.core import (
    InfoPair,
    MomentPair,
    SingularMatrixError,
    det2,
    from_information,
    invert2,
    is_spd,
    to_information,
)


def random_spd(rng, max_log_cond=6):
    q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
    scale = 10 ** rng.uniform(-3, 3)
    ev = scale * np.array([1.0, 10 ** rng.uniform(0, max_log_cond)])
    m = q @ np.diag(ev) @ q.T
    return 0.5 * (m + m.T)


@st.composite
def spd_matrices(draw):
    a = draw(st.floats(1e-3, 1e3))
    c = draw(st.floats(1e-3, 1e3))
    rho = draw(st.floats(-0.999, 0.999))
    b = rho * np.sqrt(a * c)
    return np.array([[a, b], [b, c]])


def test_invert2_identity():
    np.testing.assert_array_equal(invert2(np.eye(2)), np.eye(2))


def test_invert2_diagonal():
    np.testing.assert_allclose(invert2(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]), rtol=0, atol=0)


def test_invert2_default_process_covariance():
    q = np.array([[5000.00005, -1.5707964], [-1.5707964, 5.02496e-4]])
    np.testing.assert_allclose(invert2(q) @ q, np.eye(2), atol=1e-9)


def test_invert2_singular_raises():
    with pytest.raises(SingularMatrixError):
        invert2(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        invert2(np.zeros((2, 2)))


def test_invert2_batched_matches_loop():
    rng = np.random.default_rng(3)
    ms = np.stack([random_spd(rng) for _ in range(7)])
    expected = np.stack([np.linalg.inv(m) for m in ms])
    np.testing.assert_allclose(invert2(ms), expected, rtol=1e-9)


@given(spd_matrices())
def test_invert2_involution_and_spd(m):
    inv = invert2(m)
    assert is_spd(inv)
    np.testing.assert_allclose(invert2(inv), m, rtol=1e-12, atol=1e-12 * np.abs(m).max())


def test_det_of_inverse_is_reciprocal():
    m = np.array([[3.0, 1.0], [1.0, 2.0]])
    assert det2(invert2(m)) == pytest.approx(1 / 5.0, rel=1e-15)


def test_to_information_examples():
    ip = to_information(MomentPair([0.0, 0.0], np.eye(2)))
    np.testing.assert_array_equal(ip.omega, np.eye(2))
    np.testing.assert_array_equal(ip.mu, [0.0, 0.0])

    ip = to_information(MomentPair([1.0, 2.0], np.diag([0.5, 0.25])))
    np.testing.assert_allclose(ip.omega, np.diag([2.0, 4.0]))
    np.testing.assert_allclose(ip.mu, [2.0, 8.0])


def test_from_information_examples():
    mp = from_information(InfoPair(np.eye(2), [3.0, 4.0]))
    np.testing.assert_array_equal(mp.mean, [3.0, 4.0])
    np.testing.assert_array_equal(mp.cov, np.eye(2))

    mp = from_information(InfoPair(np.diag([4.0, 1.0]), [4.0, 1.0]))
    np.testing.assert_allclose(mp.mean, [1.0, 1.0])


def test_round_trip_1000_random_spd():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        cov = random_spd(rng)
        mean = rng.normal(size=2) * 10 ** rng.uniform(-3, 3)
        back = from_information(to_information(MomentPair(mean, cov)))
        np.testing.assert_allclose(back.cov, cov, rtol=1e-10, atol=1e-10 * np.abs(cov).max())
        # mean recovery error scales with the covariance condition number
        np.testing.assert_allclose(back.mean, mean, rtol=1e-10, atol=1e-10 * np.abs(mean).max())


def test_is_spd():
    assert is_spd(np.eye(2))
    assert not is_spd(np.diag([1.0, -1.0]))
    assert not is_spd(np.array([[1.0, 0.5], [0.4, 1.0]]))
    assert not is_spd(np.array([[np.nan, 0.0], [0.0, 1.0]]))

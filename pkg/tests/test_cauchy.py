import math

import numpy as np
import pytest

from backstep.cauchy import (CauchySystem, LogSignedProduct, build_cauchy, csum,
                             explicit_inverse, format_scalar, oracle_inverse,
                             parse_scalar, read_matrix_csv, tail_log_bound,
                             truncation_entry_bar, write_matrix_csv)
from backstep.errors import ResonanceError, SingularMatrixError
from backstep.spectrum import Kind, dist_alpha, make_spectrum


def heat(n_max=64):
    return make_spectrum(Kind.SELF_ADJOINT, 2.0, 1.0, n_max)


def test_build_examples():
    sys2 = CauchySystem.from_model(heat(), 0.5, 2)
    assert np.allclose(sys2.x, [-1.0, -4.0]) and np.allclose(sys2.y, [-0.5, -3.5])
    C = build_cauchy(sys2)
    assert np.allclose(C, [[-2.0, 0.4], [-1 / 3.5, -2.0]])
    assert np.allclose(build_cauchy(CauchySystem.from_model(heat(), 0.5, 1)), [[-2.0]])
    sk = make_spectrum(Kind.SKEW_ADJOINT, 2.0, 1.0, 4)
    C1 = build_cauchy(CauchySystem.from_model(sk, 1.0, 1))
    assert C1[0, 0] == pytest.approx(-1.0)


def test_explicit_inverse_2x2():
    sys2 = CauchySystem.from_model(heat(), 0.5, 2)
    E = explicit_inverse(sys2)
    # frozen from the 2x2 adjugate: det = 4 + 0.4/3.5 = 144/35
    det = 4.0 + 0.4 / 3.5
    assert det == pytest.approx(4.1142857142857, rel=1e-12)
    expect = np.array([[-2.0, -0.4], [1 / 3.5, -2.0]]) / det
    assert np.allclose(E, expect, rtol=1e-13)
    # hand evaluation of the product formula, entry (1,1)
    assert E[0, 0] == pytest.approx(0.25 / (-0.5) * (1 + 0.5 / 3) * (1 - 0.5 / 3), rel=1e-13)


def test_explicit_inverse_empty_products():
    s1 = CauchySystem.from_model(heat(), 0.5, 1)
    E = explicit_inverse(s1)
    assert np.allclose(E, [[-0.5]])           # lambda^2 / (-lambda) with empty products


@pytest.mark.parametrize("alpha", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("N", [1, 2, 5, 16, 48])
def test_inverse_identity_and_oracle(alpha, N):
    m = make_spectrum(Kind.SELF_ADJOINT, alpha, 1.0, 64)
    lam = 1.3125
    cert = dist_alpha(m, lam)
    sysm = CauchySystem.from_model(m, lam, N, cert)
    C, E = build_cauchy(sysm), explicit_inverse(sysm)
    assert np.max(np.abs(E @ C - np.eye(N))) <= 1e-10
    O = oracle_inverse(C)
    assert np.max(np.abs(E - O)) <= 1e-10 * np.max(np.abs(O))


def test_oracle_examples():
    assert np.allclose(oracle_inverse(np.array([[-2.0]])), [[-0.5]])
    A = np.array([[-2.0, 0.4], [-1 / 3.5, -2.0]])
    det = 4.0 + 0.4 / 3.5
    expect = np.array([[-2.0, -0.4], [1 / 3.5, -2.0]]) / det
    assert np.allclose(oracle_inverse(A), expect, rtol=1e-14)
    assert np.allclose(oracle_inverse(np.eye(5)), np.eye(5))


def test_oracle_guards():
    with pytest.raises(SingularMatrixError):
        oracle_inverse(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(ValueError):
        oracle_inverse(np.ones((2, 3)))


def test_resonance_guards():
    m = heat()
    with pytest.raises(ResonanceError):
        build_cauchy(CauchySystem.from_model(m, 3.0, 4))   # lambda_1 - lambda_2 = 3
    with pytest.raises(ResonanceError):
        explicit_inverse(CauchySystem.from_model(m, 3.0, 4))
    # stale certificate: claim a larger separation than the nodes deliver
    fake = dist_alpha(m, 0.5)
    sysm = CauchySystem(x=m.eigenvalues[:4], y=m.eigenvalues[:4] + 2.9, lam=2.9,
                        min_sep=fake.dist)
    with pytest.raises(ResonanceError, match="stale"):
        build_cauchy(sysm)


def test_logsigned_against_naive():
    rng = np.random.default_rng(3)
    for _ in range(25):
        f = rng.normal(size=rng.integers(1, 60))
        p = LogSignedProduct.from_factors(f)
        naive = float(np.prod(f))
        assert p.value() == pytest.approx(naive, rel=1e-12)
    z = rng.normal(size=30) + 1j * rng.normal(size=30)
    p = LogSignedProduct.from_factors(z)
    assert abs(p.value() - np.prod(z)) <= 1e-12 * abs(np.prod(z))


def test_logsigned_zero_and_composition():
    p = LogSignedProduct.from_factors([2.0, 0.0, 5.0])
    assert p.is_zero and p.value() == 0.0
    a = LogSignedProduct.from_factors([3.0, -2.0])
    b = LogSignedProduct.from_factors([0.5])
    assert a.times(b).value() == pytest.approx(-3.0)
    assert a.times(p).is_zero
    assert LogSignedProduct.one().value() == 1.0
    # overflow-proof: 400 factors of 100 is far past float range
    big = LogSignedProduct.from_factors([100.0] * 400)
    assert big.log_magnitude == pytest.approx(400 * math.log(100.0))


def test_tail_bound_example():
    m = heat(128)
    b = tail_log_bound(m, 1, 1.0, 100)
    assert b <= 0.09
    # direct summation of the majorant series to convergence
    idx = np.arange(101, 400_001, dtype=float)
    direct = float(np.sum(2.0 * 1.0 / ((idx - 1) * idx)))
    assert direct <= b


def test_tail_bound_scaling_and_guards():
    m = heat(128)
    b1 = tail_log_bound(m, 1, 1e-3, 100)
    b2 = tail_log_bound(m, 1, 2e-3, 100)
    assert b2 == pytest.approx(2 * b1)        # linear in lambda
    assert tail_log_bound(m, 1, 0.0, 100) == 0.0
    with pytest.raises(ValueError, match="threshold"):
        tail_log_bound(m, 1, 1000.0, 5)
    with pytest.raises(ValueError):
        tail_log_bound(m, 101, 1.0, 100)
    assert truncation_entry_bar(m, 1.0, 100) >= math.expm1(2 * tail_log_bound(m, 100, 1.0, 100)) - 1e-15


def test_truncation_bar_certifies_deeper_truncations():
    # the N-truncated gain product must sit within the bar of the 2N one
    m = heat(256)
    lam = 1.375
    for N in (32, 64):
        a = explicit_inverse(CauchySystem.from_model(m, lam, N))
        b = explicit_inverse(CauchySystem.from_model(m, lam, 2 * N))
        bar = truncation_entry_bar(m, lam, N)
        rel = np.max(np.abs(a - b[:N, :N]) / np.abs(b[:N, :N]))
        assert rel <= bar


def test_csum_exact():
    vals = [1e16, 1.0, -1e16, 1.0]
    assert csum(vals) == 2.0
    assert csum([1 + 2j, 1e16j, -1e16j]) == 1 + 2j


def test_scalar_format_roundtrip():
    for z in (0.5, -1.0, 1 / 3, 2.5e-17, complex(1.5, -0.25), complex(0.0, 3.0), -7.25e-9 + 1e-17j):
        assert parse_scalar(format_scalar(z)) == complex(z)


def test_matrix_csv_roundtrip(tmp_path):
    m = heat()
    E = explicit_inverse(CauchySystem.from_model(m, 0.5, 6))
    p = tmp_path / "real.csv"
    write_matrix_csv(E, p)
    assert np.array_equal(read_matrix_csv(p), E)
    sk = make_spectrum(Kind.SKEW_ADJOINT, 2.0, 1.0, 6)
    Z = explicit_inverse(CauchySystem.from_model(sk, 1.5, 6))
    p2 = tmp_path / "cplx.csv"
    write_matrix_csv(Z, p2)
    assert np.array_equal(read_matrix_csv(p2), Z)

"""Truncated Cauchy matrices and their explicit Lagrange-product inverses.

The transformation core is the matrix with entries 1/(x_i - y_j) built from
x_i = lambda_i and y_j = lambda_j + lambda.  Its inverse has a closed form,

    inv[i, j] = lambda^2 / (lambda_j - lambda_i - lambda)
                * prod_{m != i} (1 + lambda / (lambda_i - lambda_m))
                * prod_{n != j} (1 - lambda / (lambda_j - lambda_n)),

whose factors reach magnitudes of order exp(c lambda^(1/alpha)); every product
here is therefore accumulated in the log domain with separate unit-modulus
sign tracking.  A dense partial-pivoting elimination provides the independent
brute-force inversion oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ResonanceError, SingularMatrixError
from .spectrum import SpectrumModel

_IMAG_TOL = 1e-13  # self-adjoint outputs must be real to this tolerance


def csum(values: Iterable[complex]) -> complex:
    """Exactly rounded sum (Shewchuk) of real or complex values."""
    vals = list(values)
    re = math.fsum(v.real for v in vals)
    im = math.fsum(v.imag for v in vals)
    return complex(re, im) if im != 0.0 else re


@dataclass(frozen=True)
class LogSignedProduct:
    """A product stored as sign * exp(log_magnitude), sign of unit modulus.

    Composition adds log magnitudes and multiplies signs, so arbitrarily long
    factor lists never overflow.  A vanished factor is the absorbing element
    (sign 0, log magnitude -inf).
    """
    log_magnitude: float
    sign: complex

    @classmethod
    def one(cls) -> "LogSignedProduct":
        return cls(0.0, 1.0 + 0.0j)

    @classmethod
    def from_factors(cls, factors: Sequence[complex]) -> "LogSignedProduct":
        arr = np.asarray(factors, dtype=complex)
        mags = np.abs(arr)
        if np.any(mags == 0.0):
            return cls(float("-inf"), 0.0j)
        log_mag = float(np.sum(np.log(mags)))
        sign = complex(np.prod(arr / mags))
        return cls(log_mag, sign)

    @property
    def is_zero(self) -> bool:
        return self.sign == 0.0

    def times(self, other: "LogSignedProduct") -> "LogSignedProduct":
        if self.is_zero or other.is_zero:
            return LogSignedProduct(float("-inf"), 0.0j)
        return LogSignedProduct(self.log_magnitude + other.log_magnitude, self.sign * other.sign)

    def value(self) -> complex:
        if self.is_zero:
            return 0.0 + 0.0j
        return self.sign * math.exp(self.log_magnitude)


@dataclass(frozen=True)
class CauchySystem:
    """Node sequences x_i = lambda_i and y_j = lambda_j + lambda at truncation N.

    `min_sep`, when set from a distance certificate, guards every divided
    difference: a node pair closer than the certified distance means the
    certificate is stale.
    """
    x: np.ndarray
    y: np.ndarray
    lam: float
    min_sep: float | None = None

    @property
    def n(self) -> int:
        return self.x.size

    @classmethod
    def from_model(cls, model: SpectrumModel, lam: float, N: int,
                   cert=None) -> "CauchySystem":
        if N < 1 or N > model.n_max:
            raise ValueError(f"truncation N={N} outside [1, {model.n_max}]")
        x = model.eigenvalues[:N]
        return cls(x=x, y=x + lam, lam=float(lam),
                   min_sep=None if cert is None else cert.dist)


def _separations(sys: CauchySystem) -> np.ndarray:
    return sys.x[:, None] - sys.y[None, :]


def _guard(sys: CauchySystem, sep: np.ndarray) -> None:
    m = float(np.min(np.abs(sep)))
    if m == 0.0:
        i, j = np.unravel_index(int(np.argmin(np.abs(sep))), sep.shape)
        raise ResonanceError(f"x_{i+1} equals y_{j+1}: lambda hits an eigenvalue difference")
    if sys.min_sep is not None:
        # forming y = x + lambda rounds at the magnitude of the largest node
        slack = 32.0 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(sys.x))))
        if m < sys.min_sep - slack:
            raise ResonanceError(
                f"node separation {m} below certified distance {sys.min_sep}: stale certificate")


def build_cauchy(sys: CauchySystem) -> np.ndarray:
    """N x N matrix with entries 1/(x_i - y_j) = 1/(lambda_i - lambda_j - lambda)."""
    sep = _separations(sys)
    _guard(sys, sep)
    return _realized(sys, 1.0 / sep)


def lagrange_products(sys: CauchySystem) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Row and column products of the explicit inverse, in log-signed form.

    Returns (log|P|, sgn P, log|Q|, sgn Q) with
      P_i = prod_{m != i} (1 + lambda / (lambda_i - lambda_m)),
      Q_j = prod_{n != j} (1 - lambda / (lambda_j - lambda_n)).
    """
    lam = sys.lam
    dx = sys.x[:, None] - sys.x[None, :]
    off = ~np.eye(sys.n, dtype=bool)
    if sys.n > 1 and np.min(np.abs(dx[off])) == 0.0:
        raise ResonanceError("repeated eigenvalue: Lagrange products need simple nodes")
    np.fill_diagonal(dx, 1.0)          # excluded index, neutral factor below
    plus = 1.0 + lam / dx
    minus = 1.0 - lam / dx
    np.fill_diagonal(plus, 1.0)
    np.fill_diagonal(minus, 1.0)
    if np.any(plus == 0.0) or np.any(minus == 0.0):
        raise ResonanceError("a Lagrange factor vanished: lambda equals lambda_i - lambda_m exactly")
    log_p = np.sum(np.log(np.abs(plus)), axis=1)
    log_q = np.sum(np.log(np.abs(minus)), axis=1)
    sgn_p = np.prod(plus / np.abs(plus), axis=1)
    sgn_q = np.prod(minus / np.abs(minus), axis=1)
    return log_p, sgn_p, log_q, sgn_q


def explicit_inverse(sys: CauchySystem) -> np.ndarray:
    """Closed-form inverse of `build_cauchy(sys)` via Lagrange products.

    Entry (i, j) = lambda^2/(lambda_j - lambda_i - lambda) * P_i * Q_j; the
    empty products at N = 1 are 1, so the single entry is -lambda.
    """
    sep = _separations(sys)
    _guard(sys, sep)
    log_p, sgn_p, log_q, sgn_q = lagrange_products(sys)
    lam = sys.lam
    # lambda_j - lambda_i - lambda = -(x_i - y_j) transposed: x_j - y_i
    pref = sep.T
    log_mag = (2.0 * math.log(lam) - np.log(np.abs(pref))
               + log_p[:, None] + log_q[None, :])
    sign = (np.conj(pref) / np.abs(pref)) * sgn_p[:, None] * sgn_q[None, :]
    return _realized(sys, sign * np.exp(log_mag))


def _realized(sys: CauchySystem, mat: np.ndarray) -> np.ndarray:
    """Drop exact-zero imaginary parts on the real (self-adjoint) path."""
    if np.isrealobj(sys.x) or np.all(sys.x.imag == 0.0):
        scale = float(np.max(np.abs(mat))) or 1.0
        worst = float(np.max(np.abs(mat.imag)))
        assert worst <= _IMAG_TOL * scale, f"imaginary residue {worst} on real path"
        return mat.real.copy()
    return mat


def oracle_inverse(mat: np.ndarray, pivot_rtol: float = 1e-12) -> np.ndarray:
    """Dense inverse by Gaussian elimination with partial pivoting.

    Brute-force oracle, independent of the product formula; intended for
    N <= 256.  Pivots below pivot_rtol times the pivot row's original max
    norm raise SingularMatrixError.
    """
    a = np.array(mat, dtype=complex if np.iscomplexobj(mat) else float)
    n, m = a.shape
    if n != m:
        raise ValueError("matrix must be square")
    row_scale = np.max(np.abs(a), axis=1)
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if np.abs(a[p, k]) < pivot_rtol * max(row_scale[piv[p]], 1e-300):
            raise SingularMatrixError(f"pivot {abs(a[p, k])} at step {k} below tolerance")
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    # solve A X = I with the LU factors
    x = np.eye(n, dtype=a.dtype)[piv]
    for k in range(n):                      # forward, unit lower triangle
        x[k + 1:] -= np.outer(a[k + 1:, k], x[k])
    for k in range(n - 1, -1, -1):          # backward
        x[k] /= a[k, k]
        x[:k] -= np.outer(a[:k, k], x[k])
    return x


def tail_log_bound(model: SpectrumModel, i: int, lam: float, N: int) -> float:
    """Certified bound on |sum_{m>N} log(1 +- lambda/(lambda_i - lambda_m))|.

    Majorant: each term is at most 2 lambda / (c |i-m| m^(alpha-1)); the series
    is summed explicitly up to M = max(N, 2i) and closed with the integral
    bound 4 lambda / (c (alpha-1) M^(alpha-1)).  Requires the truncation to be
    past the threshold N > (10 lambda / c)^(1/(alpha-1)) so every dropped
    factor is within 10% of 1.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not 1 <= i <= N:
        raise ValueError("row index must satisfy 1 <= i <= N")
    c, alpha = model.gap_c, model.alpha
    threshold = (10.0 * lam / c) ** (1.0 / (alpha - 1.0))
    if N <= threshold:
        raise ValueError(f"N={N} below tail threshold {threshold}")
    if lam == 0.0:
        return 0.0
    M = max(2 * i, N)
    m = np.arange(N + 1, M + 1, dtype=float)
    head = float(np.sum(2.0 * lam / (c * (m - i) * m ** (alpha - 1.0)))) if m.size else 0.0
    tail = 4.0 * lam / (c * (alpha - 1.0) * float(M) ** (alpha - 1.0))
    return head + tail


def truncation_entry_bar(model: SpectrumModel, lam: float, N: int) -> float:
    """Relative error bar exp(b_P + b_Q) - 1 of a truncated inverse entry.

    Both Lagrange products drop the same tail family; the worst row index is
    i = N, so twice that bound dominates any entry of the N-truncation.
    """
    b = tail_log_bound(model, N, lam, N)
    return math.expm1(2.0 * b)


# ---------------------------------------------------------------------------
# CSV serialization (row-major, complex entries as "re+imi" literals)


def format_scalar(z) -> str:
    z = complex(z)
    if z.imag == 0.0:
        return format(z.real, ".17g")
    sign = "+" if z.imag >= 0 else "-"
    return f"{format(z.real, '.17g')}{sign}{format(abs(z.imag), '.17g')}i"


def parse_scalar(text: str) -> complex:
    t = text.strip()
    if t.endswith("i"):
        body = t[:-1]
        for k in range(len(body) - 1, 0, -1):
            if body[k] in "+-" and body[k - 1] not in "eE":
                return complex(float(body[:k]), float(body[k:] or "1"))
        return complex(0.0, float(body))
    return complex(float(t), 0.0)


def write_matrix_csv(mat: np.ndarray, path) -> None:
    rows = [",".join(format_scalar(z) for z in row) for row in np.atleast_2d(mat)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(rows) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        rows = [[parse_scalar(c) for c in line.split(",")] for line in fh.read().splitlines() if line]
    arr = np.array(rows, dtype=complex)
    return arr.real.copy() if np.all(arr.imag == 0.0) else arr

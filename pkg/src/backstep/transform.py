"""Backstepping transformation, feedback gains, and closed-loop verification.

All matrices act on coefficient vectors in the eigenbasis: `T_mat[p, n]` is
the table entry <T phi_n, phi_p> = k_n b_p / (lambda_p - lambda_n - lambda),
so `T_mat @ f` are the coefficients of T f.  The assembled operator is the
diagonal factorization  T = diag(b) @ cauchy @ diag(k)  and its inverse
T^-1 = diag(1/k) @ cauchy_inv @ diag(1/b).

The gains are defined by the uniqueness condition T B = B, equivalently
k_n b_n = sum_j cauchy_inv[n, j].  That row sum telescopes to the closed form
k_n b_n = -lambda * F_n(lambda) (the finite truncation of the rearrangement
identity, whose sum factor is exactly 1 at every truncation), which is the
numerically stable route: the raw row sum cancels catastrophically once
lambda is large.  Both routes are exposed and must agree within their bars.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .cauchy import (CauchySystem, build_cauchy, csum, explicit_inverse,
                     lagrange_products, tail_log_bound)
from .errors import CertificationError, GainFloorError
from .spectrum import DistCertificate, SpectrumModel, dist_alpha

_EPS = float(np.finfo(float).eps)
_ASSEMBLY_TOL = 1e-6  # hard alarm; acceptance asserts the tight 1e-8 contract


@dataclass(frozen=True)
class GainEstimate:
    """Feedback gains with per-entry roundoff bars and the truncation tail bar.

    `roundoff` bounds the floating-point error of each k_n at this truncation;
    `tail_log` bounds |log| of the ratio between the N-truncated and the
    infinite gain products (see cauchy.tail_log_bound).
    """
    values: np.ndarray
    roundoff: np.ndarray
    tail_log: float
    route: str

    def __iter__(self):
        return iter(self.values)


def _term_relerr(N: int) -> float:
    # log-domain entries accumulate ~N rounded logs; generous constant
    return _EPS * (16.0 * N + 4.0)


def _tail_log(model: SpectrumModel, lam: float, N: int) -> float:
    try:
        return 2.0 * tail_log_bound(model, N, lam, N)
    except ValueError:
        return float("inf")  # truncation below the certified-tail threshold


def feedback_gains_rowsum(model: SpectrumModel, lam: float, N: int,
                          cert: DistCertificate | None = None) -> GainEstimate:
    """k_n = (sum_j explicit-inverse row n) / b_n.

    Terms are summed by increasing |j - n| with exactly rounded accumulation;
    the roundoff bar carries the absolute row mass, which is what limits this
    route at large lambda.
    """
    cert = _certify(model, lam, cert)
    sys = CauchySystem.from_model(model, lam, N, cert)
    inv = explicit_inverse(sys)
    b = model.b[:N]
    kb = np.empty(N, dtype=inv.dtype)
    bars = np.empty(N)
    rel = _term_relerr(N)
    for n in range(N):
        order = np.argsort(np.abs(np.arange(N) - n), kind="stable")
        kb[n] = csum(inv[n, order])
        bars[n] = rel * float(np.sum(np.abs(inv[n])))
    _check_nonzero(kb, "row-sum")
    return GainEstimate(values=kb / b, roundoff=bars / b,
                        tail_log=_tail_log(model, lam, N), route="rowsum")


def feedback_gains_product(model: SpectrumModel, lam: float, N: int,
                           cert: DistCertificate | None = None) -> GainEstimate:
    """k_n = -lambda F_n(lambda) / b_n with F_n the truncated gain product.

    Exactly equal to the row-sum route in real arithmetic at every truncation
    (the rearrangement sum is identically 1); numerically this route has plain
    relative error and no cancellation.
    """
    cert = _certify(model, lam, cert)
    sys = CauchySystem.from_model(model, lam, N, cert)
    log_f, sgn_f, _, _ = lagrange_products(sys)
    kb = -lam * sgn_f * np.exp(log_f)
    if np.all(kb.imag == 0.0):
        kb = kb.real.copy()
    b = model.b[:N]
    _check_nonzero(kb, "product")
    bars = _term_relerr(N) * np.abs(kb)
    return GainEstimate(values=kb / b, roundoff=bars / b,
                        tail_log=_tail_log(model, lam, N), route="product")


def _certify(model, lam, cert):
    if cert is None:
        cert = dist_alpha(model, lam)
    return cert.require_nonresonant()


def _check_nonzero(kb: np.ndarray, route: str, floor: float = 0.0) -> None:
    worst = float(np.min(np.abs(kb)))
    if worst <= floor:
        n = int(np.argmin(np.abs(kb))) + 1
        raise GainFloorError(
            f"gain k_{n} b_{n} = {worst} at or below floor {floor} ({route} route); "
            "the transformation would not invert")


def gain_floor(lam: float, alpha: float, dist: float, c_hat: float) -> float:
    """Alarm threshold 0.5 lambda exp(-c_hat lambda^(1/alpha)) dist.

    c_hat is the empirically fitted exponent constant of the gain lower bound;
    callers without a fit should pass their sweep's calibrated value.
    """
    return 0.5 * lam * math.exp(-c_hat * lam ** (1.0 / alpha)) * dist


@dataclass(frozen=True)
class BacksteppingSynthesis:
    model: SpectrumModel
    lam: float
    N: int
    cert: DistCertificate
    b: np.ndarray
    k: np.ndarray
    kb: np.ndarray
    T_mat: np.ndarray
    Tinv_mat: np.ndarray
    cauchy_mat: np.ndarray
    cauchy_inv: np.ndarray
    tb_residuals: np.ndarray
    gain_tail_log: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.model.eigenvalues[:self.N]

    @property
    def tb_residual_max(self) -> float:
        return float(np.max(self.tb_residuals))

    def closed_loop(self) -> np.ndarray:
        """A + B K at truncation: diag(lambda_n) + outer(b, k)."""
        return np.diag(self.eigenvalues) + np.outer(self.b.astype(complex), self.k)


def tb_residual(synth: BacksteppingSynthesis, j: int) -> float:
    """|sum_n k_n b_n / (lambda_j - lambda_n - lambda) - 1| for mode j."""
    if not 1 <= j <= synth.N:
        raise ValueError("mode index out of range")
    return float(synth.tb_residuals[j - 1])


def _tb_residuals(cauchy_mat: np.ndarray, kb: np.ndarray) -> np.ndarray:
    N = kb.size
    out = np.empty(N)
    for j in range(N):
        order = np.argsort(np.abs(np.arange(N) - j), kind="stable")
        terms = cauchy_mat[j, order] * kb[order]
        out[j] = abs(csum(terms) - 1.0)
    return out


def assemble(model: SpectrumModel, lam: float, N: int,
             cert: DistCertificate | None = None,
             floor: float = 0.0) -> BacksteppingSynthesis:
    """Build the full synthesis and verify its internal identities.

    Gains come from the product route; `floor`, when positive, arms the
    zero-gain alarm at that threshold (use `gain_floor` with a fitted
    exponent).  Raises if T . T^-1 drifts from the identity beyond the
    assembly alarm tolerance.
    """
    cert = _certify(model, lam, cert)
    sys = CauchySystem.from_model(model, lam, N, cert)
    cmat = build_cauchy(sys)
    cinv = explicit_inverse(sys)
    gains = feedback_gains_product(model, lam, N, cert)
    k = gains.values
    b = model.b[:N]
    kb = k * b
    _check_nonzero(kb, "product", floor)

    T = b[:, None] * cmat * k[None, :]
    Tinv = (1.0 / k)[:, None] * cinv * (1.0 / b)[None, :]
    tb = _tb_residuals(cmat, kb)

    synth = BacksteppingSynthesis(model=model, lam=float(lam), N=N, cert=cert,
                                  b=b, k=k, kb=kb, T_mat=T, Tinv_mat=Tinv,
                                  cauchy_mat=cmat, cauchy_inv=cinv,
                                  tb_residuals=tb, gain_tail_log=gains.tail_log)
    resid = inverse_residual(synth)
    if resid > _ASSEMBLY_TOL:
        raise CertificationError(f"T . T^-1 residual {resid} exceeds assembly tolerance")
    return synth


def inverse_residual(synth: BacksteppingSynthesis) -> float:
    """max-norm of T . T^-1 - I at truncation."""
    eye = np.eye(synth.N)
    return float(np.max(np.abs(synth.T_mat @ synth.Tinv_mat - eye)))


def factorization_residual(synth: BacksteppingSynthesis) -> float:
    """Entrywise defect of T against k_n b_p / (lambda_p - lambda_n - lambda)."""
    lam_p = synth.eigenvalues[:, None]
    lam_n = synth.eigenvalues[None, :]
    table = synth.k[None, :] * synth.b[:, None] / (lam_p - lam_n - synth.lam)
    scale = float(np.max(np.abs(table))) or 1.0
    return float(np.max(np.abs(synth.T_mat - table))) / scale


@dataclass(frozen=True)
class ChiFunction:
    """Closed-loop eigenfunction coefficients: chi_n[p] = b_p/(lambda_p - lambda_n + lambda)."""
    n: int
    coeffs: np.ndarray


def chi(model: SpectrumModel, lam: float, n: int, N: int,
        cert: DistCertificate | None = None) -> ChiFunction:
    cert = _certify(model, lam, cert)
    if not 1 <= n <= N:
        raise ValueError("mode index out of range")
    lam_p = model.eigenvalues[:N]
    denom = lam_p - model.eigenvalue(n) + lam
    coeffs = model.b[:N] / denom
    if np.all(coeffs.imag == 0.0):
        coeffs = coeffs.real.copy()
    return ChiFunction(n=n, coeffs=coeffs)


@dataclass(frozen=True)
class ClosedLoopCheck:
    n: int
    k_on_chi: complex
    collinearity_defect: float
    eigen_defect: float


def verify_closed_loop_eigen(synth: BacksteppingSynthesis, n: int) -> ClosedLoopCheck:
    """Diagnostics for chi_n: <K, chi_n> (expect -1), collinearity of T chi_n
    with phi_n, and the eigenvector defect of A + BK at truncation."""
    cf = chi(synth.model, synth.lam, n, synth.N, synth.cert)
    v = cf.coeffs
    k_on_chi = csum(synth.k * v)

    tchi = synth.T_mat @ v
    aligned = np.zeros_like(tchi)
    aligned[n - 1] = tchi[n - 1]
    norm_t = float(np.linalg.norm(tchi))
    coll = float(np.linalg.norm(tchi - aligned)) / norm_t if norm_t else 0.0

    lam_p = synth.eigenvalues
    target = synth.model.eigenvalue(n) - synth.lam
    resid = lam_p * v + synth.b * k_on_chi - target * v
    eig = float(np.linalg.norm(resid)) / float(np.linalg.norm(v))
    return ClosedLoopCheck(n=n, k_on_chi=k_on_chi, collinearity_defect=coll, eigen_defect=eig)


def operator_identity_residual(synth: BacksteppingSynthesis) -> float:
    """Relative max-norm defect of T (A + BK) = (A - lambda I) T at truncation."""
    A = np.diag(synth.eigenvalues)
    lhs = synth.T_mat @ (A + np.outer(synth.b.astype(complex), synth.k))
    rhs = (A - synth.lam * np.eye(synth.N)) @ synth.T_mat
    scale = float(np.max(np.abs(rhs))) or 1.0
    return float(np.max(np.abs(lhs - rhs))) / scale


# ---------------------------------------------------------------------------
# operator norms

DENSE_SVD_LIMIT = 512


def spectral_norm(mat: np.ndarray, rel_tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value: dense SVD up to 512, power iteration beyond."""
    n = mat.shape[0]
    if n <= DENSE_SVD_LIMIT:
        return float(np.linalg.svd(mat, compute_uv=False)[0])
    x = np.ones(n) / math.sqrt(n)
    prev = 0.0
    for _ in range(max_iter):
        y = mat @ x
        x = mat.conj().T @ y
        sigma = math.sqrt(float(np.linalg.norm(x)))
        if abs(sigma - prev) <= rel_tol * sigma:
            break
        prev = sigma
        x = x / np.linalg.norm(x)
    return sigma


def weighted_norm(synth: BacksteppingSynthesis, mat: np.ndarray, s: float) -> float:
    """Operator norm in the |lambda_n|^s-weighted coordinates (D(A^s) analogue)."""
    w = np.abs(synth.eigenvalues) ** s
    return spectral_norm(w[:, None] * mat * (1.0 / w)[None, :])


def condition_number(synth: BacksteppingSynthesis) -> float:
    return spectral_norm(synth.T_mat) * spectral_norm(synth.Tinv_mat)


# ---------------------------------------------------------------------------
# serialization


def _scalar_json(z):
    z = complex(z)
    return z.real if z.imag == 0.0 else [z.real, z.imag]


def synthesis_to_json(synth: BacksteppingSynthesis) -> str:
    doc = {
        "lambda": synth.lam,
        "N": synth.N,
        "dist": synth.cert.dist,
        "k": [_scalar_json(v) for v in synth.k],
        "tb_residual_max": synth.tb_residual_max,
        "norms": {"T": spectral_norm(synth.T_mat), "Tinv": spectral_norm(synth.Tinv_mat)},
    }
    return json.dumps(doc, indent=2) + "\n"

"""Closed-loop semigroup simulation and the null-controllability schedule.

Propagation is exact per stage: the truncated closed-loop generator is
conjugated to the damped diagonal, so e^{t(A+BK)} y = T^-1 diag(e^{(l_n-l)t}) T y
with the assembled matrices; no ODE integrator touches the trajectory.  The
schedule applies the piecewise-constant feedback K_{lambda(N)} on intervals
delta_N = (T/L_sigma) lambda(N)^(-1/sigma), with lambda(N) certified inside
[N^gamma, N^gamma + C] and L_sigma the partial sum of lambda(p)^(-1/sigma)
closed with an integral tail bound (so the scheduled horizon ends strictly
before T, with the gap reported).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cauchy import csum, format_scalar
from .errors import DivergenceError, MathGuardError
from .spectrum import SpectrumModel, select_mu
from .transform import BacksteppingSynthesis, assemble
from .quantitative import linear_fit


@dataclass(frozen=True)
class StateVector:
    """Eigenbasis coordinates with an optional weighted-norm exponent."""
    coeffs: np.ndarray
    s_weight: float = 0.0


def state(coeffs, s: float = 0.0) -> StateVector:
    return StateVector(coeffs=np.asarray(coeffs), s_weight=float(s))


def norm_h(sv: StateVector) -> float:
    return float(np.linalg.norm(sv.coeffs))


def norm_weighted(sv: StateVector, model: SpectrumModel) -> float:
    """sqrt(sum |lambda_n|^(2s) |c_n|^2); equals the H norm at s = 0."""
    n = sv.coeffs.size
    w = np.abs(model.eigenvalues[:n]) ** sv.s_weight
    return float(np.linalg.norm(w * sv.coeffs))


def _mode_factors(synth: BacksteppingSynthesis, t: float) -> np.ndarray:
    return np.exp((synth.eigenvalues - synth.lam) * t)


def propagate(synth: BacksteppingSynthesis, sv: StateVector, t: float) -> StateVector:
    """Exact closed-loop propagation T^-1 diag(e^{(lambda_n - lambda) t}) T y."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if sv.coeffs.size != synth.N:
        raise ValueError(f"state length {sv.coeffs.size} mismatches truncation {synth.N}")
    w = synth.T_mat @ sv.coeffs
    out = synth.Tinv_mat @ (_mode_factors(synth, t) * w)
    if np.isrealobj(synth.T_mat) and np.isrealobj(sv.coeffs):
        out = out.real if np.iscomplexobj(out) else out
    return StateVector(coeffs=out, s_weight=sv.s_weight)


def control_signal(synth: BacksteppingSynthesis, sv: StateVector, t: float):
    """u(t) = sum_n k_n <y(t), phi_n> along the truncated trajectory."""
    y = propagate(synth, sv, t)
    u = csum(synth.k * y.coeffs)
    return u


@dataclass(frozen=True)
class DecayReport:
    C_hat: float
    rate_hat: float | None


def measure_decay(synth: BacksteppingSynthesis, sv: StateVector, t_grid) -> DecayReport:
    """Transient constant and fitted exponential rate over a time grid.

    C_hat = max_t e^{lambda t} ||y(t)|| / ||y0||, which never exceeds the
    condition number of T at truncation; rate_hat is the log-linear fit of
    ||y(t)|| (None on the zero trajectory).
    """
    ts = [float(t) for t in t_grid]
    if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("time grid must be nonempty and increasing")
    n0 = norm_h(sv)
    if n0 == 0.0:
        return DecayReport(C_hat=0.0, rate_hat=None)
    w = synth.T_mat @ sv.coeffs
    norms = []
    for t in ts:
        y = synth.Tinv_mat @ (_mode_factors(synth, t) * w)
        norms.append(float(np.linalg.norm(y)))
    C_hat = max(math.exp(synth.lam * t) * n / n0 for t, n in zip(ts, norms))
    fit = linear_fit(ts, [math.log(n) for n in norms]) if all(n > 0 for n in norms) else None
    return DecayReport(C_hat=C_hat, rate_hat=None if fit is None else fit[0])


# ---------------------------------------------------------------------------
# null-control schedule


@dataclass(frozen=True)
class Stage:
    index: int
    base: int               # integer ceil(index^gamma) fed to the mu selection
    lam: float
    dist: float
    delta: float
    t_start: float
    t_end: float
    synthesis: BacksteppingSynthesis = field(repr=False)


@dataclass(frozen=True)
class NullControlSchedule:
    model: SpectrumModel
    horizon: float
    gamma: float
    sigma: float
    trunc: int
    stages: tuple[Stage, ...]
    L_sigma: float
    tail_gap: float         # horizon - t_end of the last stage

    @property
    def t_end(self) -> float:
        return self.stages[-1].t_end


def stage_truncation(base_trunc: int, lam_max: float, alpha: float) -> int:
    """Resolve at least 4 lambda^(1/alpha) modes so the resonance window is covered."""
    return max(base_trunc, 4 * math.ceil(lam_max ** (1.0 / alpha)))


def build_schedule(model: SpectrumModel, horizon: float, gamma: float, sigma: float,
                   n_stages: int, trunc: int = 48) -> NullControlSchedule:
    alpha = model.alpha
    crit = alpha / (alpha - 1.0)
    if not sigma > crit:
        raise ValueError(f"sigma must exceed alpha/(alpha-1) = {crit} (got {sigma})")
    if not gamma > sigma:
        raise ValueError(f"gamma must exceed sigma (got gamma={gamma}, sigma={sigma})")
    if n_stages < 1:
        raise ValueError("need at least one stage")
    if horizon <= 0:
        raise ValueError("horizon must be positive")

    picks = []
    for k in range(1, n_stages + 1):
        base = math.ceil(k ** gamma - 1e-9)
        try:
            lam, cert = select_mu(model, base)
        except MathGuardError as exc:
            raise type(exc)(f"stage {k} (base {base}): {exc}") from exc
        picks.append((k, base, lam, cert))

    ratio = gamma / sigma
    partial = math.fsum(lam ** (-1.0 / sigma) for _, _, lam, _ in picks)
    tail = n_stages ** (1.0 - ratio) / (ratio - 1.0)   # integral bound, lambda(p) >= p^gamma
    L_sigma = partial + tail

    trunc_all = stage_truncation(trunc, picks[-1][2], alpha)
    if model.n_max < trunc_all:
        raise ValueError(f"model materializes {model.n_max} modes; schedule needs {trunc_all}")

    stages = []
    t = 0.0
    for k, base, lam, cert in picks:
        delta = (horizon / L_sigma) * lam ** (-1.0 / sigma)
        try:
            synth = assemble(model, lam, trunc_all, cert)
        except MathGuardError as exc:
            raise type(exc)(f"stage {k} (lambda {lam}): {exc}") from exc
        stages.append(Stage(index=k, base=base, lam=lam, dist=cert.dist, delta=delta,
                            t_start=t, t_end=t + delta, synthesis=synth))
        t += delta
    return NullControlSchedule(model=model, horizon=horizon, gamma=gamma, sigma=sigma,
                               trunc=trunc_all, stages=tuple(stages), L_sigma=L_sigma,
                               tail_gap=horizon - t)


@dataclass(frozen=True)
class StageRecord:
    index: int
    lam: float
    delta: float
    norm_in: float
    norm_out: float
    norm_out_weighted: float
    contraction_log: float     # log(norm_out / norm_in)
    max_u: float


@dataclass(frozen=True)
class NullControlReport:
    records: tuple[StageRecord, ...]
    final_ratio: float
    final_ratio_weighted: float
    samples: tuple[tuple[float, float, float, complex], ...]   # (t, norm_H, norm_s, u)


def run_null_control(schedule: NullControlSchedule, sv: StateVector,
                     samples_per_stage: int = 16,
                     growth_c_hat: float | None = None,
                     growth_C_hat: float = 10.0) -> NullControlReport:
    """Drive the state through every stage, recording norms and control size.

    With `growth_c_hat` set, a stage whose norm growth exceeds
    growth_C_hat * exp(growth_c_hat * lambda^(1/alpha)) raises the divergence
    alarm: the certified transient factor cannot explain such growth.
    """
    if sv.coeffs.size != schedule.trunc:
        raise ValueError(f"state length {sv.coeffs.size} mismatches schedule truncation {schedule.trunc}")
    alpha = schedule.model.alpha
    y = sv
    n_in0 = norm_h(sv)
    records = []
    samples = []
    for st in schedule.stages:
        synth = st.synthesis
        n_in = norm_h(y)
        max_u = 0.0
        for q in range(samples_per_stage):
            tau = st.delta * q / samples_per_stage
            yt = propagate(synth, y, tau)
            u = csum(synth.k * yt.coeffs)
            max_u = max(max_u, abs(u))
            samples.append((st.t_start + tau, norm_h(yt),
                            norm_weighted(yt, schedule.model), complex(u)))
        y = propagate(synth, y, st.delta)
        n_out = norm_h(y)
        if growth_c_hat is not None and n_in > 0.0:
            limit = growth_C_hat * math.exp(growth_c_hat * st.lam ** (1.0 / alpha))
            if n_out > limit * n_in:
                raise DivergenceError(
                    f"stage {st.index} grew the norm by {n_out / n_in}, beyond the certified "
                    f"factor {limit}")
        contraction = math.log(n_out / n_in) if n_in > 0 and n_out > 0 else float("-inf")
        records.append(StageRecord(index=st.index, lam=st.lam, delta=st.delta,
                                   norm_in=n_in, norm_out=n_out,
                                   norm_out_weighted=norm_weighted(y, schedule.model),
                                   contraction_log=contraction, max_u=max_u))
    samples.append((schedule.t_end, norm_h(y), norm_weighted(y, schedule.model), 0.0 + 0.0j))
    n_w0 = norm_weighted(sv, schedule.model)
    return NullControlReport(
        records=tuple(records),
        final_ratio=norm_h(y) / n_in0 if n_in0 > 0 else 0.0,
        final_ratio_weighted=(norm_weighted(y, schedule.model) / n_w0) if n_w0 > 0 else 0.0,
        samples=tuple(samples))


# ---------------------------------------------------------------------------
# serialization


def write_trajectory_csv(rows, path) -> None:
    """rows: iterable of (t, norm_H, norm_s, u); u printed as re+imi when complex."""
    lines = ["t,norm_H,norm_s,u"]
    for t, nh, ns, u in rows:
        lines.append(",".join([format_scalar(t), format_scalar(nh),
                               format_scalar(ns), format_scalar(u)]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def schedule_manifest_json(schedule: NullControlSchedule) -> str:
    doc = {
        "gamma": schedule.gamma,
        "sigma": schedule.sigma,
        "horizon": schedule.horizon,
        "stages": [{"N": st.index, "lambda": st.lam, "delta": st.delta, "t_start": st.t_start}
                   for st in schedule.stages],
    }
    return json.dumps(doc, indent=2) + "\n"

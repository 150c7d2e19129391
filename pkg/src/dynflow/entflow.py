"""Boltzmann entropy on node measures, entropy growth bounds along the
flows, the backward variational inequality for the dual flow, and the
dynamic-convexity functional along displacement interpolations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mmspace, transport
from .mmspace import SpaceSpec
from .propagate import MeasureVec, SchemeConfig, Trajectory, dual_flow

__all__ = [
    "EntropyRecord", "entropy", "field_entropy", "entropy_bounds_check",
    "evi_minus_check", "dynamic_convexity_check",
]


@dataclass(frozen=True)
class EntropyRecord:
    t: float
    S: float
    finite: bool


def _xlogx(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    pos = u > 0.0
    out[pos] = u[pos] * np.log(u[pos])
    return out


def entropy(spec: SpaceSpec, mu: MeasureVec, t: float) -> EntropyRecord:
    """Relative entropy of mu against the node measure at time t."""
    m = mmspace.node_measures(spec, t)
    u = mu.masses / m
    s = float(np.sum(_xlogx(u) * m))
    return EntropyRecord(t=t, S=s, finite=bool(np.isfinite(s)))


def field_entropy(spec: SpaceSpec, u: np.ndarray, t: float) -> float:
    """Entropy functional of a nonnegative density field (not necessarily
    normalized): integral of u log u against the time-t measure."""
    if np.min(u) < -1e-12:
        raise ValueError(f"negative density {np.min(u):.3e}; scheme misuse")
    m = mmspace.node_measures(spec, t)
    return float(np.sum(_xlogx(np.clip(u, 0.0, None)) * m))


def entropy_bounds_check(spec: SpaceSpec, trajectories: dict, s: float,
                         t: float) -> dict:
    """Entropy growth bounds along stored heat / adjoint trajectories.

    forward: S_t(u_t) <= exp(L (t-s)) * S_s(u_s).  The classical Gronwall
    argument behind this needs the entropy integrand pointwise nonnegative
    (data bounded below by 1 suffices, since lower bounds are preserved);
    for data dipping below 1 on shrinking geometries the stated inequality
    can genuinely fail, and the flag reports that honestly.

    adjoint: S_s(v_s) <= S_t(v_t) + L * int_s^t (int v_r dm_r) dr.
    """
    report: dict = {"checks": []}
    L = spec.L

    heat: Trajectory | None = trajectories.get("heat")
    if heat is not None:
        n_steps = heat.times.size - 1
        tol = 1e-6 + 10.0 / n_steps
        s_s = field_entropy(spec, heat.at(s), s)
        s_t = field_entropy(spec, heat.at(t), t)
        rhs = math.exp(L * (t - s)) * s_s
        scale = max(1.0, abs(s_s), abs(s_t))
        report["checks"].append({
            "check": "entropy_forward", "lhs": s_t, "rhs": rhs,
            "tol": tol, "ok": bool(s_t <= rhs + tol * scale)})

    adjoint: Trajectory | None = trajectories.get("adjoint")
    if adjoint is not None:
        n_steps = adjoint.times.size - 1
        tol = 1e-6 + 10.0 / n_steps
        masses = [float(np.sum(np.clip(v, 0.0, None)
                               * mmspace.node_measures(spec, r)))
                  for r, v in zip(adjoint.times, adjoint.values)]
        quad = float(np.trapezoid(masses, adjoint.times))
        s_s = field_entropy(spec, adjoint.at(s), s)
        s_t = field_entropy(spec, adjoint.at(t), t)
        rhs = s_t + L * quad
        scale = max(1.0, abs(s_s), abs(s_t), quad)
        report["checks"].append({
            "check": "entropy_adjoint", "lhs": s_s, "rhs": rhs,
            "tol": tol, "ok": bool(s_s <= rhs + tol * scale)})

    report["ok"] = all(c["ok"] for c in report["checks"])
    return report


def evi_minus_check(spec: SpaceSpec, mu: MeasureVec, sigma: MeasureVec,
                    t: float, delta_list, cfg: SchemeConfig | None = None,
                    w_knots: int = 6, w_outer: int = 2) -> dict:
    """Backward variational inequality for the dual flow at time t:

    (1/2) d/ds^- W_{s,t}^2(mu_s, sigma) at s = t- must dominate
    S_t(mu_t) - S_t(sigma), where mu_s is the dual flow of mu.

    The one-sided derivative is approximated on the shrinking ladder
    delta_list and linearly extrapolated to 0.
    """
    tau = mu.t_tag
    if not t < tau:
        raise ValueError("need t < the measure's time tag")
    deltas = sorted(float(d) for d in delta_list)
    if not deltas or deltas[0] <= 0:
        raise ValueError("delta_list must contain positive steps")
    if t - deltas[-1] <= spec.t_min:
        raise ValueError("delta ladder leaves the time interval")
    if cfg is None:
        cfg = SchemeConfig(method="implicit_euler", n_steps=64)

    mu_t = dual_flow(spec, mu, tau, t, cfg)
    w_t = transport.wasserstein(spec, mu_t, sigma, t).W
    rhs = entropy(spec, mu_t, t).S - entropy(spec, sigma, t).S

    per_delta = []
    flux_floor = 0.0
    for d in deltas:
        s = t - d
        mu_s = dual_flow(spec, mu_t, t, s, cfg)
        wst = transport.w_st(spec, mu_s, sigma, s, t,
                             k_knots=w_knots, n_outer=w_outer)
        lhs = (w_t * w_t - wst["W_st_sq"]) / (2.0 * d)
        per_delta.append({"delta": d, "lhs": lhs, "W_st_sq": wst["W_st_sq"]})
        if d == deltas[0]:
            # atomic-transport quantization: moving the flux budget across
            # one cell costs ~ flux * h^2, a floor below which the
            # difference quotient cannot resolve the continuum slope
            h2 = float(np.max(mmspace.edge_lengths(spec, t))) ** 2
            flux = float(np.sum(np.abs(np.cumsum(mu_s.masses - mu_t.masses))))
            flux_floor = flux * h2 / d

    if len(per_delta) >= 2:
        d0, d1 = per_delta[0]["delta"], per_delta[1]["delta"]
        f0, f1 = per_delta[0]["lhs"], per_delta[1]["lhs"]
        lhs_ext = f0 + (f0 - f1) * d0 / (d1 - d0)
    else:
        lhs_ext = per_delta[0]["lhs"]

    scale = max(1.0, abs(rhs), w_t * w_t,
                max(abs(p["lhs"]) for p in per_delta))
    tol = 1e-3 * scale + flux_floor
    return {"lhs": lhs_ext, "rhs": rhs, "per_delta": per_delta, "tol": tol,
            "quantization_floor": flux_floor,
            "ok": bool(lhs_ext >= rhs - tol)}


def dynamic_convexity_check(spec: SpaceSpec, mu0: MeasureVec, mu1: MeasureVec,
                            t: float, N: float, a_grid: int = 33,
                            delta: float | None = None) -> dict:
    """Convexity-in-time functional along the displacement interpolation:

    boundary slope difference of a -> S_t(mu^a) must dominate
    -(1/2) d/dt^- W_t^2(mu0, mu1) + (1/N) |S_t(mu0) - S_t(mu1)|^2.
    """
    spec.check_time(t)
    if a_grid < 5:
        raise ValueError("a_grid must have at least 5 points")
    if delta is None:
        delta = 0.02 * (spec.t_max - spec.t_min)
    if t - 2.0 * delta < spec.t_min:
        raise ValueError("backward differencing leaves the time interval")

    a_vals = np.linspace(0.0, 1.0, a_grid)
    ent = np.empty(a_grid)
    for k, a in enumerate(a_vals):
        mv = transport.displacement_geodesic(spec, mu0, mu1, t, float(a))
        rec = entropy(spec, mv, t)
        if not rec.finite:
            raise ValueError("entropy infinite along the interpolation")
        ent[k] = rec.S
    da = a_vals[1] - a_vals[0]
    slope_1 = (3.0 * ent[-1] - 4.0 * ent[-2] + ent[-3]) / (2.0 * da)
    slope_0 = (-3.0 * ent[0] + 4.0 * ent[1] - ent[2]) / (2.0 * da)
    lhs = slope_1 - slope_0

    w2 = {}
    for dt_ in (0.0, delta, 2.0 * delta):
        w = transport.wasserstein(spec, mu0, mu1, t - dt_).W
        w2[dt_] = w * w
    d_one = (w2[0.0] - w2[delta]) / delta
    d_two = (w2[0.0] - w2[2.0 * delta]) / (2.0 * delta)
    dt_w2 = 2.0 * d_one - d_two  # one-sided derivative, extrapolated

    s0, s1 = ent[0], ent[-1]
    n_term = 0.0 if math.isinf(N) else (s0 - s1) ** 2 / N
    rhs = -0.5 * dt_w2 + n_term
    margin = lhs - rhs
    scale = max(1.0, abs(s0), abs(s1), w2[0.0], abs(dt_w2))
    tol = 1e-2 * scale
    return {"lhs": lhs, "rhs": rhs, "margin": margin, "tol": tol,
            "dt_w2": dt_w2, "entropies": ent.tolist(),
            "ok": bool(margin >= -tol)}

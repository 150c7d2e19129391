"""Time-stepping solvers for the heat equation, its adjoint, and the dual
flow on probability measures, plus the diagnostic identities they satisfy.

Scheme: theta-steps u+ = (I - theta*d*Delta)^(-1) (I + (1-theta)*d*Delta) u
with the generator frozen at each step midpoint.  theta = 1 is implicit
Euler (positivity preserving), theta = 1/2 is Crank-Nicolson (second
order).  The adjoint is by default the exact discrete adjoint of the
forward scheme with respect to the endpoint measures, which makes the
duality pairing an identity up to round-off; the stated backward PDE is
available as a cross-check mode.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import mmspace, operators
from ._banded import solve_cyclic_tridiag, solve_tridiag
from .mmspace import SpaceSpec, Topology

__all__ = [
    "Method", "AdjointMode", "SchemeConfig", "MeasureVec", "Trajectory",
    "heat_forward", "heat_forward_matrix", "adjoint_backward", "dual_flow",
    "heat_kernel", "lp_norm_report", "energy_decay_check",
    "commutator_residual", "evi_energy_check", "rk4_reference",
]


class Method(str, enum.Enum):
    IMPLICIT_EULER = "implicit_euler"
    CRANK_NICOLSON = "crank_nicolson"


class AdjointMode(str, enum.Enum):
    DISCRETE_ADJOINT = "discrete_adjoint"
    DIRECT_PDE = "direct_pde"


@dataclass(frozen=True)
class SchemeConfig:
    method: Method = Method.CRANK_NICOLSON
    n_steps: int = 64
    adjoint_mode: AdjointMode = AdjointMode.DISCRETE_ADJOINT

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "adjoint_mode", AdjointMode(self.adjoint_mode))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def theta(self) -> float:
        return 1.0 if self.method is Method.IMPLICIT_EULER else 0.5


@dataclass(frozen=True)
class MeasureVec:
    """A probability measure on nodes, stored as absolute masses."""
    masses: np.ndarray
    t_tag: float

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "masses", m)
        if np.min(m) < -1e-12:
            raise ValueError(f"negative mass {np.min(m):.3e}")
        if abs(float(np.sum(m)) - 1.0) > 1e-9:
            raise ValueError(f"masses sum to {np.sum(m)!r}, expected 1")

    @staticmethod
    def from_weights(weights, t: float) -> "MeasureVec":
        w = np.asarray(weights, dtype=float)
        total = float(np.sum(w))
        if total <= 0:
            raise ValueError("weights must have positive total mass")
        return MeasureVec(masses=w / total, t_tag=t)

    @staticmethod
    def point_mass(n: int, node: int, t: float) -> "MeasureVec":
        m = np.zeros(n)
        m[node] = 1.0
        return MeasureVec(masses=m, t_tag=t)

    def density(self, spec: SpaceSpec) -> np.ndarray:
        return self.masses / mmspace.node_measures(spec, self.t_tag)


@dataclass(frozen=True)
class Trajectory:
    """Ordered time knots with per-knot node vectors (fields or masses)."""
    times: np.ndarray
    values: np.ndarray  # (len(times), n)
    kind: str = "field"

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no trajectory knot at t={t}")
        return self.values[k]


# ---------------------------------------------------------------------------
# single theta-step machinery
# ---------------------------------------------------------------------------

def _step_operator(spec: SpaceSpec, t_mid: float, delta: float, theta: float,
                   zero_order: np.ndarray | None = None):
    """Implicit/explicit matrices of one step, in banded form.

    Returns (solve_A, apply_C) for A = M - theta*delta*(L - M*Phi) and
    C = M + (1-theta)*delta*(L - M*Phi) where L is the edge Laplacian at
    t_mid and Phi = diag(zero_order) an optional reaction coefficient.
    """
    gen = operators.assemble_generator(spec, t_mid)
    w = gen.edge_conductance
    m = gen.node_measure
    deg = gen.degree()
    phi = np.zeros(spec.n) if zero_order is None else zero_order

    diag_A = m + theta * delta * (deg + m * phi)
    cyc = spec.topology is Topology.CYCLE
    if cyc:
        off_A = -theta * delta * w[:-1]
        corner_A = -theta * delta * w[-1]
    else:
        off_A = -theta * delta * w
        corner_A = 0.0

    i, j = gen.edge_nodes()
    c2 = (1.0 - theta) * delta

    def apply_L(u):
        flux = w * (u[j] - u[i]) if u.ndim == 1 else w[:, None] * (u[j] - u[i])
        out = np.zeros_like(u)
        np.add.at(out, i, flux)
        np.add.at(out, j, -flux)
        return out

    def apply_C(u):
        mu = m * u if u.ndim == 1 else m[:, None] * u
        if c2 == 0.0:
            return mu
        react = m * phi * u if u.ndim == 1 else (m * phi)[:, None] * u
        return mu + c2 * (apply_L(u) - react)

    if cyc:
        def solve_A(b):
            return solve_cyclic_tridiag(diag_A, off_A, corner_A, b)
    else:
        def solve_A(b):
            return solve_tridiag(diag_A, off_A, off_A, b)

    return solve_A, apply_C


def _grid(s: float, t: float, n_steps: int) -> np.ndarray:
    return np.linspace(s, t, n_steps + 1)


# ---------------------------------------------------------------------------
# forward heat flow
# ---------------------------------------------------------------------------

def heat_forward(spec: SpaceSpec, h: np.ndarray, s: float, t: float,
                 cfg: SchemeConfig, return_trajectory: bool = False):
    """Propagate the initial field h from time s to time t."""
    spec.check_time(s)
    spec.check_time(t)
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    u = np.array(h, dtype=float)
    grid = _grid(s, t, cfg.n_steps)
    knots = [u.copy()] if return_trajectory else None
    for k in range(cfg.n_steps):
        delta = grid[k + 1] - grid[k]
        solve_A, apply_C = _step_operator(
            spec, 0.5 * (grid[k] + grid[k + 1]), delta, cfg.theta)
        u = solve_A(apply_C(u))
        if return_trajectory:
            knots.append(u.copy())
    if return_trajectory:
        return u, Trajectory(times=grid, values=np.array(knots), kind="field")
    return u


def heat_forward_matrix(spec: SpaceSpec, s: float, t: float,
                        cfg: SchemeConfig) -> np.ndarray:
    """Matrix of the solution operator from s to t (columns = unit fields)."""
    spec.check_time(s)
    spec.check_time(t)
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    U = np.eye(spec.n)
    grid = _grid(s, t, cfg.n_steps)
    for k in range(cfg.n_steps):
        delta = grid[k + 1] - grid[k]
        solve_A, apply_C = _step_operator(
            spec, 0.5 * (grid[k] + grid[k + 1]), delta, cfg.theta)
        U = solve_A(apply_C(U))
    return U


def rk4_reference(spec: SpaceSpec, h: np.ndarray, s: float, t: float,
                  n_steps: int) -> np.ndarray:
    """Dense classical RK4 integration of du/dt = Delta_t u (oracle use)."""
    u = np.array(h, dtype=float)
    grid = _grid(s, t, n_steps)
    for k in range(n_steps):
        a, b = grid[k], grid[k + 1]
        d = b - a
        g1 = operators.assemble_generator(spec, a)
        g2 = operators.assemble_generator(spec, 0.5 * (a + b))
        g3 = operators.assemble_generator(spec, b)
        k1 = operators.laplacian_apply(g1, u)
        k2 = operators.laplacian_apply(g2, u + 0.5 * d * k1)
        k3 = operators.laplacian_apply(g2, u + 0.5 * d * k2)
        k4 = operators.laplacian_apply(g3, u + d * k3)
        u = u + (d / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


# ---------------------------------------------------------------------------
# adjoint flow
# ---------------------------------------------------------------------------

def adjoint_backward(spec: SpaceSpec, g: np.ndarray, t: float, s: float,
                     cfg: SchemeConfig, return_trajectory: bool = False):
    """Solve backward from the terminal field g at t down to s.

    discrete_adjoint mode returns the exact adjoint of heat_forward with
    respect to the endpoint measures, so the duality pairing holds to
    round-off.  direct_pde mode steps the backward equation
    d v/ds = -Delta_s v + phi_s v with phi_s = -d(log m_s)/ds.
    """
    spec.check_time(s)
    spec.check_time(t)
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    grid = _grid(s, t, cfg.n_steps)

    if cfg.adjoint_mode is AdjointMode.DISCRETE_ADJOINT:
        w = mmspace.node_measures(spec, t) * np.asarray(g, dtype=float)
        knots = [w / mmspace.node_measures(spec, t)] if return_trajectory else None
        for k in range(cfg.n_steps - 1, -1, -1):
            delta = grid[k + 1] - grid[k]
            solve_A, apply_C = _step_operator(
                spec, 0.5 * (grid[k] + grid[k + 1]), delta, cfg.theta)
            # step matrix B = A^{-1} C with A, C symmetric: B^T = C A^{-1}
            w = apply_C(solve_A(w))
            if return_trajectory:
                knots.append(w / mmspace.node_measures(spec, grid[k]))
        v = w / mmspace.node_measures(spec, s)
    else:
        v = np.array(g, dtype=float)
        knots = [v.copy()] if return_trajectory else None
        for k in range(cfg.n_steps - 1, -1, -1):
            delta = grid[k + 1] - grid[k]
            t_mid = 0.5 * (grid[k] + grid[k + 1])
            phi = mmspace.log_measure_dot(spec, t_mid)
            solve_A, apply_C = _step_operator(spec, t_mid, delta, cfg.theta,
                                              zero_order=phi)
            v = solve_A(apply_C(v))
            if return_trajectory:
                knots.append(v.copy())

    if return_trajectory:
        return v, Trajectory(times=grid, values=np.array(knots[::-1]), kind="field")
    return v


def duality_gap(spec: SpaceSpec, h: np.ndarray, g: np.ndarray, s: float,
                t: float, cfg: SchemeConfig) -> float:
    """<P h, g>_{m_t} - <h, P* g>_{m_s}; zero to round-off in adjoint mode."""
    ph = heat_forward(spec, h, s, t, cfg)
    pg = adjoint_backward(spec, g, t, s, cfg)
    mt = mmspace.node_measures(spec, t)
    ms = mmspace.node_measures(spec, s)
    return float(np.sum(ph * g * mt) - np.sum(h * pg * ms))


def dual_flow(spec: SpaceSpec, mu: MeasureVec, t: float, s: float,
              cfg: SchemeConfig, return_trajectory: bool = False):
    """Transport a probability measure backward from t to s; preserves mass."""
    if abs(mu.t_tag - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"measure tagged {mu.t_tag}, expected {t}")
    g = mu.density(spec)
    if return_trajectory:
        v, traj = adjoint_backward(spec, g, t, s, cfg, return_trajectory=True)
        masses = traj.values * np.array(
            [mmspace.node_measures(spec, r) for r in traj.times])
        out = MeasureVec.from_weights(np.clip(v, 0.0, None) * mmspace.node_measures(spec, s), s)
        return out, Trajectory(times=traj.times, values=masses, kind="measure")
    v = adjoint_backward(spec, g, t, s, cfg)
    return MeasureVec.from_weights(np.clip(v, 0.0, None) * mmspace.node_measures(spec, s), s)


def heat_kernel(spec: SpaceSpec, s: float, t: float, cfg: SchemeConfig) -> np.ndarray:
    """Kernel p[x, y] with (P h)(x) = sum_y p[x, y] h(y) m_s(y)."""
    P = heat_forward_matrix(spec, s, t, cfg)
    return P / mmspace.node_measures(spec, s)[None, :]


# ---------------------------------------------------------------------------
# diagnostics and a-priori estimates
# ---------------------------------------------------------------------------

def _lp_norm(u: np.ndarray, m: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(u)))
    return float(np.sum(np.abs(u) ** p * m) ** (1.0 / p))


def lp_norm_report(spec: SpaceSpec, s: float, t: float, cfg: SchemeConfig,
                   trials: int, seed: int = 0) -> dict:
    """Empirical operator-norm ratios of the flow against the growth bounds
    exp(L (t-s) / p) (forward) and their adjoint counterparts."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    ms = mmspace.node_measures(spec, s)
    mt = mmspace.node_measures(spec, t)
    dt = t - s
    bounds = {
        ("P", 1.0): math.exp(spec.L * dt),
        ("P", 2.0): math.exp(spec.L * dt / 2.0),
        ("P", math.inf): 1.0,
        ("P*", 1.0): 1.0,
        ("P*", 2.0): math.exp(spec.L * dt / 2.0),
        ("P*", math.inf): math.exp(spec.L * dt),
    }
    ratios = {key: 0.0 for key in bounds}
    for _ in range(trials):
        h = np.abs(rng.standard_normal(spec.n)) + 1e-3
        ph = heat_forward(spec, h, s, t, cfg)
        g = np.abs(rng.standard_normal(spec.n)) + 1e-3
        pg = adjoint_backward(spec, g, t, s, cfg)
        for p in (1.0, 2.0, math.inf):
            ratios[("P", p)] = max(ratios[("P", p)],
                                   _lp_norm(ph, mt, p) / _lp_norm(h, ms, p))
            ratios[("P*", p)] = max(ratios[("P*", p)],
                                    _lp_norm(pg, ms, p) / _lp_norm(g, mt, p))
    rows = []
    for (op, p), bound in bounds.items():
        r = ratios[(op, p)]
        rows.append({"op": op, "p": p, "max_ratio": r, "bound": bound,
                     "ok": bool(r <= bound * (1.0 + 1e-9) + 1e-11)})
    return {"rows": rows, "ok": all(r["ok"] for r in rows)}


def energy_decay_check(spec: SpaceSpec, u_s: np.ndarray, s: float, tau: float,
                       cfg: SchemeConfig) -> dict:
    """Exponentially weighted energy-dissipation estimate along the flow:
    weighted terminal energy plus twice the weighted integral of the squared
    generator image must not exceed the weighted initial energy."""
    _, traj = heat_forward(spec, u_s, s, tau, cfg, return_trajectory=True)
    L = spec.L
    energies = []
    dissip = []
    for r, u in zip(traj.times, traj.values):
        gen = operators.assemble_generator(spec, r)
        energies.append(operators.dirichlet_energy(gen, u))
        du = operators.laplacian_apply(gen, u)
        dissip.append(math.exp(-3.0 * L * r)
                      * float(np.sum(du * du * gen.node_measure)))
    quad = float(np.trapezoid(dissip, traj.times))
    lhs = math.exp(-3.0 * L * tau) * energies[-1] + 2.0 * quad
    rhs = math.exp(-3.0 * L * s) * energies[0]
    tol = 1e-6 + 10.0 / cfg.n_steps
    ok = lhs <= rhs * (1.0 + tol) + 1e-12 * max(1.0, rhs)
    return {"lhs": lhs, "rhs": rhs, "tol": tol, "ok": bool(ok)}


def commutator_residual(spec: SpaceSpec, u: np.ndarray, g: np.ndarray,
                        sigma: float, tau: float, s: float, t: float,
                        cfg: SchemeConfig) -> dict:
    """Drift of the mixed energy pairing between a forward solution (from
    sigma) and a backward solution (from tau), against the bound
    L * exp(3(L+1)T) * [E_s(u_s) + E_t(v_t) + |v_t|^2] * sqrt(t-s)."""
    if not (sigma < s < t < tau):
        raise ValueError("need sigma < s < t < tau")
    u_s = heat_forward(spec, u, sigma, s, cfg)
    u_t = heat_forward(spec, u_s, s, t, cfg)
    v_t = adjoint_backward(spec, g, tau, t, cfg)
    v_s = adjoint_backward(spec, v_t, t, s, cfg)
    gen_s = operators.assemble_generator(spec, s)
    gen_t = operators.assemble_generator(spec, t)
    e_s = operators.dirichlet_energy(gen_s, u_s, v_s)
    e_t = operators.dirichlet_energy(gen_t, u_t, v_t)
    residual = abs(e_t - e_s)
    norm_vt = float(np.sum(v_t * v_t * gen_t.node_measure))
    const = spec.L * math.exp(3.0 * (spec.L + 1.0) * spec.t_max)
    size = (operators.dirichlet_energy(gen_s, u_s)
            + operators.dirichlet_energy(gen_t, v_t) + norm_vt)
    bound = const * size * math.sqrt(t - s)
    ok = residual <= bound + 1e-10 * max(1.0, size)
    return {"residual": residual, "bound": bound, "ok": bool(ok)}


def evi_energy_check(spec: SpaceSpec, traj: Trajectory, t: float,
                     w: np.ndarray) -> dict:
    """One-sided variational inequality for the energy along the flow:
    -(1/2) d/ds |u_s - w|^2_{s,t} + (L/4) |u_t - w|^2_t >= E_t(u_t)/2 - E_t(w)/2.

    The mixed norm |.|_{s,t} is approximated by the L2 norm of the measure
    at the midpoint time (s+t)/2; the derivative by a one-sided difference
    on the trajectory's own grid.
    """
    k = int(np.argmin(np.abs(traj.times - t)))
    if k == 0:
        raise ValueError("need a trajectory knot before t")
    s_prev = traj.times[k - 1]
    delta = t - s_prev
    u_t = traj.values[k]
    u_prev = traj.values[k - 1]
    m_t = mmspace.node_measures(spec, t)
    m_mid = mmspace.node_measures(spec, 0.5 * (s_prev + t))
    n_tt = float(np.sum((u_t - w) ** 2 * m_t))
    n_ts = float(np.sum((u_prev - w) ** 2 * m_mid))
    gen_t = operators.assemble_generator(spec, t)
    lhs = -0.5 * (n_tt - n_ts) / delta + 0.25 * spec.L * n_tt
    rhs = 0.5 * operators.dirichlet_energy(gen_t, u_t) \
        - 0.5 * operators.dirichlet_energy(gen_t, w)
    scale = max(1.0, abs(rhs), operators.dirichlet_energy(gen_t, u_t))
    tol = (1e-4 + 10.0 * delta) * scale
    return {"lhs": lhs, "rhs": rhs, "tol": tol, "ok": bool(lhs >= rhs - tol)}

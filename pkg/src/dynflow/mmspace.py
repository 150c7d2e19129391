"""Discretized time-dependent metric measure spaces on path and cycle graphs.

A space is a fixed node set with time-dependent edge lengths (realizing the
metric as shortest-path distance) and a time-dependent log-density against
the lumped 1-D volume.  Node volume is the half-sum of adjacent edge lengths,
so the node measure m_t(x) = exp(-f_t(x)) * vol_t(x) converges to the
weighted length measure of the continuum limit.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

__all__ = [
    "Topology", "SpaceSpec", "MetricSnapshot",
    "build_space", "metric_at", "validate_regularity", "k_transform",
    "k_transform_time_map", "fdot", "log_measure_dot",
    "edge_count", "edge_lengths", "node_positions", "node_volumes",
    "node_measures", "node_log_measure",
]


class Topology(enum.Enum):
    PATH = "path"
    CYCLE = "cycle"


@dataclass(frozen=True)
class SpaceSpec:
    """A discretized time-dependent metric measure space.

    edge_length(t, e) must be positive on the declared time interval;
    log_density(t, x) is the weight f_t(x) with m_t = exp(-f_t) * vol_t.
    L bounds |d log edge_length / dt| and |d f / dt|; C bounds |f| and the
    spatial Lipschitz constant of f.  (K, N) are the certification targets.
    """
    topology: Topology
    n: int
    t_min: float
    t_max: float
    edge_length: Callable[[float, int], float] = field(repr=False)
    log_density: Callable[[float, int], float] = field(repr=False)
    L: float
    C: float
    K: float = 0.0
    N: float = math.inf
    name: str = "custom"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"need at least 2 nodes, got n={self.n}")
        if not (0.0 < self.t_min < self.t_max):
            raise ValueError(
                f"time interval must satisfy 0 < t_min < t_max, "
                f"got ({self.t_min}, {self.t_max})")
        if self.L < 0 or self.C < 0:
            raise ValueError("L and C must be nonnegative")

    def check_time(self, t: float) -> None:
        if not (self.t_min <= t <= self.t_max):
            raise ValueError(
                f"time {t} outside interval [{self.t_min}, {self.t_max}]")


@dataclass(frozen=True)
class MetricSnapshot:
    t: float
    dist: np.ndarray          # (n, n) shortest-path distances
    node_measure: np.ndarray  # (n,)


def edge_count(spec: SpaceSpec) -> int:
    return spec.n if spec.topology is Topology.CYCLE else spec.n - 1


def edge_lengths(spec: SpaceSpec, t: float) -> np.ndarray:
    ell = np.array([spec.edge_length(t, e) for e in range(edge_count(spec))],
                   dtype=float)
    if np.any(ell <= 0.0) or not np.all(np.isfinite(ell)):
        raise ValueError(f"non-positive edge length at t={t}")
    return ell


def node_positions(spec: SpaceSpec, t: float) -> np.ndarray:
    """Arc-length coordinates of the nodes at time t (node 0 at 0)."""
    ell = edge_lengths(spec, t)
    pos = np.zeros(spec.n)
    if spec.topology is Topology.CYCLE:
        pos[1:] = np.cumsum(ell[:-1])
    else:
        pos[1:] = np.cumsum(ell)
    return pos


def node_volumes(spec: SpaceSpec, t: float) -> np.ndarray:
    """Lumped 1-D volume: half-sum of the edge lengths adjacent to a node."""
    ell = edge_lengths(spec, t)
    vol = np.zeros(spec.n)
    if spec.topology is Topology.CYCLE:
        vol += 0.5 * ell                 # edge e = (e, e+1 mod n)
        vol += 0.5 * np.roll(ell, 1)
    else:
        vol[:-1] += 0.5 * ell
        vol[1:] += 0.5 * ell
    return vol


def _log_density_vec(spec: SpaceSpec, t: float) -> np.ndarray:
    return np.array([spec.log_density(t, x) for x in range(spec.n)],
                    dtype=float)


def node_measures(spec: SpaceSpec, t: float) -> np.ndarray:
    return np.exp(-_log_density_vec(spec, t)) * node_volumes(spec, t)


def node_log_measure(spec: SpaceSpec, t: float) -> np.ndarray:
    return -_log_density_vec(spec, t) + np.log(node_volumes(spec, t))


def metric_at(spec: SpaceSpec, t: float) -> MetricSnapshot:
    """Shortest-path distances and node measures at a fixed time."""
    spec.check_time(t)
    pos = node_positions(spec, t)
    diff = np.abs(pos[:, None] - pos[None, :])
    if spec.topology is Topology.CYCLE:
        total = float(np.sum(edge_lengths(spec, t)))
        dist = np.minimum(diff, total - diff)
    else:
        dist = diff
    return MetricSnapshot(t=t, dist=dist, node_measure=node_measures(spec, t))


def validate_regularity(spec: SpaceSpec, time_samples) -> dict:
    """Sampling-based check of the declared log-Lipschitz constants.

    Reports the largest observed |log length ratio| / |dt| and |df| / |dt|
    over all sampled time pairs, and the sup of |f|.  Report-only: never
    raises on violation.
    """
    ts = sorted(float(t) for t in time_samples)
    if len(ts) < 2:
        raise ValueError("need at least 2 distinct time samples")
    logs = np.array([np.log(edge_lengths(spec, t)) for t in ts])
    fs = np.array([_log_density_vec(spec, t) for t in ts])

    L_obs = 0.0
    for i in range(len(ts)):
        for j in range(i + 1, len(ts)):
            dt = ts[j] - ts[i]
            if dt <= 0.0:
                continue
            L_obs = max(L_obs,
                        float(np.max(np.abs(logs[j] - logs[i]))) / dt,
                        float(np.max(np.abs(fs[j] - fs[i]))) / dt)
    C_obs = float(np.max(np.abs(fs)))
    ok = (L_obs <= spec.L * (1.0 + 1e-9) + 1e-15) and (C_obs <= spec.C * (1.0 + 1e-9) + 1e-15)
    return {"L_observed": L_obs, "C_observed": C_obs, "ok": bool(ok)}


def default_time_samples(spec: SpaceSpec, k: int = 64) -> np.ndarray:
    return np.linspace(spec.t_min, spec.t_max, k)


# ---------------------------------------------------------------------------
# time reparametrization that trades the curvature shift K for 0
# ---------------------------------------------------------------------------

def k_transform_time_map(K: float, C_shift: float):
    """Return (tau, tau_inv) for the rescaling tau(t) = -log(C - 2Kt)/(2K)."""
    if K == 0.0:
        raise ValueError("K must be nonzero")

    def tau(t):
        arg = C_shift - 2.0 * K * t
        if np.any(np.asarray(arg) <= 0.0):
            raise ValueError("time outside domain of the rescaling map")
        return -np.log(arg) / (2.0 * K)

    def tau_inv(sigma):
        return (C_shift - np.exp(-2.0 * K * np.asarray(sigma))) / (2.0 * K)

    return tau, tau_inv


def k_transform(spec: SpaceSpec, K: float, C_shift: float) -> SpaceSpec:
    """Space-time rescaling mapping a (K, N) certification target to (0, N).

    The returned space at its time t carries edge lengths
    exp(-K*tau(t)) * edge_length(tau(t), .) and the density at tau(t),
    where tau(t) = -log(C_shift - 2Kt)/(2K).  For K == 0 the input space is
    returned unchanged.
    """
    if K == 0.0:
        return spec
    tau, tau_inv = k_transform_time_map(K, C_shift)
    lo = float(tau_inv(spec.t_min))
    hi = float(tau_inv(spec.t_max))
    # the artifact only represents positive time windows
    lo = max(lo, min(hi / 2.0, 1e-9) if lo <= 0.0 else lo)
    if not (0.0 < lo < hi):
        raise ValueError("empty transformed interval")

    base_len = spec.edge_length
    base_f = spec.log_density

    def new_len(t, e, _tau=tau, _K=K):
        s = float(_tau(t))
        return math.exp(-_K * s) * base_len(s, e)

    def new_f(t, x, _tau=tau):
        return base_f(float(_tau(t)), x)

    # derivative of tau over the new window inflates the Lipschitz constants
    rate = math.exp(2.0 * max(K * spec.t_max, K * spec.t_min))
    return replace(
        spec,
        t_min=lo,
        t_max=hi,
        edge_length=new_len,
        log_density=new_f,
        L=(spec.L + abs(K)) * rate,
        C=spec.C,
        K=0.0,
        name=f"{spec.name}|k_transform(K={K:g},C={C_shift:g})",
    )


# ---------------------------------------------------------------------------
# time derivatives of the density data
# ---------------------------------------------------------------------------

def _fd_step(spec: SpaceSpec, t: float, delta: float | None) -> float:
    d = delta if delta is not None else 1e-4 * (spec.t_max - spec.t_min)
    room = min(t - spec.t_min, spec.t_max - t)
    if room <= 0.0:
        raise ValueError(f"time {t} too close to the interval boundary")
    return min(d, room)


def fdot(spec: SpaceSpec, t: float, x: int, delta: float | None = None) -> float:
    """Central-difference time derivative of the log-density f_t(x)."""
    spec.check_time(t)
    d = _fd_step(spec, t, delta)
    return (spec.log_density(t + d, x) - spec.log_density(t - d, x)) / (2.0 * d)


def log_measure_dot(spec: SpaceSpec, t: float, delta: float | None = None) -> np.ndarray:
    """Central-difference time derivative of -log m_t per node.

    This is the zero-order coefficient of the adjoint equation; it includes
    the volume part of the measure, not just the user density f.
    """
    spec.check_time(t)
    d = _fd_step(spec, t, delta)
    return -(node_log_measure(spec, t + d) - node_log_measure(spec, t - d)) / (2.0 * d)


# ---------------------------------------------------------------------------
# configuration records
# ---------------------------------------------------------------------------

def _length_callable(cfg: dict) -> Callable[[float, int], float]:
    kind = cfg.get("kind", "constant")
    if kind == "constant":
        v = float(cfg["value"])
        return lambda t, e: v
    if kind == "exp_scaling":
        base, rate = float(cfg["base"]), float(cfg["rate"])
        return lambda t, e: base * math.exp(rate * t)
    if kind == "affine":
        base, slope = float(cfg["base"]), float(cfg["slope"])
        return lambda t, e: base * (1.0 + slope * t)
    if kind == "piecewise_right_diffusive":
        # right-half edges shorten like 1/sqrt(1+t); left half static
        base, split = float(cfg["base"]), int(cfg["split_edge"])
        return lambda t, e: base / math.sqrt(1.0 + t) if e >= split else base
    if kind == "per_edge_constant":
        vals = [float(v) for v in cfg["values"]]
        return lambda t, e: vals[e]
    raise ValueError(f"unknown length kind {kind!r}")


def _density_callable(cfg: dict, positions0: np.ndarray) -> Callable[[float, int], float]:
    kind = cfg.get("kind", "zero")
    if kind == "zero":
        return lambda t, x: 0.0
    if kind == "linear_time":
        rate = float(cfg["rate"])
        return lambda t, x: rate * t
    if kind == "quadratic_spacetime":
        # f_t(x) = a * t * (pos_x - x0)^2, positions frozen at t_min
        a = float(cfg.get("a", 1.0))
        x0 = float(cfg.get("x0", 0.0))
        return lambda t, x: a * t * (positions0[x] - x0) ** 2
    if kind == "static_values":
        vals = [float(v) for v in cfg["values"]]
        return lambda t, x: vals[x]
    if kind == "quadratic_potential":
        # time-dependent 1-D quadratic weight (coefficients as polynomials
        # of t would be opaque in JSON; scenario builders pass callables)
        a, b, c = (float(cfg.get(k, 0.0)) for k in ("a", "b", "c"))
        x0 = float(cfg.get("x0", 0.0))
        return lambda t, x: (a * (positions0[x] - x0)) ** 2 + b * (positions0[x] - x0) + c
    raise ValueError(f"unknown density kind {kind!r}")


def build_space(config: dict) -> SpaceSpec:
    """Build a SpaceSpec from a plain configuration record (JSON-shaped).

    Required keys: topology ("path"/"cycle"), n, time_interval [t0, t1],
    lengths {...}, density {...}; optional L, C, K, N, name.  Edge lengths
    are probed at a few times so misconfigurations fail here, not later.
    """
    topo = Topology(config["topology"])
    n = int(config["n"])
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got n={n}")
    t0, t1 = (float(v) for v in config["time_interval"])
    if not (0.0 < t0 < t1):
        raise ValueError(f"invalid time interval ({t0}, {t1})")

    length_fn = _length_callable(config.get("lengths", {"kind": "constant", "value": 1.0}))
    n_edges = n if topo is Topology.CYCLE else n - 1
    for t in (t0, 0.5 * (t0 + t1), t1):
        for e in range(n_edges):
            if length_fn(t, e) <= 0.0:
                raise ValueError(f"non-positive edge length at t={t}, edge {e}")

    probe = SpaceSpec(topology=topo, n=n, t_min=t0, t_max=t1,
                      edge_length=length_fn, log_density=lambda t, x: 0.0,
                      L=0.0, C=0.0)
    pos0 = node_positions(probe, t0)
    density_fn = _density_callable(config.get("density", {"kind": "zero"}), pos0)

    return SpaceSpec(
        topology=topo, n=n, t_min=t0, t_max=t1,
        edge_length=length_fn, log_density=density_fn,
        L=float(config.get("L", 0.0)), C=float(config.get("C", 0.0)),
        K=float(config.get("K", 0.0)),
        N=float(config["N"]) if str(config.get("N", "inf")) not in ("inf", "Infinity") else math.inf,
        name=str(config.get("name", "custom")),
    )

"""Built-in example spaces with known expected verdicts.

Each catalog entry records the certification outcomes the example is
expected to produce, with a provenance tag: "analytic" for outcomes that
follow from the continuum model the scenario discretizes, "derived" for
outcomes established by running the suite at reference resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import mmspace
from .mmspace import SpaceSpec, Topology

__all__ = [
    "ScenarioCatalogEntry", "CATALOG", "build", "from_config",
    "wandering_gaussian", "scaling_circle", "piecewise_diffusivity",
    "static_interval",
]


def wandering_gaussian(n: int = 64, T: float = 1.0, alpha=None, beta=None,
                       gamma_fn=None, window: float = 2.4,
                       t0: float = 0.1) -> SpaceSpec:
    """Static Euclidean interval with a drifting quadratic log-weight
    (alpha(t)*x)^2 + beta(t)*x + gamma(t), plus a convex boundary taper that
    keeps probe mass away from the Neumann ends.

    The weight is convex in x for every t, so the flow conditions hold with
    N = infinity for any drift; the dimension-N variants fail once alpha or
    beta is genuinely nonzero.
    """
    if alpha is None:
        alpha = lambda t: 2.0 + 0.25 * math.sin(2.0 * t)
    if beta is None:
        beta = lambda t: 0.3 * math.cos(t)
    if gamma_fn is None:
        gamma_fn = lambda t: 0.0
    half = window / 2.0
    h = window / (n - 1)
    xs = np.linspace(-half, half, n)
    wall = 0.9 * half

    def f(t, x, _xs=xs):
        p = _xs[x]
        taper = 8.0 * max(0.0, abs(p) - wall) ** 2
        return (alpha(t) * p) ** 2 + beta(t) * p + gamma_fn(t) + taper

    # conservative analytic bounds for the default drift on this window
    L = 3.7
    C = 15.0
    return SpaceSpec(topology=Topology.PATH, n=n, t_min=t0, t_max=t0 + T,
                     edge_length=lambda t, e: h, log_density=f,
                     L=L, C=C, name=f"wandering_gaussian(n={n})")


def scaling_circle(n: int = 128, rate: float = 0.5, T: float = 1.0,
                   circumference: float = 24.0, t0: float = 0.1) -> SpaceSpec:
    """Flat circle with conformally scaling edge lengths exp(rate * t).

    Expanding (rate >= 0) realizes a nonnegative metric-speed flow and is
    expected to certify at N = infinity; shrinking (rate < 0) violates the
    flow conditions and is expected to refute.  The circumference is chosen
    large enough that the slowest diffusion mode does not mask the metric
    drift.
    """
    base = circumference / n
    return SpaceSpec(
        topology=Topology.CYCLE, n=n, t_min=t0, t_max=t0 + T,
        edge_length=lambda t, e: base * math.exp(rate * t),
        log_density=lambda t, x: 0.0,
        L=abs(rate), C=0.0,
        name=f"scaling_circle(c={rate:g})")


def piecewise_diffusivity(n: int = 64, T: float = 0.5, t0: float = 0.05,
                          width: float = 2.0) -> SpaceSpec:
    """Interval whose right half shortens like 1/sqrt(1+t): the diffusivity
    jumps across the midpoint, exercising the solvers' flux handling.  No
    curvature verdict is expected."""
    h = width / (n - 1)
    split = (n - 1) // 2

    def ell(t, e):
        return h / math.sqrt(1.0 + t) if e >= split else h

    return SpaceSpec(topology=Topology.PATH, n=n, t_min=t0, t_max=t0 + T,
                     edge_length=ell, log_density=lambda t, x: 0.0,
                     L=0.5 / (1.0 + t0), C=0.0,
                     name=f"piecewise_diffusivity(n={n})")


def static_interval(n: int = 64, potential=None, T: float = 1.0,
                    t0: float = 0.1, width: float = 1.0) -> SpaceSpec:
    """Static interval with an optional static potential weight."""
    h = width / (n - 1)
    xs = np.linspace(0.0, width, n)
    if potential is None:
        pot = np.zeros(n)
    elif callable(potential):
        pot = np.array([float(potential(x)) for x in xs])
    else:
        pot = np.asarray(potential, dtype=float)
        if pot.shape[0] != n:
            raise ValueError("potential array size mismatch")
    C = float(np.max(np.abs(pot)))
    if n > 1:
        C = max(C, float(np.max(np.abs(np.diff(pot)))) / h)
    return SpaceSpec(topology=Topology.PATH, n=n, t_min=t0, t_max=t0 + T,
                     edge_length=lambda t, e: h,
                     log_density=lambda t, x: float(pot[x]),
                     L=0.0, C=C, name=f"static_interval(n={n})")


@dataclass(frozen=True)
class ScenarioCatalogEntry:
    name: str
    builder: str
    params: dict
    # list of dicts {"K", "N", "verdict", "provenance"}
    expected: list = dc_field(default_factory=list)


_INF = math.inf

CATALOG: list[ScenarioCatalogEntry] = [
    ScenarioCatalogEntry(
        name="static_interval", builder="static_interval", params={},
        expected=[{"K": 0.0, "N": _INF, "verdict": "certified-at-tolerance",
                   "provenance": "analytic"}]),
    ScenarioCatalogEntry(
        name="static_circle", builder="scaling_circle",
        params={"rate": 0.0},
        expected=[{"K": 0.0, "N": 1.0, "verdict": "certified-at-tolerance",
                   "provenance": "derived"}]),
    ScenarioCatalogEntry(
        name="expanding_circle", builder="scaling_circle",
        params={"rate": 0.5},
        expected=[{"K": 0.0, "N": _INF, "verdict": "certified-at-tolerance",
                   "provenance": "analytic"}]),
    ScenarioCatalogEntry(
        name="shrinking_circle", builder="scaling_circle",
        params={"rate": -0.5},
        expected=[{"K": 0.0, "N": _INF, "verdict": "refuted-with-witness",
                   "provenance": "analytic"}]),
    ScenarioCatalogEntry(
        name="wandering_gaussian", builder="wandering_gaussian", params={},
        expected=[{"K": 0.0, "N": _INF, "verdict": "certified-at-tolerance",
                   "provenance": "analytic"},
                  {"K": 0.0, "N": 2.0, "verdict": "refuted-with-witness",
                   "provenance": "derived"}]),
    ScenarioCatalogEntry(
        name="piecewise_diffusivity", builder="piecewise_diffusivity",
        params={}, expected=[]),
]

_BUILDERS = {
    "wandering_gaussian": wandering_gaussian,
    "scaling_circle": scaling_circle,
    "piecewise_diffusivity": piecewise_diffusivity,
    "static_interval": static_interval,
}


def build(name: str, **overrides) -> SpaceSpec:
    """Build a catalog scenario by name, with parameter overrides."""
    for entry in CATALOG:
        if entry.name == name:
            params = dict(entry.params)
            params.update(overrides)
            return _BUILDERS[entry.builder](**params)
    if name in _BUILDERS:
        return _BUILDERS[name](**overrides)
    raise KeyError(f"unknown scenario {name!r}")


def catalog_entry(name: str) -> ScenarioCatalogEntry:
    for entry in CATALOG:
        if entry.name == name:
            return entry
    raise KeyError(f"unknown scenario {name!r}")


def scenario_config(name: str) -> dict:
    """Exportable configuration record for a catalog scenario."""
    entry = catalog_entry(name)
    return {"scenario": entry.builder, "params": dict(entry.params),
            "name": entry.name}


def from_config(config: dict) -> SpaceSpec:
    """Build a space from a configuration record.

    Accepts {"scenario": <builder>, "params": {...}}, a generic record as
    understood by mmspace.build_space, and an optional outer
    {"transform": {"K":, "C":}, "base": {...}} wrapper applying the
    curvature rescaling to the base space.
    """
    if "transform" in config:
        base = from_config(config["base"])
        tr = config["transform"]
        return mmspace.k_transform(base, float(tr["K"]), float(tr["C"]))
    if "scenario" in config:
        name = config["scenario"]
        if name not in _BUILDERS:
            raise KeyError(f"unknown scenario {name!r}")
        spec = _BUILDERS[name](**config.get("params", {}))
        if "name" in config:
            spec = _rename(spec, config["name"])
        return spec
    return mmspace.build_space(config)


def _rename(spec: SpaceSpec, name: str) -> SpaceSpec:
    from dataclasses import replace
    return replace(spec, name=name)

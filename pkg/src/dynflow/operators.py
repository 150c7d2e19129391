"""Weighted graph Laplacian, Dirichlet form, square-field operator and its
time derivative, and the second-order (Bochner-type) bilinear functional.

Conductances use geometric-mean density weighting
w_t(x, y) = exp(-(f(x)+f(y))/2) / length(x, y), which keeps the generator
exactly self-adjoint in L2(m_t) and first-order consistent with the
continuum weighted operator.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import mmspace
from .mmspace import SpaceSpec, Topology

__all__ = [
    "Generator", "assemble_generator", "laplacian_apply", "dirichlet_energy",
    "gamma", "gamma_dot", "gamma2_dist", "generator_to_coo",
]


@dataclass(frozen=True)
class Generator:
    """Graph generator at a fixed time: conductances, measures, structure."""
    t: float
    topology: Topology
    n: int
    edge_conductance: np.ndarray   # (n_edges,), edge e = (e, e+1 [mod n])
    node_measure: np.ndarray       # (n,)

    @property
    def n_edges(self) -> int:
        return self.edge_conductance.shape[0]

    def edge_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        i = np.arange(self.n_edges)
        j = (i + 1) % self.n
        return i, j

    def degree(self) -> np.ndarray:
        i, j = self.edge_nodes()
        deg = np.zeros(self.n)
        np.add.at(deg, i, self.edge_conductance)
        np.add.at(deg, j, self.edge_conductance)
        return deg


def assemble_generator(spec: SpaceSpec, t: float) -> Generator:
    spec.check_time(t)
    ell = mmspace.edge_lengths(spec, t)
    f = np.array([spec.log_density(t, x) for x in range(spec.n)])
    i = np.arange(ell.shape[0])
    j = (i + 1) % spec.n
    w = np.exp(-0.5 * (f[i] + f[j])) / ell
    m = np.exp(-f) * mmspace.node_volumes(spec, t)
    return Generator(t=t, topology=spec.topology, n=spec.n,
                     edge_conductance=w, node_measure=m)


def _edge_diff(gen: Generator, u: np.ndarray) -> np.ndarray:
    i, j = gen.edge_nodes()
    return u[j] - u[i]


def laplacian_apply(gen: Generator, u: np.ndarray) -> np.ndarray:
    """Delta u(x) = (1/m(x)) sum_y w(x,y) (u(y) - u(x))."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] != gen.n:
        raise ValueError(f"field size {u.shape[0]} != n={gen.n}")
    i, j = gen.edge_nodes()
    flux = gen.edge_conductance * (u[j] - u[i])
    out = np.zeros(gen.n)
    np.add.at(out, i, flux)
    np.add.at(out, j, -flux)
    return out / gen.node_measure


def dirichlet_energy(gen: Generator, u: np.ndarray, v: np.ndarray | None = None) -> float:
    """E_t(u, v) = (1/2) sum_{x,y} w(x,y) (u(x)-u(y)) (v(x)-v(y))."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    if u.shape[0] != gen.n or v.shape[0] != gen.n:
        raise ValueError("field size mismatch")
    return float(np.sum(gen.edge_conductance * _edge_diff(gen, u) * _edge_diff(gen, v)))


def gamma(gen: Generator, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Square-field operator, pointwise:
    Gamma(u,v)(x) = (1/(2 m(x))) sum_y w(x,y) (u(y)-u(x)) (v(y)-v(x))."""
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    if u.shape[0] != gen.n or v.shape[0] != gen.n:
        raise ValueError("field size mismatch")
    i, j = gen.edge_nodes()
    prod = gen.edge_conductance * (u[j] - u[i]) * (v[j] - v[i])
    out = np.zeros(gen.n)
    np.add.at(out, i, prod)
    np.add.at(out, j, prod)
    return out / (2.0 * gen.node_measure)


def gamma_dot(spec: SpaceSpec, u: np.ndarray, r: float, delta: float) -> np.ndarray:
    """Central difference in time of t -> Gamma_t(u), evaluated pointwise."""
    if not (spec.t_min <= r - delta and r + delta <= spec.t_max):
        raise ValueError(f"window [{r - delta}, {r + delta}] leaves the time interval")
    g_plus = gamma(assemble_generator(spec, r + delta), u)
    g_minus = gamma(assemble_generator(spec, r - delta), u)
    return (g_plus - g_minus) / (2.0 * delta)


def gamma2_dist(spec: SpaceSpec, t: float, u: np.ndarray, g: np.ndarray) -> float:
    """Second-order bilinear functional of u tested against g:

    integral of [ -1/2 Gamma(Gamma(u), g) + (Delta u)^2 g
                  + Gamma(u, g) Delta u ] dm_t.
    """
    gen = assemble_generator(spec, t)
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    if u.shape[0] != gen.n or g.shape[0] != gen.n:
        raise ValueError("field size mismatch")
    if np.min(g) < -1e-12:
        warnings.warn("test function g has negative values; the Bochner-type "
                      "functional is only meaningful against g >= 0",
                      stacklevel=2)
    m = gen.node_measure
    du = laplacian_apply(gen, u)
    term1 = -0.5 * dirichlet_energy(gen, gamma(gen, u), g)   # = -1/2 int Gamma(Gamma u, g) dm
    term2 = float(np.sum(du * du * g * m))
    term3 = float(np.sum(gamma(gen, u, g) * du * m))
    return term1 + term2 + term3


def generator_to_coo(gen: Generator) -> list[tuple[int, int, float]]:
    """Coordinate-list form of the generator matrix (row, col, value)."""
    i, j = gen.edge_nodes()
    m = gen.node_measure
    entries: list[tuple[int, int, float]] = []
    diag = -gen.degree() / m
    for x in range(gen.n):
        entries.append((x, x, float(diag[x])))
    for e in range(gen.n_edges):
        entries.append((int(i[e]), int(j[e]), float(gen.edge_conductance[e] / m[i[e]])))
        entries.append((int(j[e]), int(i[e]), float(gen.edge_conductance[e] / m[j[e]])))
    return sorted(entries)

"""Tests for the space definition layer: construction, metrics, regularity
validation, the curvature-shift rescaling, and density time derivatives."""
import math

import numpy as np
import pytest

from dynflow import mmspace, transport
from dynflow.mmspace import SpaceSpec, Topology, build_space, fdot, \
    k_transform, k_transform_time_map, metric_at, validate_regularity
from dynflow.propagate import MeasureVec


def static_path(n=5, ell=0.25, t0=0.1, t1=1.0, f=None):
    return SpaceSpec(topology=Topology.PATH, n=n, t_min=t0, t_max=t1,
                     edge_length=lambda t, e: ell,
                     log_density=f or (lambda t, x: 0.0), L=0.0, C=0.0)


def scaling_cycle(n=4, base=0.25, rate=1.0, t0=0.1, t1=1.2):
    return SpaceSpec(topology=Topology.CYCLE, n=n, t_min=t0, t_max=t1,
                     edge_length=lambda t, e: base * math.exp(rate * t),
                     log_density=lambda t, x: 0.0, L=abs(rate), C=0.0)


class TestBuildSpace:
    def test_static_uniform_cycle(self):
        spec = build_space({"topology": "cycle", "n": 4,
                            "time_interval": [0.1, 1.0],
                            "lengths": {"kind": "constant", "value": 0.25}})
        assert spec.topology is Topology.CYCLE
        total = np.sum(mmspace.edge_lengths(spec, 0.5))
        assert total == pytest.approx(1.0, abs=1e-15)

    def test_path_with_spacetime_density(self):
        spec = build_space({"topology": "path", "n": 5,
                            "time_interval": [0.1, 1.0],
                            "lengths": {"kind": "constant", "value": 0.25},
                            "density": {"kind": "quadratic_spacetime", "a": 1.0}})
        # m_t(x) = exp(-x^2 t) * vol(x) with x the arc position
        t = 0.5
        pos = mmspace.node_positions(spec, t)
        vol = mmspace.node_volumes(spec, t)
        expected = np.exp(-pos ** 2 * t) * vol
        np.testing.assert_allclose(mmspace.node_measures(spec, t), expected,
                                   rtol=1e-14)

    def test_rejects_bad_configs(self):
        base = {"topology": "path", "n": 5, "time_interval": [0.1, 1.0],
                "lengths": {"kind": "constant", "value": 0.25}}
        with pytest.raises(ValueError, match="at least 2 nodes"):
            build_space({**base, "n": 1})
        with pytest.raises(ValueError, match="time interval"):
            build_space({**base, "time_interval": [1.0, 0.1]})
        with pytest.raises(ValueError, match="non-positive edge length"):
            build_space({**base,
                         "lengths": {"kind": "constant", "value": -1.0}})


class TestMetricAt:
    def test_path_end_to_end(self):
        spec = static_path(n=3, ell=0.5)
        snap = metric_at(spec, 0.5)
        assert snap.dist[0, 2] == pytest.approx(1.0, abs=1e-15)

    def test_cycle_opposite_nodes(self):
        spec = build_space({"topology": "cycle", "n": 4,
                            "time_interval": [0.1, 1.0],
                            "lengths": {"kind": "constant", "value": 0.25}})
        snap = metric_at(spec, 0.5)
        assert snap.dist[0, 2] == pytest.approx(0.5, abs=1e-15)

    def test_scaling_circle_adjacent(self):
        spec = scaling_cycle()
        snap = metric_at(spec, 1.0)
        assert snap.dist[0, 1] == pytest.approx(0.25 * math.e, rel=1e-14)

    def test_rejects_time_outside_interval(self):
        with pytest.raises(ValueError, match="outside"):
            metric_at(static_path(), 2.0)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(0)
        lengths = rng.uniform(0.1, 1.0, 8)
        spec = build_space({"topology": "cycle", "n": 8,
                            "time_interval": [0.1, 1.0],
                            "lengths": {"kind": "per_edge_constant",
                                        "values": lengths.tolist()}})
        d = metric_at(spec, 0.5).dist
        for x in range(8):
            for y in range(8):
                for z in range(8):
                    assert d[x, z] <= d[x, y] + d[y, z] + 1e-12


class TestValidateRegularity:
    def test_exponential_lengths_give_unit_rate(self):
        spec = scaling_cycle(rate=-1.0)
        rep = validate_regularity(spec, np.linspace(0.1, 1.2, 16))
        assert rep["L_observed"] == pytest.approx(1.0, rel=1e-9)
        assert rep["ok"]

    def test_static_space(self):
        rep = validate_regularity(static_path(), np.linspace(0.1, 1.0, 8))
        assert rep["L_observed"] == 0.0
        assert rep["ok"]

    def test_affine_lengths_fail_declared_bound(self):
        spec = SpaceSpec(topology=Topology.PATH, n=3, t_min=0.1, t_max=0.4,
                         edge_length=lambda t, e: 0.5 * (1 + 2 * t),
                         log_density=lambda t, x: 0.0, L=1.0, C=0.0)
        rep = validate_regularity(spec, np.linspace(0.1, 0.4, 256))
        # sup of the log-derivative is 2/(1 + 2*0.1)
        assert rep["L_observed"] == pytest.approx(2.0 / 1.2, abs=2e-2)
        assert not rep["ok"]

    def test_monotone_in_samples(self):
        spec = scaling_cycle(rate=0.7, t0=0.1, t1=1.1)
        coarse = validate_regularity(spec, np.linspace(0.1, 1.1, 5))
        fine = validate_regularity(
            spec, np.concatenate([np.linspace(0.1, 1.1, 5),
                                  np.linspace(0.15, 1.05, 9)]))
        assert fine["L_observed"] >= coarse["L_observed"] - 1e-15


class TestKTransform:
    def test_time_map_values(self):
        tau, tau_inv = k_transform_time_map(1.0, 1.0)
        assert tau(0.0) == pytest.approx(0.0, abs=1e-15)
        assert tau(0.25) == pytest.approx(0.34657359027997264, rel=1e-12)
        assert math.exp(-tau(0.25)) == pytest.approx(0.7071067811865476, rel=1e-12)
        assert tau_inv(tau(0.2)) == pytest.approx(0.2, rel=1e-12)

    def test_zero_k_is_identity(self):
        spec = static_path()
        assert k_transform(spec, 0.0, 1.0) is spec

    def test_static_space_maps_to_static_rescaled(self):
        spec = static_path(n=4, ell=0.5, t0=0.2, t1=0.8)
        out = k_transform(spec, 1.0, 2.0)
        tau, _ = k_transform_time_map(1.0, 2.0)
        for t in np.linspace(out.t_min, out.t_max, 5):
            expect = math.exp(-tau(t)) * 0.5
            assert out.edge_length(t, 0) == pytest.approx(expect, rel=1e-12)

    def test_inverse_parameter_map_reproduces_lengths(self):
        spec = scaling_cycle(n=6, base=0.3, rate=0.8, t0=0.2, t1=1.0)
        K, C = 0.7, 2.0
        out = k_transform(spec, K, C)
        tau, _ = k_transform_time_map(K, C)
        for t in np.linspace(out.t_min + 1e-6, out.t_max - 1e-6, 7):
            sigma = float(tau(t))
            recovered = math.exp(K * sigma) * out.edge_length(t, 2)
            assert abs(recovered - spec.edge_length(sigma, 2)) < 1e-10

    def test_empty_window_rejected(self):
        spec = static_path(t0=0.2, t1=0.8)
        # K > 0 with small shift puts the whole mapped window at negative times
        with pytest.raises(ValueError, match="empty transformed interval"):
            k_transform(spec, 2.0, 1e-6)


class TestFdot:
    def test_affine_in_time_is_exact(self):
        spec = SpaceSpec(topology=Topology.PATH, n=3, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 0.5,
                         log_density=lambda t, x: t * (0.5 * x),
                         L=1.0, C=1.0)
        assert fdot(spec, 0.5, 1) == pytest.approx(0.5, abs=1e-12)

    def test_static_density(self):
        spec = static_path(f=lambda t, x: 0.3 * x)
        assert fdot(spec, 0.5, 2) == 0.0

    def test_sine_matches_cosine_to_second_order(self):
        spec = SpaceSpec(topology=Topology.PATH, n=3, t_min=0.01, t_max=3.0,
                         edge_length=lambda t, e: 0.5,
                         log_density=lambda t, x: math.sin(t), L=1.0, C=1.0)
        val = fdot(spec, 1.0, 0, delta=1e-3)
        assert val == pytest.approx(math.cos(1.0), abs=2e-7)

    def test_boundary_step_is_clamped(self):
        spec = static_path(t0=0.1, t1=1.0)
        with pytest.raises(ValueError, match="boundary"):
            fdot(spec, 0.1, 0)


def test_intertime_distance_sandwich_for_point_masses():
    """Dynamic distance of point masses against the log-Lipschitz bracket."""
    n = 96
    spec = SpaceSpec(topology=Topology.CYCLE, n=n, t_min=0.1, t_max=0.6,
                     edge_length=lambda t, e: (12.0 / n) * math.exp(0.5 * t),
                     log_density=lambda t, x: 0.0, L=0.5, C=0.0)
    s, t = 0.15, 0.45
    mu = MeasureVec.point_mass(n, 0, s)
    nu = MeasureVec.point_mass(n, 20, s)
    res = transport.w_st(spec, mu, nu, s, t, k_knots=8, n_outer=3)
    dt = t - s
    lo = (1.0 - math.exp(-spec.L * dt)) / (spec.L * dt)
    hi = (math.exp(spec.L * dt) - 1.0) / (spec.L * dt)
    ratio = res["sandwich"]["ratio"]
    assert lo * 0.95 <= ratio <= hi * 1.05
    assert res["sandwich"]["ok"]

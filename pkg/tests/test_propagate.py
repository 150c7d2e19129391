"""Tests for the flow solvers: forward heat, discrete/PDE adjoints, dual
flow, kernels, and the a-priori estimate diagnostics."""
import math

import numpy as np
import pytest

from dynflow import mmspace, operators, propagate
from dynflow.mmspace import SpaceSpec, Topology
from dynflow.propagate import (AdjointMode, MeasureVec, Method, SchemeConfig,
                               adjoint_backward, commutator_residual,
                               dual_flow, duality_gap, energy_decay_check,
                               evi_energy_check, heat_forward,
                               heat_forward_matrix, heat_kernel,
                               lp_norm_report, rk4_reference)

TWO_NODE_EXACT = (0.5 + 0.5 * math.exp(-1.0), 0.5 - 0.5 * math.exp(-1.0))


def two_node_space():
    return SpaceSpec(topology=Topology.PATH, n=2, t_min=0.1, t_max=1.0,
                     edge_length=lambda t, e: 1.0,
                     log_density=lambda t, x: 0.0, L=0.0, C=0.0)


def scaling_circle(n=32, rate=0.5, t0=0.1, t1=1.0):
    return SpaceSpec(topology=Topology.CYCLE, n=n, t_min=t0, t_max=t1,
                     edge_length=lambda t, e: (1.0 / n) * math.exp(rate * t),
                     log_density=lambda t, x: 0.0, L=abs(rate), C=0.0)


def mass_rescaled_two_node(rate=-1.0):
    # spatially constant density drift: pure mass rescaling
    return SpaceSpec(topology=Topology.PATH, n=2, t_min=0.1, t_max=1.0,
                     edge_length=lambda t, e: 1.0,
                     log_density=lambda t, x: rate * t,
                     L=abs(rate), C=1.0)


CN = SchemeConfig(method="crank_nicolson", n_steps=200)
IE = SchemeConfig(method="implicit_euler", n_steps=200)


class TestHeatForward:
    def test_constants_preserved_exactly(self):
        spec = scaling_circle()
        u = heat_forward(spec, np.ones(32), 0.2, 0.8, CN)
        np.testing.assert_allclose(u, 1.0, atol=1e-13)

    def test_two_node_closed_form(self):
        u = heat_forward(two_node_space(), np.array([1.0, 0.0]), 0.25, 0.5, CN)
        np.testing.assert_allclose(u, TWO_NODE_EXACT, atol=5e-7)

    def test_maximum_principle_implicit_euler(self):
        spec = scaling_circle()
        rng = np.random.default_rng(0)
        h = rng.uniform(0.0, 1.0, 32)
        u = heat_forward(spec, h, 0.2, 0.8,
                         SchemeConfig(method="implicit_euler", n_steps=24))
        assert np.min(u) >= -1e-12 and np.max(u) <= 1.0 + 1e-12

    def test_comparison_preservation_implicit_euler(self):
        spec = scaling_circle()
        rng = np.random.default_rng(1)
        for _ in range(5):
            u0 = rng.standard_normal(32)
            g0 = u0 ** 2 + np.abs(rng.standard_normal(32))
            cfg = SchemeConfig(method="implicit_euler", n_steps=16)
            u1 = heat_forward(spec, u0, 0.2, 0.7, cfg)
            g1 = heat_forward(spec, g0, 0.2, 0.7, cfg)
            assert np.all(u1 ** 2 <= g1 + 1e-12)

    def test_rejects_reversed_times(self):
        with pytest.raises(ValueError, match="s < t"):
            heat_forward(two_node_space(), np.zeros(2), 0.5, 0.25, CN)

    def test_crank_nicolson_second_order_vs_rk4(self):
        spec = scaling_circle()
        x = np.arange(32) / 32
        h = np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x) + 1.0
        oracle = rk4_reference(spec, h, 0.15, 0.45, 12800)
        errs = []
        for ns in (32, 64, 128):
            u = heat_forward(spec, h, 0.15, 0.45,
                             SchemeConfig(method="crank_nicolson", n_steps=ns))
            errs.append(np.max(np.abs(u - oracle)))
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 1.9


class TestAdjoint:
    def test_duality_identity(self):
        spec = scaling_circle()
        rng = np.random.default_rng(2)
        for _ in range(10):
            h, g = rng.standard_normal((2, 32))
            gap = duality_gap(spec, h, g, 0.3, 0.7, CN)
            assert abs(gap) <= 1e-11 * np.linalg.norm(h) * np.linalg.norm(g)

    def test_mass_preservation_via_duality(self):
        spec = scaling_circle()
        rng = np.random.default_rng(3)
        g = np.abs(rng.standard_normal(32))
        pg = adjoint_backward(spec, g, 0.7, 0.3, CN)
        ms = mmspace.node_measures(spec, 0.3)
        mt = mmspace.node_measures(spec, 0.7)
        assert np.sum(pg * ms) == pytest.approx(np.sum(g * mt), abs=1e-11)

    def test_static_adjoint_matches_forward(self):
        g = np.array([1.0, 0.0])
        v = adjoint_backward(two_node_space(), g, 0.5, 0.25, CN)
        np.testing.assert_allclose(v, TWO_NODE_EXACT, atol=5e-7)

    def test_direct_pde_converges_to_discrete_adjoint(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=24, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: (1.0 / 24) * math.exp(0.5 * t),
                         log_density=lambda t, x: 0.4 * t * math.sin(2 * math.pi * x / 24),
                         L=0.9, C=0.5)
        rng = np.random.default_rng(4)
        g = np.abs(rng.standard_normal(24)) + 0.5
        errs = []
        for ns in (32, 64, 128):
            da = adjoint_backward(spec, g, 0.8, 0.3,
                                  SchemeConfig(method="crank_nicolson", n_steps=ns,
                                               adjoint_mode="discrete_adjoint"))
            pde = adjoint_backward(spec, g, 0.8, 0.3,
                                   SchemeConfig(method="crank_nicolson", n_steps=ns,
                                                adjoint_mode="direct_pde"))
            errs.append(np.max(np.abs(da - pde)))
        assert errs[1] <= 0.75 * errs[0]
        assert errs[2] <= 0.75 * errs[1]


class TestDualFlow:
    def test_uniform_density_stationary_on_static_space(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        mu = MeasureVec.from_weights(mmspace.node_measures(spec, 0.8), 0.8)
        out = dual_flow(spec, mu, 0.8, 0.3, CN)
        np.testing.assert_allclose(out.masses, mu.masses, atol=1e-13)

    def test_point_mass_spreads_positively(self):
        spec = scaling_circle()
        mu = MeasureVec.point_mass(32, 5, 0.8)
        out = dual_flow(spec, mu, 0.8, 0.3, IE)
        kernel = heat_kernel(spec, 0.3, 0.8, IE)
        ms = mmspace.node_measures(spec, 0.3)
        np.testing.assert_allclose(out.masses, kernel[5] * ms, atol=1e-12)
        assert np.min(out.masses) > 0.0

    def test_two_node_masses(self):
        mu = MeasureVec.point_mass(2, 0, 0.5)
        out = dual_flow(two_node_space(), mu, 0.5, 0.25, CN)
        np.testing.assert_allclose(out.masses, TWO_NODE_EXACT, atol=5e-7)
        assert np.sum(out.masses) == pytest.approx(1.0, abs=1e-11)


class TestHeatKernel:
    def test_rows_are_markov(self):
        spec = scaling_circle()
        p = heat_kernel(spec, 0.3, 0.7, CN)
        ms = mmspace.node_measures(spec, 0.3)
        np.testing.assert_allclose(p @ ms, 1.0, atol=1e-12)

    def test_propagator_property_on_aligned_grids(self):
        spec = scaling_circle()
        cfg_half = SchemeConfig(method="crank_nicolson", n_steps=32)
        direct = heat_forward_matrix(spec, 0.3, 0.7,
                                     SchemeConfig(method="crank_nicolson",
                                                  n_steps=64))
        left = heat_forward_matrix(spec, 0.5, 0.7, cfg_half)
        right = heat_forward_matrix(spec, 0.3, 0.5, cfg_half)
        assert np.max(np.abs(direct - left @ right)) <= 1e-10

    def test_static_kernel_symmetric(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        p = heat_kernel(spec, 0.3, 0.7, CN)
        np.testing.assert_allclose(p, p.T, atol=1e-11)


class TestLpNorms:
    def test_static_space_is_contractive(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        rep = lp_norm_report(spec, 0.3, 0.7, CN, trials=5, seed=0)
        assert rep["ok"]
        for row in rep["rows"]:
            assert row["max_ratio"] <= 1.0 + 1e-11

    def test_pure_mass_rescaling_attains_bound(self):
        spec = mass_rescaled_two_node(rate=-1.0)
        rep = lp_norm_report(spec, 0.3, 0.7, CN, trials=3, seed=1)
        assert rep["ok"]
        row = next(r for r in rep["rows"] if r["op"] == "P" and r["p"] == 1.0)
        assert row["max_ratio"] == pytest.approx(math.exp(0.4), rel=1e-3)

    def test_understated_constant_is_flagged(self):
        # same drift but with a declared L that is too small
        spec = SpaceSpec(topology=Topology.PATH, n=2, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0,
                         log_density=lambda t, x: -t, L=0.3, C=1.0)
        rep = lp_norm_report(spec, 0.3, 0.7, CN, trials=3, seed=2)
        assert not rep["ok"]
        bad = [r for r in rep["rows"] if not r["ok"]]
        assert bad and all(r["max_ratio"] > r["bound"] for r in bad)

    def test_requires_trials(self):
        with pytest.raises(ValueError, match="trials"):
            lp_norm_report(two_node_space(), 0.3, 0.7, CN, trials=0)


class TestEnergyDecay:
    def test_constant_field(self):
        spec = scaling_circle()
        rep = energy_decay_check(spec, np.full(32, 2.0), 0.2, 0.8, CN)
        assert rep["ok"] and rep["lhs"] == pytest.approx(0.0, abs=1e-12)

    def test_static_energy_identity(self):
        # slow lowest mode so the dissipation integral is well resolved
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 4.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        x = np.arange(16) / 16
        rep = energy_decay_check(spec, np.sin(2 * np.pi * x), 0.2, 0.5, CN)
        assert rep["ok"]
        # with L = 0 this is the exact dissipation identity up to quadrature
        assert rep["lhs"] == pytest.approx(rep["rhs"], rel=1e-4)

    def test_scaling_circle_positive_stable_slack(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=32, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: (4.0 / 32) * math.exp(0.5 * t),
                         log_density=lambda t, x: 0.0, L=0.5, C=0.0)
        x = np.arange(32) / 32
        u0 = np.sin(2 * np.pi * x)
        slacks = []
        for ns in (64, 256):
            rep = energy_decay_check(spec, u0, 0.2, 0.6,
                                     SchemeConfig(method="crank_nicolson",
                                                  n_steps=ns))
            assert rep["ok"]
            slacks.append(rep["rhs"] - rep["lhs"])
        assert all(s > 0 for s in slacks)
        assert slacks[0] == pytest.approx(slacks[1], rel=0.2)


class TestCommutator:
    def test_constant_field_zero_residual(self):
        spec = scaling_circle()
        rng = np.random.default_rng(5)
        g = np.abs(rng.standard_normal(32))
        rep = commutator_residual(spec, np.ones(32), g, 0.15, 0.9, 0.3, 0.6, CN)
        assert rep["residual"] == pytest.approx(0.0, abs=1e-12)
        assert rep["ok"]

    def test_static_space_commutes(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        rng = np.random.default_rng(6)
        u, g = rng.standard_normal((2, 16))
        rep = commutator_residual(spec, u, g, 0.15, 0.9, 0.3, 0.6, CN)
        assert rep["residual"] <= 1e-10
        assert rep["ok"]

    def test_scaling_exponent_at_least_half(self):
        spec = scaling_circle(rate=1.0)
        x = np.arange(32) / 32
        u = np.sin(2 * np.pi * x)
        g = np.cos(2 * np.pi * x) + 1.5
        mid = 0.5
        residuals, widths = [], []
        for k in range(4):
            dt = 0.32 / 2 ** k
            rep = commutator_residual(spec, u, g, 0.12, 0.95,
                                      mid - dt / 2, mid + dt / 2, CN)
            assert rep["ok"]
            residuals.append(rep["residual"])
            widths.append(dt)
        slope = np.polyfit(np.log(widths), np.log(residuals), 1)[0]
        assert slope >= 0.4

    def test_ordering_validated(self):
        with pytest.raises(ValueError, match="sigma < s < t < tau"):
            commutator_residual(scaling_circle(), np.ones(32), np.ones(32),
                                0.5, 0.9, 0.3, 0.6, CN)


class TestEviEnergy:
    def test_w_equals_endpoint(self):
        spec = scaling_circle()
        x = np.arange(32) / 32
        _, traj = heat_forward(spec, np.sin(2 * np.pi * x), 0.2, 0.6, CN,
                               return_trajectory=True)
        t = traj.times[-1]
        rep = evi_energy_check(spec, traj, t, traj.values[-1])
        assert rep["ok"]

    def test_static_dissipation_with_zero_target(self):
        spec = SpaceSpec(topology=Topology.CYCLE, n=16, t_min=0.1, t_max=1.0,
                         edge_length=lambda t, e: 1.0 / 16,
                         log_density=lambda t, x: 0.0, L=0.0, C=0.0)
        x = np.arange(16) / 16
        _, traj = heat_forward(spec, np.sin(2 * np.pi * x), 0.2, 0.6, CN,
                               return_trajectory=True)
        rep = evi_energy_check(spec, traj, traj.times[-1], np.zeros(16))
        assert rep["ok"]
        # slack is half the current energy at leading order
        assert rep["lhs"] - rep["rhs"] > 0.0

    def test_random_targets_scaling_circle(self):
        spec = scaling_circle()
        x = np.arange(32) / 32
        _, traj = heat_forward(spec, np.sin(2 * np.pi * x) + 0.2, 0.2, 0.7,
                               SchemeConfig(method="crank_nicolson",
                                            n_steps=500),
                               return_trajectory=True)
        rng = np.random.default_rng(7)
        for _ in range(20):
            w = 0.5 * rng.standard_normal(32)
            rep = evi_energy_check(spec, traj, traj.times[-1], w)
            assert rep["ok"]

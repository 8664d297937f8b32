import math

import numpy as np
import pytest

from conftest import norm_map
from gmtkit.cubemaps import SmoothMap
from gmtkit.grassmann import Plane, haar_sample
from gmtkit.sampling import ring_sampled_disc, sample_disc, sample_segment
from gmtkit.varifold import (
    AreaIntegrand,
    DiscreteVarifold,
    FrozenIntegrand,
    RiemannianWeightIntegrand,
    TableIntegrand,
    TiltPenaltyIntegrand,
    blowup_map,
    covering_measure,
    density_ratio,
    ellipticity_probe,
    integrand_from_config,
    phi_F,
    psi_F,
    pullback_integrand,
    pushforward,
    slice_varifold,
    unit_ball_volume,
)

H = Plane.axis(3, (0, 1))


def flat_disc(count=20000, seed=1, radius=1.0):
    pts, w = sample_disc(radius, count, seed=seed)
    return DiscreteVarifold.flat(pts, H, w)


def blowup_test_functions():
    """Five fixed smooth test functions on R x R^3 for the weak limit."""
    return [
        lambda y: np.exp(-np.sum((y[:, 1:3] - 0.2) ** 2, axis=1)) * (1.0 + y[:, 0]),
        lambda y: np.cos(2.0 * y[:, 0]) * np.exp(-2.0 * (y[:, 1] - 0.2) ** 2),
        lambda y: y[:, 0] ** 2 + 0.5 * np.sin(3.0 * y[:, 1] * y[:, 2] + 1.0),
        lambda y: (2.0 - y[:, 0]) / (1.0 + np.sum((y[:, 1:4] - 0.1) ** 2, axis=1)),
        lambda y: np.exp(-np.abs(y[:, 0] - 0.5)) * (1.0 + 0.3 * y[:, 1]),
    ]


class TestIntegrands:
    def test_bounds_respected_on_probes(self, rng):
        tp = TiltPenaltyIntegrand(H, lam=2.0)
        pts = rng.standard_normal((50, 3))
        vals = []
        for _ in range(50):
            plane = haar_sample(3, 2, rng)
            frames = np.broadcast_to(plane.frame, (50, 3, 2))
            vals.append(tp.evaluate(pts, frames))
        vals = np.concatenate(vals)
        assert np.all(vals >= tp.inf_bound - 1e-12)
        assert np.all(vals <= tp.sup_bound + 1e-12)

    def test_table_integrand_interpolates(self):
        table = TableIntegrand([0.0, 0.0], [1.0, 1.0], np.array([[1.0, 2.0], [3.0, 4.0]]))
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5]])
        vals = table.evaluate(pts, None)
        assert vals == pytest.approx([1.0, 4.0, 2.5])

    def test_registry(self):
        f = integrand_from_config({"kind": "tilt_penalty", "reference_axes": [0, 1], "lam": 9.0}, n=3)
        assert f.sup_bound == 10.0
        assert isinstance(integrand_from_config({"kind": "area"}), AreaIntegrand)
        with pytest.raises(ValueError):
            integrand_from_config({"kind": "bogus"})


class TestPhiPsi:
    def test_area_gives_total_mass(self):
        v = flat_disc()
        assert phi_F(v, AreaIntegrand()) == pytest.approx(v.mass())

    def test_flat_disc_area_close_to_pi(self):
        v = flat_disc()
        assert phi_F(v, AreaIntegrand()) == pytest.approx(math.pi, rel=0.02)

    def test_tilt_penalty_vanishes_on_reference(self):
        v = flat_disc(count=2000)
        tp = TiltPenaltyIntegrand(H, lam=3.0)
        assert phi_F(v, tp) == pytest.approx(v.mass(), abs=1e-12)

    def test_monotone_in_integrand(self):
        v = flat_disc(count=2000)
        small = RiemannianWeightIntegrand(lambda p: np.full(len(p), 1.0), 1, 1)
        big = RiemannianWeightIntegrand(lambda p: 1.0 + np.abs(p[:, 0]), 1, 2)
        assert phi_F(v, small) <= phi_F(v, big)

    def test_isotropic_monte_carlo_with_report(self):
        iso = DiscreteVarifold.isotropic_set(np.zeros((1, 3)), [2.0], 2)
        tp = TiltPenaltyIntegrand(H, lam=1.0)
        val, report = phi_F(iso, tp, grassmann_samples=128, seed=4, with_report=True)
        assert report["grassmann_samples"] == 128
        assert report["mc_stderr"] > 0
        # average of 1 + ||P_T - P_H||^2 over the Grassmannian lies in (1, 2)
        assert 2.0 < val < 4.0

    def test_psi_empty_unrectifiable_reduces_to_phi(self):
        v = flat_disc(count=1000)
        empty = DiscreteVarifold.isotropic_set(np.zeros((0, 3)), np.zeros(0), 2)
        tp = TiltPenaltyIntegrand(H, lam=1.0)
        assert psi_F(v, empty, tp) == pytest.approx(phi_F(v, tp))

    def test_psi_area_counts_both_parts(self):
        v = flat_disc(count=1000)
        iso = DiscreteVarifold.isotropic_set(np.zeros((3, 3)), [0.1, 0.2, 0.3], 2)
        assert psi_F(v, iso, AreaIntegrand()) == pytest.approx(v.mass() + 0.6)

    def test_psi_sup_attained_on_axis_grid(self):
        iso = DiscreteVarifold.isotropic_set(np.zeros((1, 3)), [1.0], 2)
        empty = DiscreteVarifold(np.zeros((0, 3)), np.zeros((0, 3, 2)), np.zeros(0))
        tp = TiltPenaltyIntegrand(H, lam=1.0)
        assert psi_F(empty, iso, tp, sup_grid=64) == pytest.approx(2.0, abs=1e-12)

    def test_psi_validates_parts(self):
        v = flat_disc(count=10)
        with pytest.raises(ValueError):
            psi_F(v, v, AreaIntegrand())


class TestPullbackPushforward:
    def test_identity_map_keeps_integrand(self, rng):
        v = flat_disc(count=500)
        ident = SmoothMap.identity(3)
        f = TiltPenaltyIntegrand(H, lam=1.0)
        assert phi_F(v, pullback_integrand(ident, f)) == pytest.approx(phi_F(v, f))

    def test_scaling_pullback_formula(self, rng):
        r = 0.5
        scale = SmoothMap.affine(r * np.eye(3))
        f = RiemannianWeightIntegrand(lambda p: 1.0 + p[:, 0] ** 2, 1, 2)
        pf = pullback_integrand(scale, f)
        pts = rng.uniform(-1, 1, (50, 3))
        frames = np.broadcast_to(H.frame, (50, 3, 2))
        expect = r**2 * f.evaluate(r * pts, frames)
        assert np.abs(pf.evaluate(pts, frames) - expect).max() <= 1e-12

    def test_pullback_pushforward_identity(self, rng):
        v = flat_disc(count=800)
        for seed in range(3):
            g = np.random.default_rng(seed)
            a = g.standard_normal((3, 3)) + 2 * np.eye(3)
            phi = SmoothMap.affine(a, g.standard_normal(3))
            f = TiltPenaltyIntegrand(H, lam=1.0)
            lhs = phi_F(v, pullback_integrand(phi, f))
            rhs = phi_F(pushforward(phi, v), f)
            assert abs(lhs - rhs) <= 1e-9 * max(v.mass(), 1.0)

    def test_identity_pushforward(self):
        v = flat_disc(count=200)
        w = pushforward(SmoothMap.identity(3), v)
        assert w.mass() == pytest.approx(v.mass())
        assert np.allclose(w.points, v.points)

    def test_scaling_mass(self):
        v = flat_disc(count=500)
        w = pushforward(SmoothMap.affine(0.5 * np.eye(3)), v)
        assert w.mass() == pytest.approx(v.mass() * 0.25)

    def test_rank_drop_kills_mass(self):
        v = flat_disc(count=200)
        proj = np.zeros((3, 3))
        proj[0, 0] = 1.0
        assert pushforward(SmoothMap.affine(proj), v).mass() == 0.0

    def test_isotropic_routed_through_haar(self):
        iso = DiscreteVarifold.isotropic_set(np.zeros((2, 3)), [1.0, 1.0], 2)
        w = pushforward(SmoothMap.identity(3), iso, haar_draws=8, seed=0)
        assert w.mass() == pytest.approx(2.0)
        assert len(w) == 16


class TestSlicing:
    def test_circle_slice_mass(self):
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.05 / 16, points_per_unit_length=150)
        v = DiscreteVarifold.flat(pts, H, w)
        res = slice_varifold(v, norm_map(), 0.5, 0.05)
        assert res.mass() == pytest.approx(math.pi, rel=1e-9)

    def test_slice_tangent_orthogonal_to_gradient(self):
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.01, points_per_unit_length=60)
        v = DiscreteVarifold.flat(pts, H, w)
        res = slice_varifold(v, norm_map(), 0.5, 0.05)
        sv = res.varifold
        radial = sv.points / np.linalg.norm(sv.points, axis=1, keepdims=True)
        dots = np.abs(np.einsum("ni,ni->n", sv.frames[:, :, 0], radial))
        assert dots.max() <= 1e-10
        assert np.abs(sv.frames[:, 2, 0]).max() <= 1e-12  # in-plane

    def test_beyond_support_empty(self):
        v = flat_disc(count=500)
        assert slice_varifold(v, norm_map(), 2.0, 0.05).mass() == 0.0

    def test_linear_coordinate_slice_of_square(self, rng):
        # f = x_0 on a flat unit square: slice is a line of length 1
        side = 1.0
        pts = np.zeros((400 * 50, 3))
        g = np.stack(np.meshgrid(np.linspace(-0.5, 0.5, 400), np.linspace(-0.5, 0.5, 50), indexing="ij"), -1)
        pts[:, :2] = g.reshape(-1, 2)
        w = np.full(len(pts), side**2 / len(pts))
        v = DiscreteVarifold.flat(pts, H, w)
        a = np.zeros((1, 3))
        a[0, 0] = 1.0
        f = SmoothMap.affine(a)
        res = slice_varifold(v, f, 0.1, 0.06)
        assert res.mass() == pytest.approx(1.0, rel=0.03)
        tang = res.varifold.frames[:, :, 0]
        assert np.abs(np.abs(tang[:, 1]) - 1).max() <= 1e-12  # orthogonal to grad f

    def test_coarea_back_integration(self):
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.0025, points_per_unit_length=100)
        v = DiscreteVarifold.flat(pts, H, w)
        bin_w = 0.1
        ts = np.arange(bin_w / 2, 1.0, bin_w)
        total = sum(slice_varifold(v, norm_map(), t, bin_w).mass() * bin_w for t in ts)
        # integral of the coarea factor (= 1) over the disc is the disc area
        assert total == pytest.approx(v.mass(), rel=0.02)

    def test_bad_bin(self):
        v = flat_disc(count=10)
        with pytest.raises(ValueError):
            slice_varifold(v, norm_map(), 0.5, 0.0)


class TestBlowup:
    def test_far_side_collapses_to_endpoint(self, rng):
        k = blowup_map(norm_map(), 0.5, 0.2)
        pts = rng.uniform(-1, 1, (100, 3))
        pts = pts[np.linalg.norm(pts, axis=1) >= 0.5 + 0.2 * 1.01]
        img = k.value(pts)
        assert np.abs(img[:, 0]).max() == 0.0
        assert np.allclose(img[:, 1:], pts)
        inner = rng.uniform(-0.1, 0.1, (50, 3))
        img_in = k.value(inner)
        assert np.abs(img_in[:, 0] - 1.0).max() == 0.0

    def test_jacobian_matches_fd(self, rng):
        k = blowup_map(norm_map(), 0.5, 0.2)
        probes = rng.uniform(-1, 1, (400, 3))
        probes = probes[np.linalg.norm(probes, axis=1) > 0.05]
        fd = k.jacobian_fd(probes)
        assert np.abs(k.jacobian(probes) - fd).max() <= 1e-5

    def test_three_term_limit_residual_decreases(self):
        # ring grid chosen so the slice-bin edges at t +- bin/2 fall on ring
        # boundaries (no quantization bias in the product term)
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.001, points_per_unit_length=150)
        v = DiscreteVarifold.flat(pts, H, w)
        rho = norm_map()
        t = 0.5
        sl = slice_varifold(v, rho, t, 0.01).varifold
        rv = rho.value(v.points)[:, 0]
        m0, m1 = rv >= t, rv < t
        tau_grid = (np.arange(30) + 0.5) / 30
        resid = [0.0, 0.0, 0.0]
        deltas = (0.2, 0.1, 0.05)
        pushed = [pushforward(blowup_map(rho, t, d), v) for d in deltas]
        for alpha in blowup_test_functions():
            rhs = float(np.sum(v.weights[m0] * alpha(np.column_stack([np.zeros(m0.sum()), v.points[m0]]))))
            rhs += float(np.sum(v.weights[m1] * alpha(np.column_stack([np.ones(m1.sum()), v.points[m1]]))))
            rhs += sum(
                float(np.sum(sl.weights * alpha(np.column_stack([np.full(len(sl), tau), sl.points]))))
                for tau in tau_grid
            ) / len(tau_grid)
            for i, kv in enumerate(pushed):
                lhs = float(np.sum(kv.weights * alpha(kv.points)))
                resid[i] = max(resid[i], abs(lhs - rhs))
        assert resid[0] > resid[1] > resid[2]


class TestDensityRatio:
    def test_flat_plane_interior(self):
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.002, points_per_unit_length=200)
        v = DiscreteVarifold.flat(pts, H, w)
        for rec in density_ratio(v, np.array([0.05, 0.0, 0.0]), [0.3, 0.5]):
            assert rec.reliable
            assert rec.ratio == pytest.approx(math.pi, rel=0.03)

    def test_half_plane_edge(self):
        # half disc: points with x >= 0
        pts, w = ring_sampled_disc(1.0, ring_spacing=0.002, points_per_unit_length=200)
        keep = pts[:, 0] >= 0
        v = DiscreteVarifold.flat(pts[keep], H, w[keep])
        recs = density_ratio(v, np.zeros(3), [0.4])
        assert recs[0].ratio == pytest.approx(math.pi / 2, rel=0.05)

    def test_empty_varifold(self):
        v = DiscreteVarifold(np.zeros((0, 3)), np.zeros((0, 3, 2)), np.zeros(0))
        assert density_ratio(v, np.zeros(3), [0.5])[0].ratio == 0.0

    def test_unreliable_flag(self):
        pts, w = sample_disc(1.0, 200, seed=0)
        v = DiscreteVarifold.flat(pts, H, w)
        recs = density_ratio(v, np.zeros(3), [1e-4])
        assert not recs[0].reliable

    def test_line_density_is_two(self):
        pts, w = sample_segment([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 4000)
        line = Plane.axis(3, (0,))
        v = DiscreteVarifold.flat(pts, line, w)
        recs = density_ratio(v, np.zeros(3), [0.5])
        assert recs[0].ratio == pytest.approx(2.0, rel=0.01)
        assert unit_ball_volume(1) == 2.0


class TestCoveringMeasure:
    def test_unit_segment(self):
        pts, _ = sample_segment([0, 0], [1, 0], 4096)
        val, res = covering_measure(pts, 1, 1 / 256)
        assert val == pytest.approx(1.0, rel=0.02)
        assert res == 1 / 256

    def test_empty(self):
        assert covering_measure(np.zeros((0, 2)), 1, 0.1)[0] == 0.0


class TestEllipticityProbe:
    def test_area_margins_exactly_one(self):
        report = ellipticity_probe(AreaIntegrand(), np.zeros(3), H, sup_grid=64)
        margins = [e["margin"] for e in report.margins if "margin" in e]
        assert margins
        assert all(m == pytest.approx(1.0, abs=1e-9) for m in margins)
        assert not report.refuted

    def test_convex_combination_keeps_min_margin(self):
        tp = TiltPenaltyIntegrand(H, lam=0.4)

        class Convex(TiltPenaltyIntegrand):
            def evaluate(self, points, frames):
                return 0.5 * super().evaluate(points, frames) + 0.5

        combo = Convex(H, lam=0.4)
        r_area = ellipticity_probe(AreaIntegrand(), np.zeros(3), H, sup_grid=64)
        r_tp = ellipticity_probe(tp, np.zeros(3), H, sup_grid=64)
        r_combo = ellipticity_probe(combo, np.zeros(3), H, sup_grid=64)
        if not (r_tp.refuted or r_area.refuted):
            for ea, et, ec in zip(r_area.margins, r_tp.margins, r_combo.margins):
                if "margin" in ec:
                    assert ec["margin"] >= min(ea["margin"], et["margin"]) - 1e-9

    def test_non_elliptic_integrand_refuted(self):
        # strongly favours tilted planes: flat discs lose to a graph bump
        class TiltReward(TiltPenaltyIntegrand):
            def evaluate(self, points, frames):
                base = super().evaluate(points, frames)
                return 11.0 - base  # 10 on the reference plane, 1 when orthogonal

        bad = TiltReward(H, lam=9.0)
        bad.inf_bound, bad.sup_bound = 1.0, 10.0
        report = ellipticity_probe(bad, np.zeros(3), H, sup_grid=64)
        assert report.refuted
        gaps = {e["candidate"]: e["psi_gap"] for e in report.margins}
        assert min(gaps.values()) < 0

    def test_frozen_integrand_uses_fixed_point(self):
        f = RiemannianWeightIntegrand(lambda p: 1.0 + np.abs(p[:, 0]), 1, 2)
        frozen = FrozenIntegrand(f, np.array([3.0, 0.0, 0.0]))
        pts = np.zeros((5, 3))
        assert np.all(frozen.evaluate(pts, None) == 4.0)


class TestCsvRoundtrip:
    def test_tangent_and_isotropic(self, tmp_path):
        v1 = flat_disc(count=20)
        iso = DiscreteVarifold.isotropic_set(np.ones((3, 3)), [0.1, 0.2, 0.3], 2)
        v = DiscreteVarifold.concat([v1, iso])
        path = tmp_path / "set.csv"
        v.to_csv(path)
        w = DiscreteVarifold.from_csv(path)
        assert np.allclose(w.points, v.points)
        assert np.allclose(w.weights, v.weights)
        assert np.array_equal(w.isotropic, v.isotropic)
        assert np.allclose(w.frames[~w.isotropic], v.frames[~v.isotropic])

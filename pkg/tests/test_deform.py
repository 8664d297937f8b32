import numpy as np
import pytest

from conftest import skeleton_distance
from gmtkit.cubemaps import Box, SmoothMap
from gmtkit.cubical import CubeFamily, DyadicCube, cubical_complex
from gmtkit.deform import (
    DeformationPlan,
    center_bound_constant,
    deform_one_cube,
    deform_onto_skeleton,
    image_mass_bound,
    purge_unrectifiable,
    select_center,
)
from gmtkit.grassmann import Plane
from gmtkit.sampling import four_corner_cantor, sample_circle, sample_disc, sample_segment
from gmtkit.varifold import DiscreteVarifold, covering_measure, pushforward

H = Plane.axis(3, (0, 1))


def unit_grid_3d(cells=4):
    fam = CubeFamily(
        [DyadicCube(0, (i, j, k), (0, 1, 2), 3) for i in range(cells) for j in range(cells) for k in range(cells)]
    )
    return fam, cubical_complex(fam)


def disc_in_grid(count=5000, seed=3):
    pts, w = sample_disc(1.3, count, seed=seed, center=[2.0, 2.0, 2.05])
    return DiscreteVarifold.flat(pts, H, w)


CUBE3 = DyadicCube(0, (0, 0, 0), (0, 1, 2), 3)


class TestSelectCenter:
    def test_empty_measures_center(self):
        a, info = select_center(CUBE3, [], 0.2)
        assert np.array_equal(a, CUBE3.center())
        assert info["branch"] == "empty"

    def test_averaged_branch_bound(self, rng):
        pts, w = sample_disc(0.5, 2000, seed=2, center=[0.5, 0.5, 0.5])
        v = DiscreteVarifold.flat(pts, H, w)
        a, info = select_center(CUBE3, [v], 0.2, rng=np.random.default_rng(0))
        assert info["branch"] == "averaged"
        # centre lies in the middle half of the cube
        assert np.all(np.abs(a - 0.5) <= 0.25 + 1e-12)
        assert info["ratios"][0] <= info["bounds"][0]
        # the single-measure averaged bound holds with the module constant
        assert info["ratios"][0] <= center_bound_constant(3, 2) * 1.5

    def test_off_support_branch(self, rng):
        square = DyadicCube(0, (0, 0, 0), (0, 1), 3)
        pts, w = sample_segment([0.2, 0.2, 0.0], [0.8, 0.8, 0.0], 200)
        v = DiscreteVarifold.flat(pts, Plane.axis(3, (0, 1)), w)
        a, info = select_center(square, [v], 0.1, rng=np.random.default_rng(1))
        assert info["branch"] == "off-support"
        assert info["clearance"] > 0.01
        assert np.min(np.linalg.norm(pts - a, axis=1)) == pytest.approx(info["clearance"])

    def test_deterministic_given_seed(self):
        pts, w = sample_disc(0.5, 500, seed=2, center=[0.5, 0.5, 0.5])
        v = DiscreteVarifold.flat(pts, H, w)
        a1, _ = select_center(CUBE3, [v], 0.2, rng=np.random.default_rng(5))
        a2, _ = select_center(CUBE3, [v], 0.2, rng=np.random.default_rng(5))
        assert np.array_equal(a1, a2)


class TestDeformOneCube:
    def test_identity_far_from_cube(self, rng):
        v = DiscreteVarifold.flat(*sample_disc(0.4, 500, seed=1, center=[0.5, 0.5, 0.5]), plane=None) if False else None
        pts, w = sample_disc(0.4, 500, seed=1, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        phi = deform_one_cube(CUBE3, [vf], 0.2, rng=np.random.default_rng(0))
        far = np.array([[1.4, 0.5, 0.5], [0.5, 0.5, -0.25], [2.0, 2.0, 2.0]])
        assert np.array_equal(phi.value(far), far)

    def test_samples_land_on_boundary(self):
        pts, w = sample_disc(0.5, 2000, seed=2, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        phi = deform_one_cube(CUBE3, [vf], 0.2, rng=np.random.default_rng(0))
        img = phi.value(pts)
        lo, hi = CUBE3.bounds()
        face_dist = np.minimum(img - lo, hi - img).min(axis=1)
        assert np.abs(face_dist).max() <= 1e-12

    def test_derivative_bounded_near_boundary(self, rng):
        pts, w = sample_disc(0.5, 800, seed=2, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        eps = 0.2
        phi = deform_one_cube(CUBE3, [vf], eps, rng=np.random.default_rng(0))
        probes = rng.uniform(0, 1, (4000, 3))
        near = probes[np.minimum(probes, 1 - probes).min(axis=1) <= eps]
        norms = np.linalg.svd(phi.jacobian(near), compute_uv=False)[:, 0]
        assert np.isfinite(norms.max())
        assert norms.max() < 200.0

    def test_measure_integral_bound_reported(self):
        pts, w = sample_disc(0.5, 2000, seed=2, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        phi = deform_one_cube(CUBE3, [vf], 0.2, rng=np.random.default_rng(0))
        norms = np.linalg.svd(phi.jacobian(pts), compute_uv=False)[:, 0]
        gamma_emp = float(np.sum(w * norms**2) / np.sum(w))
        assert gamma_emp < center_bound_constant(3, 2)

    def test_jacobian_matches_fd(self, rng):
        pts, w = sample_disc(0.5, 300, seed=2, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        phi = deform_one_cube(CUBE3, [vf], 0.2, rng=np.random.default_rng(0))
        probes = rng.uniform(-0.1, 1.1, (400, 3))
        a = np.array(phi.meta["center"])
        probes = probes[np.linalg.norm(probes - a, axis=1) > 2 * phi.meta["freeze_radius"]]
        fd = phi.jacobian_fd(probes)
        assert np.abs(phi.jacobian(probes) - fd).max() <= 2e-5

    def test_support_box_maps_into_itself(self, rng):
        # basic-deformation structure: supported in a convex set it preserves
        pts, w = sample_disc(0.4, 300, seed=1, center=[0.5, 0.5, 0.5])
        vf = DiscreteVarifold.flat(pts, H, w)
        eps = 0.2
        phi = deform_one_cube(CUBE3, [vf], eps, rng=np.random.default_rng(0))
        box = rng.uniform(-eps, 1 + eps, (2000, 3))
        img = phi.value(box)
        assert np.all((img >= -eps - 1e-12) & (img <= 1 + eps + 1e-12))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            deform_one_cube(CUBE3, [], 0.3)


class TestDeformOntoSkeleton:
    def setup_method(self):
        self.family, self.complex = unit_grid_3d()

    def test_empty_sets_give_identity_plan(self):
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [], 2, 0.05)
        assert len(plan.stages) == 0
        x = np.array([[0.5, 0.5, 0.5]])
        assert np.array_equal(g1.value(x), x)
        assert np.array_equal(f1.value(x), x)

    def test_disc_desk_instance(self):
        v = disc_in_grid()
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        img = g1.value(v.points)
        d = skeleton_distance(img, self.complex.skeleton(2))
        assert (d <= 0.05 / 4).all()
        ratio = pushforward(g1, v).mass() / v.mass()
        assert np.isfinite(ratio) and 0.5 < ratio < 10.0

    def test_identity_outside_g_eps(self, rng):
        v = disc_in_grid(count=2000)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        probes = rng.uniform(-1.0, 5.0, (3000, 3))
        outside = probes[
            np.linalg.norm(probes - np.clip(probes, 0, 4), axis=1) > 0.05
        ]
        assert np.array_equal(f1.value(outside), outside)

    def test_cube_preservation(self, rng):
        v = disc_in_grid(count=2000)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        for cube in list(self.family)[:8]:
            lo, hi = cube.bounds()
            pts = rng.uniform(lo, hi, (200, 3))
            img = f1.value(pts)
            assert np.all((img >= lo - 1e-9) & (img <= hi + 1e-9))

    def test_monotone_stage_descent(self):
        # after the descent, no sample sits in the interior of any 3-cube
        v = disc_in_grid(count=2000)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        img = g1.value(v.points)
        for cube in self.family:
            lo, hi = cube.bounds()
            strictly_inside = np.all((img > lo + 1e-9) & (img < hi - 1e-9), axis=1)
            assert not strictly_inside.any()

    def test_full_or_empty_census(self):
        from gmtkit.deform import _coverage_fraction, _inplane_coordinates

        v = disc_in_grid()
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        img = f1.value(v.points)
        partial = 0
        for cube in self.complex.skeleton(2):
            u, z, _, _ = _inplane_coordinates(cube, img)
            inside = np.all(np.abs(u) < 1 - 1e-9, axis=1) & (np.linalg.norm(z, axis=1) <= 1e-9)
            if not inside.any():
                continue
            if _coverage_fraction(cube, img[inside]) < 0.98:
                partial += 1
        assert partial == 0

    def test_circle_lands_in_one_skeleton(self):
        pts, w, tan = sample_circle(1.3, 2000, center=[2.0, 2.0, 2.05])
        v = DiscreteVarifold(pts, tan[:, :, None], w)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 1, 0.05, seed=2)
        img = f1.value(pts)
        d = skeleton_distance(img, self.complex.skeleton(1))
        assert (d <= 0.05 / 4).all()

    def test_homotopy_endpoints_and_identity(self, rng):
        v = disc_in_grid(count=1500)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        x = v.points[:50]
        assert np.array_equal(plan.homotopy(0.0, x), x)
        assert np.abs(plan.homotopy(1.0, x) - f1.value(x)).max() <= 1e-12
        exterior = rng.uniform(4.2, 6.0, (100, 3))
        for t in (0.17, 0.5, 0.83):
            assert np.array_equal(plan.homotopy(t, exterior), exterior)

    def test_stage_descent_is_monotone(self):
        # after each descent stage, samples avoid the interiors of every
        # already-processed cube
        v = disc_in_grid(count=1500)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        pts = v.points
        done = []
        for stage in plan.g_stages():
            pts = stage.map.value(pts)
            done.append(stage.cube)
            for cube in done:
                lo, hi = cube.bounds()
                inside = np.all((pts > lo + 1e-9) & (pts < hi - 1e-9), axis=1)
                assert not inside.any()

    def test_homotopy_measure_estimate_finite(self):
        v = disc_in_grid(count=1500)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        est = plan.homotopy_mass_estimate(v)
        delta = self.family.max_side()
        gamma = est / (delta * v.mass())
        assert np.isfinite(gamma) and gamma > 0

    def test_plan_replay_bitwise(self):
        v = disc_in_grid(count=1500)
        plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=1)
        replay = DeformationPlan.from_json(plan.to_json())
        assert np.array_equal(replay.apply_stages(v.points), plan.apply_stages(v.points))

    def test_eps_range_checked(self):
        with pytest.raises(ValueError):
            deform_onto_skeleton(self.family, self.complex, [], 2, 0.2)

    def test_mass_ratio_stable_across_rotations(self):
        from gmtkit.sampling import random_rotation, rotate_about

        ratios = []
        base_pts, w = sample_disc(1.3, 3000, seed=3, center=[2.0, 2.0, 2.05])
        for k in range(3):
            rot = random_rotation(3, seed=100 + k)
            pts = rotate_about(base_pts, [2.0, 2.0, 2.05], rot)
            frame = rot @ H.frame
            v = DiscreteVarifold.flat(pts, Plane(frame), w)
            plan, g1, f1 = deform_onto_skeleton(self.family, self.complex, [v], 2, 0.05, seed=7)
            ratios.append(pushforward(g1, v).mass() / v.mass())
        mean = float(np.mean(ratios))
        assert all(abs(r - mean) <= 0.2 * mean for r in ratios)


class TestImageMassBound:
    def test_identity(self):
        v = disc_in_grid(count=3000)
        lhs, rhs, meta = image_mass_bound(SmoothMap.identity(3), v, None)
        assert rhs == pytest.approx(v.mass())
        assert lhs <= rhs * 1.25

    def test_scaling(self):
        v = disc_in_grid(count=3000)
        half = SmoothMap.affine(0.5 * np.eye(3))
        lhs, rhs, _ = image_mass_bound(half, v, None)
        assert rhs == pytest.approx(v.mass() * 0.25)
        assert lhs <= rhs * 1.25

    def test_rank_collapse(self):
        v = disc_in_grid(count=1000)
        proj = np.zeros((3, 3))
        proj[0, 0] = 1.0
        collapse = SmoothMap.affine(proj)
        lhs, rhs, _ = image_mass_bound(collapse, v, None, resolution=0.05)
        assert lhs <= rhs + 1e-6 or lhs < 0.3  # image is a segment: tiny 2-measure

    def test_region_restriction(self):
        v = disc_in_grid(count=2000)
        region = Box([1.5, 1.5, 1.5], [2.5, 2.5, 2.5])
        lhs, rhs, _ = image_mass_bound(SmoothMap.identity(3), v, region)
        assert rhs < v.mass()


class TestPurge:
    def test_empty_unrectifiable_reduces_to_deformation(self):
        seg_pts, seg_w = sample_segment([0.2, 0.5], [0.8, 0.5], 300)
        s_r = DiscreteVarifold.flat(seg_pts, Plane.axis(2, (0,)), seg_w)
        s_u = DiscreteVarifold.isotropic_set(np.zeros((0, 2)), np.zeros(0), 1)
        g, report = purge_unrectifiable(s_r, s_u, ([-0.5, -0.5], [1.5, 1.5]), 0.5, min_level=4)
        assert report["rho"] is None

    def test_cantor_with_segment(self):
        # the composite transports the rectifiable part with a bounded factor
        # and its perturbation obeys the deviation bound; the box-counting
        # ratio of the unrectifiable part is reported (the epsilon-killing
        # check itself runs against a straight-fibre map, see test_cubemaps)
        cpts, cw = four_corner_cantor(6, angle=0.004)
        s_u = DiscreteVarifold.isotropic_set(cpts, cw, 1)
        seg_pts, seg_w = sample_segment([0.1, -0.25], [1.1, -0.25], 1024)
        s_r = DiscreteVarifold.flat(seg_pts, Plane.axis(2, (0,)), seg_w)
        g, report = purge_unrectifiable(
            s_r, s_u, ([-1.0, -1.0], [2.0, 2.0]), 0.2, min_level=4, cluster_gap=0.2
        )
        res = 0.25**6
        cantor_in, _ = covering_measure(cpts, 1, res)
        cantor_out, _ = covering_measure(g.value(cpts), 1, res)
        assert np.isfinite(cantor_out / cantor_in)
        assert report["rho"]["balls"]
        seg_res = 1.0 / 512
        seg_in, _ = covering_measure(seg_pts, 1, seg_res)
        seg_out, _ = covering_measure(g.value(seg_pts), 1, seg_res)
        gamma_emp = seg_out / seg_in
        assert np.isfinite(gamma_emp) and gamma_emp < 10.0

    def test_vacuous_bound_eps_one(self):
        cpts, cw = four_corner_cantor(4, angle=0.004)
        s_u = DiscreteVarifold.isotropic_set(cpts, cw, 1)
        s_r = DiscreteVarifold(np.zeros((0, 2)), np.zeros((0, 2, 1)), np.zeros(0))
        g, report = purge_unrectifiable(
            s_r, s_u, ([-1.0, -1.0], [2.0, 2.0]), 1.0, min_level=4, cluster_gap=0.2
        )
        res = 0.25**4
        out, _ = covering_measure(g.value(cpts), 1, res)
        inp, _ = covering_measure(cpts, 1, res)
        assert out <= 1.0 * inp * 1.5

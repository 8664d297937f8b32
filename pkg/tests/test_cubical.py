import itertools

import numpy as np
import pytest

from gmtkit.cubical import (
    BallSet,
    BoxUnion,
    CubeFamily,
    DyadicCube,
    PuncturedPlane,
    _cube_dist_inf,
    cubical_complex,
    neighbors,
    skeleton,
    whitney_family,
)


def brute_force_complex(family):
    """Independent face-enumeration oracle for CX(F)."""
    faces = set()
    for cube in family:
        faces.update(f.canonical() for f in cube.faces())
    kept = set()
    for f in faces:
        if f.dim == 0:
            kept.add(f)
            continue
        finer = [g for g in faces if g.dim == f.dim and g.level == f.level + 1]
        if not any(f.interiors_overlap(g) for g in finer):
            kept.add(f)
    return kept


def unit_grid(nx, ny, level=0, n=2):
    axes = tuple(range(n))
    cubes = []
    for c in itertools.product(range(nx), range(ny)):
        cubes.append(DyadicCube(level, tuple(c) + (0,) * (n - 2), axes, n))
    return CubeFamily(cubes)


class TestDyadicCube:
    def test_geometry(self):
        c = DyadicCube(1, (2, 3), (0, 1), 2)
        assert c.side == 0.5
        assert np.array_equal(c.center(), [1.25, 1.75])
        lo, hi = c.bounds()
        assert np.array_equal(lo, [1.0, 1.5]) and np.array_equal(hi, [1.5, 2.0])

    def test_faces_count(self):
        c = DyadicCube(0, (0, 0, 0), (0, 1, 2), 3)
        assert len(c.faces()) == 27  # 3^n faces including itself
        assert len(c.faces(dims=1)) == 12
        assert len(c.faces(dims=0)) == 8

    def test_face_relation_same_level(self):
        c = DyadicCube(0, (0, 0), (0, 1), 2)
        edge = DyadicCube(0, (1, 0), (1,), 2)
        assert edge.is_face_of(c)
        half_edge = DyadicCube(1, (2, 0), (1,), 2)
        assert not half_edge.is_face_of(c)  # finer level: not a face by definition

    def test_children_partition(self):
        c = DyadicCube(0, (1, 1), (0, 1), 2)
        kids = c.children()
        assert len(kids) == 4
        assert all(k.side == 0.5 for k in kids)
        assert all(k.parent() == c for k in kids)

    def test_integer_incidence(self):
        a = DyadicCube(0, (0, 0), (0, 1), 2)
        b = DyadicCube(1, (2, 0), (0, 1), 2)  # [1, 1.5] x [0, 0.5]
        assert a.intersects(b)
        assert not a.interiors_overlap(b)
        c = DyadicCube(1, (1, 1), (0, 1), 2)  # strictly inside a
        assert a.intersects(c)

    def test_interiors_overlap_needs_same_span(self):
        e1 = DyadicCube(0, (1, 0), (1,), 2)
        e2 = DyadicCube(0, (0, 1), (0,), 2)
        assert not e1.interiors_overlap(e2)
        e3 = DyadicCube(1, (2, 1), (1,), 2)
        assert e1.interiors_overlap(e3)


class TestAdmissibility:
    def test_uniform_grid_admissible(self):
        fam = unit_grid(3, 3)
        assert fam.admissible()

    def test_interior_overlap_rejected(self):
        a = DyadicCube(0, (0, 0), (0, 1), 2)
        b = DyadicCube(1, (1, 1), (0, 1), 2)
        fam = CubeFamily([a, b])
        kinds = [v[0] for v in fam.admissibility_violations()]
        assert "interior-overlap" in kinds

    def test_size_ratio_rejected(self):
        a = DyadicCube(0, (0, 0), (0, 1), 2)
        b = DyadicCube(2, (4, 0), (0, 1), 2)  # quarter-size touching neighbour
        fam = CubeFamily([a, b])
        kinds = [v[0] for v in fam.admissibility_violations()]
        assert "size-ratio" in kinds

    def test_boundary_coverage_strict_mode(self):
        fam = unit_grid(3, 3)
        violations = fam.admissibility_violations(check_boundary=True)
        # outer frontier facets are uncovered; inner facets are fine
        assert all(v[0] == "boundary-uncovered" for v in violations)
        inner_facets = {v[2] for v in violations}
        center_cube = DyadicCube(0, (1, 1), (0, 1), 2)
        assert not any(f.is_face_of(center_cube) for f in inner_facets)


class TestCubicalComplex:
    def test_single_unit_cube(self):
        cx = cubical_complex(CubeFamily([DyadicCube(0, (0, 0), (0, 1), 2)]))
        assert len(cx.skeleton(2)) == 1
        assert len(cx.skeleton(1)) == 4
        assert len(cx.skeleton(0)) == 4

    def test_unit_cube_r3_edges(self):
        cx = cubical_complex(CubeFamily([DyadicCube(0, (0, 0, 0), (0, 1, 2), 3)]))
        assert len(skeleton(cx, 1)) == 12
        assert len(skeleton(cx, 0)) == 8
        assert len(skeleton(cx, 3)) == 1

    def test_subdivided_shared_edge(self):
        big = DyadicCube(0, (0, 0), (0, 1), 2)
        s1 = DyadicCube(1, (2, 0), (0, 1), 2)
        s2 = DyadicCube(1, (2, 1), (0, 1), 2)
        cx = cubical_complex(CubeFamily([big, s1, s2]))
        edges = set(cx.skeleton(1))
        assert DyadicCube(0, (1, 0), (1,), 2) not in edges
        assert DyadicCube(1, (2, 0), (1,), 2) in edges
        assert DyadicCube(1, (2, 1), (1,), 2) in edges
        assert len(edges) == 10
        # eight geometrically distinct vertices (duplicates merge)
        assert len(cx.skeleton(0)) == 8

    def test_matches_brute_force_oracle_on_random_families(self, rng):
        for trial in range(12):
            cubes = {DyadicCube(1, (0, 0), (0, 1), 2)}
            # grow a random connected uniform family, sometimes with half cubes
            frontier = [(0, 0)]
            for _ in range(rng.integers(3, 12)):
                base = frontier[rng.integers(len(frontier))]
                step = [(1, 0), (-1, 0), (0, 1), (0, -1)][rng.integers(4)]
                new = (base[0] + step[0], base[1] + step[1])
                cubes.add(DyadicCube(1, new, (0, 1), 2))
                frontier.append(new)
            fam = CubeFamily(sorted(cubes))
            if not fam.admissible():
                continue
            cx = cubical_complex(fam)
            assert set(cx.all_cubes()) == brute_force_complex(fam)

    def test_rejects_non_admissible_with_pair(self):
        a = DyadicCube(0, (0, 0), (0, 1), 2)
        b = DyadicCube(2, (4, 0), (0, 1), 2)
        with pytest.raises(ValueError, match="size-ratio"):
            cubical_complex(CubeFamily([a, b]))

    def test_no_equal_dim_interior_overlap(self):
        big = DyadicCube(0, (0, 0), (0, 1), 2)
        s1 = DyadicCube(1, (2, 0), (0, 1), 2)
        s2 = DyadicCube(1, (2, 1), (0, 1), 2)
        cx = cubical_complex(CubeFamily([big, s1, s2]))
        for k, cubes in cx.by_dim.items():
            for a, b in itertools.combinations(cubes, 2):
                assert not a.interiors_overlap(b)

    def test_skeleton_range_check(self):
        cx = cubical_complex(CubeFamily([DyadicCube(0, (0, 0), (0, 1), 2)]))
        with pytest.raises(ValueError):
            skeleton(cx, 5)

    def test_json_and_obj_export(self):
        cx = cubical_complex(CubeFamily([DyadicCube(0, (0, 0), (0, 1), 2)]))
        text = cx.to_json()
        assert '"cubes"' in text
        obj = cx.skeleton_to_obj(1)
        assert obj.startswith("v ") and "\nl " in obj


class TestWhitney:
    def test_whole_plane_single_scale(self):
        u = BoxUnion([([-64.0, -64.0], [64.0, 64.0])])
        fam = whitney_family(u, ([-1, -1], [1, 1]), min_level=3, top_level=0)
        sides = {c.side for c in fam}
        assert sides == {1.0}
        assert len(fam) == 4
        assert fam.meta["top_level_parent_waivers"] == 4

    def test_punctured_plane_dyadic_shrink(self):
        u = PuncturedPlane([0.0, 0.0])
        fam = whitney_family(u, ([-1, -1], [1, 1]), min_level=6, top_level=2)
        sides = sorted({c.side for c in fam})
        assert len(sides) >= 3  # dyadic halving toward the puncture
        for cube in fam:
            assert _cube_dist_inf(cube, u) > 2 * cube.side
            if cube.level > fam.meta["top_level"]:
                parent = cube.parent()
                assert not (_cube_dist_inf(parent, u) > 2 * parent.side)
        assert fam.admissible()

    def test_open_ball_cubes_inside(self):
        u = BallSet([0.0, 0.0], 1.0)
        fam = whitney_family(u, ([-2, -2], [2, 2]), min_level=5, top_level=1)
        assert len(fam) > 0
        assert fam.admissible()
        for cube in fam:
            lo, hi = cube.bounds()
            corners = np.array(list(itertools.product(*zip(lo, hi))))
            assert u.contains(corners).all()

    def test_empty_intersection(self):
        u = BallSet([10.0, 10.0], 0.5)
        fam = whitney_family(u, ([-1, -1], [1, 1]), min_level=4, top_level=0)
        assert len(fam) == 0

    def test_truncation_recorded(self):
        u = PuncturedPlane([0.0, 0.0])
        fam = whitney_family(u, ([-1, -1], [1, 1]), min_level=4, top_level=2)
        assert fam.meta["truncated_below_min_level"] > 0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_admissible_for_random_box_unions(self, seed):
        rng = np.random.default_rng(seed)
        boxes = []
        for _ in range(3):
            lo = rng.integers(-6, 3, 2) / 4.0
            size = rng.integers(2, 6, 2) / 4.0
            boxes.append((lo, lo + size))
        u = BoxUnion(boxes)
        fam = whitney_family(u, ([-2, -2], [2, 2]), min_level=4, top_level=1)
        assert fam.admissible()
        for cube in fam:
            assert _cube_dist_inf(cube, u) > 2 * cube.side


class TestNeighbors:
    def test_rings_zero_and_one(self):
        fam = unit_grid(4, 4)
        q = DyadicCube(0, (1, 1), (0, 1), 2)
        assert len(neighbors(fam, q, 0)) == 1
        assert len(neighbors(fam, q, 1)) == 9

    def test_brute_force_match(self, rng):
        fam = unit_grid(5, 5)
        cubes = list(fam)
        q = cubes[7]
        expect = {q}
        for _ in range(2):
            expect |= {r for r in cubes if any(r.intersects(c) for c in expect)}
        assert set(neighbors(fam, q, 2)) == expect

    def test_requires_membership(self):
        fam = unit_grid(2, 2)
        with pytest.raises(ValueError):
            neighbors(fam, DyadicCube(0, (9, 9), (0, 1), 2), 1)

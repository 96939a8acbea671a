import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incompress import exclusion as ex
from incompress import plasma
from incompress.tf import SubsetError

R1 = 1 / math.sqrt(math.pi)


@pytest.fixture(scope="module")
def jellium_50():
    return plasma.minimize(plasma.PlasmaModel(50), seed=3).config


@pytest.fixture(scope="module")
def jellium_30():
    return plasma.minimize(plasma.PlasmaModel(30), seed=1).config


class TestPointConfig:
    def test_caps(self):
        assert ex.PointConfig([(0, 0)]).cap == 1.0
        assert ex.PointConfig([(0, 0)], "plasma", 3).cap == pytest.approx(1 / (3 * math.pi))

    def test_rejects(self):
        with pytest.raises(ValueError):
            ex.PointConfig(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            ex.PointConfig([(0, np.nan)])
        with pytest.raises(ex.FrameError):
            ex.PointConfig([(0, 0)], "other")
        with pytest.raises(ValueError):
            ex.PointConfig([(0, 0)], "plasma", 0)

    def test_frame_round_trip(self, rng):
        c = ex.PointConfig(rng.normal(size=(7, 2)), "unit", 2)
        back = c.to_frame("plasma").to_frame("unit")
        assert np.abs(back.points - c.points).max() <= 1e-15
        assert c.to_frame("plasma").points[0] == pytest.approx(c.points[0] * math.sqrt(2 * math.pi))

    def test_immutable(self):
        c = ex.PointConfig([(0, 0), (1, 1)])
        with pytest.raises(ValueError):
            c.points[0, 0] = 3


class TestMinDistance:
    def test_three_points(self):
        assert ex.min_pairwise_distance(ex.PointConfig([(0, 0), (1, 0), (0, 2)])) == 1.0

    def test_hexagon(self):
        t = np.arange(6) * np.pi / 3
        hexa = np.column_stack([np.cos(t), np.sin(t)])
        assert ex.min_pairwise_distance(hexa) == pytest.approx(1.0, abs=1e-15)

    def test_minimized_jellium(self, jellium_50):
        assert ex.min_pairwise_distance(jellium_50) >= R1 * (1 - 1e-2)

    def test_errors(self):
        with pytest.raises(ValueError):
            ex.min_pairwise_distance(ex.PointConfig([(0, 0)]))
        with pytest.raises(ex.FrameError):
            ex.min_pairwise_distance(ex.PointConfig([(0, 0), (1, 0)], "plasma"))
        with pytest.raises(ValueError):
            ex.min_pairwise_distance([(0, 0), (1, 0)], method="tree")

    def test_duplicates(self):
        assert ex.min_pairwise_distance([(1, 1), (2, 2), (1, 1)], method="bucketed") == 0.0

    @settings(max_examples=40)
    @given(st.integers(2, 400), st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
    def test_bucketed_matches_direct(self, n, seed, scale):
        p = np.random.default_rng(seed).uniform(-scale, scale, size=(n, 2))
        assert ex.min_pairwise_distance(p, "bucketed") == ex.min_pairwise_distance(p, "direct")

    def test_bucketed_clustered(self, rng):
        p = np.vstack([rng.normal(size=(300, 2)) * 1e-3, rng.normal(size=(300, 2)) * 50])
        assert ex.min_pairwise_distance(p, "bucketed") == ex.min_pairwise_distance(p, "direct")


class TestSubsetCheck:
    def test_singleton_violation(self):
        c = ex.check_exclusion_subset(ex.PointConfig([(0, 0), (0.4, 0)]), [0])
        assert not c.passed and c.method == "disk"
        (v,) = c.violations
        assert v.point == 1 and v.phi == pytest.approx(0.0952532012366384, abs=1e-12)

    def test_singleton_pass(self):
        assert ex.check_exclusion_subset(ex.PointConfig([(0, 0), (1, 0)]), [0]).passed

    def test_separated_pair(self):
        c = ex.check_exclusion_subset(ex.PointConfig([(0, 0), (0.6, 0), (1.2, 0)]), [0, 2])
        assert c.passed and c.method == "disk"

    def test_close_pair_uses_tf(self):
        # merged region of two nuclei at distance 0.8 reaches the midpoint
        c = ex.check_exclusion_subset(ex.PointConfig([(0, 0), (0.4, 0.0), (0.8, 0)]), [0, 2])
        assert c.method == "tf"
        assert [v.point for v in c.violations] == [1]
        assert c.violations[0].phi > 0

    def test_close_pair_far_point(self):
        c = ex.check_exclusion_subset(ex.PointConfig([(0, 0), (0.4, 3.0), (0.8, 0)]), [0, 2])
        assert c.passed

    def test_subset_errors(self):
        cfg = ex.PointConfig([(0, 0), (1, 0)])
        for bad in ([], [0, 1], [5]):
            with pytest.raises(SubsetError):
                ex.check_exclusion_subset(cfg, bad)

    def test_plasma_frame_input(self):
        cfg = ex.PointConfig([(0, 0), (0.4, 0)]).to_frame("plasma")
        assert not ex.check_exclusion_subset(cfg, [0]).passed


class TestAudit:
    def test_square_lattice(self):
        i, j = np.meshgrid(np.arange(6), np.arange(6))
        rep = ex.audit_exclusion(np.column_stack([i.ravel(), j.ravel()]), ex.AuditPolicy.singletons_only())
        assert rep.passed and rep.subsets_checked == 36 and rep.min_distance == 1.0

    def test_close_pair_singletons(self):
        rep = ex.audit_exclusion([(0, 0), (0.5, 0)], ex.AuditPolicy.singletons_only())
        assert len(rep.violations) >= 1
        assert {v.subset for v in rep.violations} <= {(0,), (1,)}

    def test_minimized_full_policy(self, jellium_30):
        rep = ex.audit_exclusion(jellium_30)
        assert rep.passed, rep.violations
        assert rep.tf_solves > 0 and rep.disk_checks >= 30

    def test_workers_deterministic(self, jellium_30):
        pol = ex.AuditPolicy(cluster_radius=None, random_count=3, random_size=2, seed=4)
        a = ex.audit_exclusion(jellium_30, pol, workers=1).as_dict()
        b = ex.audit_exclusion(jellium_30, pol, workers=3).as_dict()
        assert a == b

    def test_policy_subsets(self, jellium_30):
        subs = ex.policy_subsets(jellium_30, ex.AuditPolicy(random_count=5, seed=9))
        assert len(subs) == len(set(subs))
        assert all(0 < len(s) < 30 for s in subs)
        assert subs == ex.policy_subsets(jellium_30, ex.AuditPolicy(random_count=5, seed=9))
        assert subs[:30] == [(i,) for i in range(30)]

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ex.AuditPolicy(pair_margin=-1)
        with pytest.raises(ValueError):
            ex.AuditPolicy(cluster_stride=0)

    @settings(max_examples=25)
    @given(st.integers(2, 25), st.integers(0, 2**31 - 1), st.floats(0.5, 4))
    def test_singleton_audit_iff_min_distance(self, n, seed, side):
        p = np.random.default_rng(seed).uniform(0, side, size=(n, 2))
        rep = ex.audit_exclusion(p, ex.AuditPolicy.singletons_only())
        assert rep.passed == (ex.min_pairwise_distance(p) >= R1)

    @settings(max_examples=5)
    @given(st.integers(2, 10), st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3]))
    def test_frame_covariance(self, n, seed, ell):
        p = np.random.default_rng(seed).uniform(0, 2, size=(n, 2))
        unit = ex.PointConfig(p)
        plas = ex.PointConfig(p * math.sqrt(math.pi * ell), "plasma", ell)
        pol = ex.AuditPolicy(cluster_radius=None)
        a = ex.audit_exclusion(unit, pol)
        b = ex.audit_exclusion(plas, pol)
        assert [(v.subset, v.point) for v in a.violations] == [(v.subset, v.point) for v in b.violations]
        assert b.min_distance == pytest.approx(a.min_distance, rel=1e-12)


class TestPacking:
    def test_five_points(self):
        assert ex.packing_density(np.zeros((5, 2)), ex.Disk((0, 0), 10)) == pytest.approx(0.015915494309189534)

    def test_strict_interior(self):
        assert ex.packing_density([(1, 0)], ex.Disk((0, 0), 1)) == 0.0

    def test_lattice_density(self):
        p = ex.triangular_lattice(20000, ex.UNIT_LATTICE_SPACING)
        assert ex.packing_density(p, ex.Disk((0.1, 0.2), 40)) == pytest.approx(1.0, abs=0.01)

    def test_polygon(self):
        sq = ex.Polygon([(0, 0), (2, 0), (2, 2), (0, 2)])
        assert sq.area == 4
        assert ex.packing_density([(1, 1), (3, 3), (0.5, 1.5)], sq) == 0.5
        dil = ex.Polygon(sq.vertices, 0.5)
        assert dil.area == pytest.approx(4 + 8 * 0.5 + math.pi * 0.25)
        assert dil.contains([(2.4, 1.0), (2.4, 2.4)]).tolist() == [True, False]

    def test_degenerate(self):
        with pytest.raises(ex.RegionError):
            ex.Polygon([(0, 0), (1, 1), (2, 2)])
        with pytest.raises(ex.RegionError):
            ex.Disk((0, 0), 0)
        with pytest.raises(ex.RegionError):
            ex.Polygon([(0, 0), (2, 0), (1, 0.2), (1, 2)], dilation=0.1)

    def test_region_dicts(self):
        for r in (ex.Disk((1, 2), 3), ex.Polygon([(0, 0), (1, 0), (0, 1)], 0.2)):
            back = ex.region_from_dict(r.as_dict())
            assert back.area == pytest.approx(r.area)
        with pytest.raises(ex.RegionError):
            ex.region_from_dict({"type": "ellipse"})

    def test_minimized_bulk(self):
        cfg = plasma.minimize(plasma.PlasmaModel(400), seed=0).config
        assert ex.packing_density(cfg, ex.Disk((0, 0), 6)) <= 1.10

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from incompress.gridfield import (
    ChargeList,
    GridSpec,
    GridTooSmallError,
    OutOfDomainError,
    ScalarField,
    cell_average_log,
    deposit_charges,
    discrete_laplacian,
    field_to_csv,
    log_potential,
    read_charges_csv,
    read_grid2d,
    self_cell_log,
    subharmonicity_check,
    write_charges_csv,
    write_grid2d,
)

# average of -log|y| over the unit square centered at 0 (3/2 - pi/4 + log(2)/2)
UNIT_SELF_CELL = 1.06117542688252


def grid(h=0.1, n=20, origin=(-1.0, -1.0)):
    return GridSpec(origin, h, n, n)


class TestGridSpec:
    def test_centers_and_extent(self):
        g = GridSpec((1.0, 2.0), 0.5, 4, 3)
        x, y = g.axes()
        assert np.allclose(x, [1.25, 1.75, 2.25, 2.75])
        assert np.allclose(y, [2.25, 2.75, 3.25])
        assert g.extent == (2.0, 1.5)

    @pytest.mark.parametrize("h,nx,ny", [(0.0, 4, 4), (-1.0, 4, 4), (0.1, 1, 4), (0.1, 4, 1)])
    def test_invalid(self, h, nx, ny):
        with pytest.raises(ValueError):
            GridSpec((0, 0), h, nx, ny)

    def test_covering_snaps_to_lattice(self):
        g = GridSpec.covering((-0.33, 0.07), (0.5, 0.9), 0.1)
        assert g.origin[0] == pytest.approx(-0.4)
        assert g.origin[1] == pytest.approx(0.0)
        assert g.origin[0] + g.extent[0] >= 0.5 - 1e-12

    def test_field_rejects_nonfinite(self):
        g = grid(n=3)
        v = np.zeros((3, 3))
        v[1, 1] = np.nan
        with pytest.raises(ValueError):
            ScalarField(g, v)

    def test_field_is_immutable(self):
        f = ScalarField.zeros(grid(n=3))
        with pytest.raises(ValueError):
            f.values[0, 0] = 1.0


class TestDeposit:
    def test_charge_at_cell_center(self):
        g = grid(h=0.1, n=10)
        x, y = g.axes()
        f = deposit_charges(ChargeList([(x[3], y[6])], [1.0]), g)
        assert f.values[3, 6] == pytest.approx(1 / 0.01)
        assert np.count_nonzero(f.values) == 1
        assert f.integral() == pytest.approx(1.0)

    def test_charge_mid_edge(self):
        g = grid(h=0.1, n=10)
        x, y = g.axes()
        f = deposit_charges(ChargeList([(0.5 * (x[3] + x[4]), y[2])], [1.0]), g)
        assert f.values[3, 2] == pytest.approx(0.5 / 0.01)
        assert f.values[4, 2] == pytest.approx(0.5 / 0.01)
        assert f.integral() == pytest.approx(1.0)

    def test_seven_charges_conserve_total(self, rng):
        g = grid(h=0.05, n=40)
        p = rng.uniform(-0.9, 0.9, size=(7, 2))
        w = rng.random(7)
        w *= 7 / w.sum()
        f = deposit_charges(ChargeList(p, w), g)
        assert abs(f.integral() - 7) <= 1e-12 * 7

    def test_out_of_domain(self):
        with pytest.raises(OutOfDomainError):
            deposit_charges(ChargeList([(5.0, 0.0)], [1.0]), grid())

    @given(
        st.lists(st.tuples(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8)), min_size=1, max_size=6),
        st.lists(st.floats(0.0, 3.0), min_size=6, max_size=6),
    )
    def test_first_moment_preserved(self, pts, ws):
        g = grid(h=0.1, n=20)
        p = np.array(pts)
        w = np.array(ws[: len(p)])
        f = deposit_charges(ChargeList(p, w), g)
        X, Y = g.centers()
        q = f.values * g.cell_area
        assert q.sum() == pytest.approx(w.sum(), rel=1e-12, abs=1e-12)
        assert (q * X).sum() == pytest.approx((w * p[:, 0]).sum(), abs=1e-10)
        assert (q * Y).sum() == pytest.approx((w * p[:, 1]).sum(), abs=1e-10)


class TestLogKernel:
    def test_cell_average_log_matches_quadrature(self):
        # scipy dblquad of log|y| over [0.3, 0.7] x [-0.2, 0.5]
        assert cell_average_log(0.3, 0.7, -0.2, 0.5) == pytest.approx(-0.6080002793631011, abs=1e-12)

    @pytest.mark.parametrize("h", [1.0, 0.1, 1 / 256])
    def test_self_cell(self, h):
        assert self_cell_log(h) == pytest.approx(UNIT_SELF_CELL - math.log(h), abs=1e-12)

    def test_unit_charge_far_field(self):
        g = GridSpec((-2.0, -2.0), 0.05, 80, 80)
        rho = np.zeros(g.shape)
        rho[40, 40] = 1 / g.cell_area
        phi = log_potential(ScalarField(g, rho), "fft").values
        X, Y = g.centers()
        r = np.hypot(X - X[40, 40], Y - Y[40, 40])
        far = r > 1.0
        assert np.abs(phi[far] + np.log(r[far])).max() < 1e-12

    def test_direct_and_fft_agree(self, rng):
        g = GridSpec((0.0, 0.0), 0.1, 24, 20)
        f = ScalarField(g, rng.random(g.shape))
        a = log_potential(f, "direct").values
        b = log_potential(f, "fft").values
        assert np.abs(a - b).max() <= 1e-8

    def test_linearity(self, rng):
        g = GridSpec((0.0, 0.0), 0.1, 16, 16)
        f1 = ScalarField(g, rng.random(g.shape))
        f2 = ScalarField(g, rng.random(g.shape))
        lhs = log_potential(f1 + f2).values
        rhs = log_potential(f1).values + log_potential(f2).values
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_poisson_consistency_second_order(self):
        # -Lap(phi) -> 2 pi rho in the interior for a smooth bump
        errs = []
        for h in (0.1, 0.05):
            g = GridSpec.covering((-2, -2), (2, 2), h)
            f = ScalarField.from_function(g, lambda x, y: np.exp(-4 * (x * x + y * y)))
            lap, valid = discrete_laplacian(log_potential(f))
            X, Y = g.centers()
            inner = valid & (np.hypot(X, Y) < 1.0)
            errs.append(np.abs(lap + 2 * np.pi * f.values)[inner].max())
        assert errs[1] < errs[0] / 3


class TestLaplacian:
    def test_quadratic_exact(self):
        g = grid(h=0.1, n=12)
        lap, valid = discrete_laplacian(ScalarField.from_function(g, lambda x, y: x * x + y * y))
        assert np.allclose(lap[valid], 4.0, atol=1e-10)
        assert not valid[0].any() and not valid[:, -1].any()

    def test_constant(self):
        g = grid(n=5)
        lap, valid = discrete_laplacian(ScalarField(g, np.full(g.shape, 3.0)))
        assert np.all(lap[valid] == 0)

    def test_cubic(self):
        g = grid(h=0.1, n=12)
        lap, valid = discrete_laplacian(ScalarField.from_function(g, lambda x, y: x**3))
        X, _ = g.centers()
        assert np.allclose(lap[valid], 6 * X[valid], atol=1e-9)

    def test_too_small(self):
        with pytest.raises(GridTooSmallError):
            discrete_laplacian(ScalarField.zeros(GridSpec((0, 0), 1.0, 2, 5)))


class TestSubharmonicity:
    def test_harmonic_modulus(self):
        rep = subharmonicity_check(lambda z: np.abs(z - 2.0), 0.0, [0.5, 1.0])
        assert abs(rep.worst_deficit) < 1e-12

    def test_exponential(self):
        rep = subharmonicity_check(lambda z: np.exp(z.real), 0.3 + 0.2j, [0.25, 2.0])
        assert abs(rep.worst_deficit) < 1e-12

    def test_sum_of_moduli(self):
        rep = subharmonicity_check(lambda z: np.abs(z) + np.abs(z - 1), (0.5, 0.0), [0.25])
        assert rep.deficits[0] > 0
        assert rep.max_violation == 0.0

    def test_superharmonic_detected(self):
        rep = subharmonicity_check(lambda z: np.exp(-np.abs(z) ** 2), 0.0, [0.5])
        assert rep.max_violation < -0.2

    @pytest.mark.parametrize("kw", [{"n_angles": 4}, {"radii": [0.0]}])
    def test_bad_arguments(self, kw):
        args = {"sampler": lambda z: np.ones(z.shape), "center": 0.0, "radii": [1.0], **kw}
        with pytest.raises(ValueError):
            subharmonicity_check(**args)

    def test_nonpositive_sample(self):
        with pytest.raises(ValueError):
            subharmonicity_check(lambda z: np.abs(z), 0.0, [1.0])


class TestIO:
    def test_grid2d_roundtrip(self, tmp_path, rng):
        g = GridSpec((-0.3, 1.7), 0.0123, 7, 5)
        f = ScalarField(g, rng.normal(size=g.shape))
        write_grid2d(f, tmp_path / "f.grid2d")
        back = read_grid2d(tmp_path / "f.grid2d")
        assert back.grid == g
        assert np.array_equal(back.values, f.values)
        head = (tmp_path / "f.grid2d").read_bytes().split(b"\n", 1)[0]
        assert head.startswith(b"GRID2D 7 5 ")

    def test_charges_roundtrip(self, tmp_path, rng):
        c = ChargeList(rng.normal(size=(5, 2)), rng.random(5))
        write_charges_csv(c, tmp_path / "c.csv")
        back = read_charges_csv(tmp_path / "c.csv")
        assert np.array_equal(back.positions, c.positions)
        assert np.array_equal(back.weights, c.weights)

    def test_charges_default_weight(self, tmp_path):
        (tmp_path / "c.csv").write_text("0.5,1\n2,3\n")
        c = read_charges_csv(tmp_path / "c.csv")
        assert np.array_equal(c.weights, [1.0, 1.0])

    def test_field_csv(self, tmp_path):
        g = GridSpec((0, 0), 1.0, 2, 2)
        field_to_csv(ScalarField(g, [[1, 2], [3, 4]]), tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "x,y,value" and len(lines) == 5

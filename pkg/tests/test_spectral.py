"""Tests for the spectral laws, transforms, and the implicit solver."""

import numpy as np
import pytest
from scipy.integrate import quad

from overlapkit import (
    AtomicStieltjes,
    MPSpec,
    ShapeRatios,
    default_eps_schedule,
    empirical_stieltjes,
    evolve_stieltjes,
    mp_density,
    mp_density_max,
    mp_edges,
    mp_hilbert,
    mp_stieltjes,
    plemelj_boundary,
    quantile,
    tail_mass,
)
from overlapkit.ensemble import normal_matrix
from overlapkit.errors import (
    BranchError,
    ParameterError,
    SingularInputError,
    UnstableBoundaryError,
)
from overlapkit.spectral import bulk_grid, bulk_interval, extrapolate_to_zero, implicit_residual

RATIOS = ShapeRatios(q=0.9, alpha=0.4, beta=0.8, t=3.0)
UNIT = MPSpec(a=1.0, b=1.0, t=1.0)


class TestEdgesAndDensity:
    def test_unit_edges_collapse(self):
        assert mp_edges(UNIT) == (0.0, 4.0)

    def test_edges_full_law(self):
        # hand evaluation: sqrt(1/0.9) = 1.0540925533894598
        lo, hi = mp_edges(MPSpec(a=1.0, b=1.0 / 0.9, t=3.0))
        assert lo == pytest.approx(0.008778012996574689, abs=1e-15)
        assert hi == pytest.approx(12.657888653670094, abs=1e-12)

    def test_edges_truncated_law(self):
        lo, hi = mp_edges(MPSpec(a=0.4, b=0.8 / 0.9, t=3.0))
        root = np.sqrt(0.4), np.sqrt(0.8 / 0.9)
        assert lo == pytest.approx((root[0] - root[1]) ** 2 * 3.0, rel=1e-15)
        assert hi == pytest.approx((root[0] + root[1]) ** 2 * 3.0, rel=1e-15)

    def test_invalid_spec_rejected(self):
        with pytest.raises(ParameterError):
            MPSpec(a=0.0, b=1.0, t=1.0)
        with pytest.raises(ParameterError):
            MPSpec(a=1.0, b=1.0, t=0.0)

    def test_density_value_at_center(self):
        # sqrt(2*2)/(4*pi) = 1/(2*pi)
        assert mp_density(UNIT, 2.0) == pytest.approx(1.0 / (2.0 * np.pi), abs=1e-15)

    def test_density_zero_at_edges_and_outside(self):
        spec = MPSpec.full(RATIOS)
        lo, hi = mp_edges(spec)
        assert mp_density(spec, lo) == 0.0
        assert mp_density(spec, hi) == 0.0
        assert mp_density(spec, hi + 1.0) == 0.0
        assert mp_density(spec, lo / 2.0) == 0.0

    @pytest.mark.parametrize("spec", [MPSpec.full(RATIOS), MPSpec.truncated(RATIOS)])
    def test_density_normalised(self, spec):
        # independent oracle: adaptive quadrature of the raw density
        lo, hi = mp_edges(spec)
        mass, err = quad(lambda u: mp_density(spec, u), lo, hi, limit=400)
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_density_max_location(self):
        spec = MPSpec.full(RATIOS)
        lo, hi = mp_edges(spec)
        peak = mp_density_max(spec)
        grid = np.linspace(lo, hi, 20001)
        assert mp_density(spec, grid).max() <= peak + 1e-12


class TestHilbert:
    def test_value(self):
        assert mp_hilbert(UNIT, 2.0) == pytest.approx(0.5, abs=1e-15)

    def test_zero_of_full_law(self):
        q, t = 0.9, 3.0
        spec = MPSpec(a=1.0, b=1.0 / q, t=t)
        assert mp_hilbert(spec, (1.0 / q - 1.0) * t) == pytest.approx(0.0, abs=1e-15)

    def test_zero_of_truncated_law(self):
        r = RATIOS
        spec = MPSpec.truncated(r)
        point = (r.beta / r.q - r.alpha) * r.t
        assert mp_hilbert(spec, point) == pytest.approx(0.0, abs=1e-15)

    def test_singular_at_zero(self):
        with pytest.raises(SingularInputError):
            mp_hilbert(UNIT, 0.0)


class TestStieltjes:
    def test_large_z_asymptotic(self):
        for spec in (UNIT, MPSpec.full(RATIOS), MPSpec.truncated(RATIOS)):
            z = 1e6 + 0.0j
            assert abs(mp_stieltjes(spec, z) - 1.0 / z) <= 1e-5 * abs(1.0 / z)

    def test_short_time_limit(self):
        # the formula cancels catastrophically below t ~ sqrt(eps)
        g = mp_stieltjes(MPSpec(a=1.0, b=1.0, t=1e-8), 1.0j)
        assert abs(g - 1.0 / 1.0j) < 1e-7

    def test_boundary_limit_matches_hilbert_density(self):
        # Plemelj: lim G(2 - i eps) = v + i pi rho = 1/2 + i/2
        for eps in (1e-6, 1e-8):
            g = mp_stieltjes(UNIT, 2.0 - 1j * eps)
            assert g.real == pytest.approx(0.5, abs=1e-5)
            assert g.imag == pytest.approx(np.pi * mp_density(UNIT, 2.0), abs=1e-5)

    def test_herglotz_sign(self):
        rng = np.random.default_rng(1)
        spec = MPSpec.full(RATIOS)
        for _ in range(200):
            z = complex(rng.uniform(-5, 20), rng.uniform(-4, 4))
            if abs(z.imag) < 1e-3 or z == 0:
                continue
            g = mp_stieltjes(spec, z)
            assert g.imag * z.imag < 0

    def test_on_support_rejected(self):
        with pytest.raises(BranchError):
            mp_stieltjes(UNIT, 2.0 + 0.0j)

    def test_closed_form_solves_implicit_equation(self):
        # the closed form must satisfy the characteristics fixed point
        r = RATIOS
        spec = MPSpec.full(r)
        for z in (5 + 1j, 0.5 - 2j, 14 + 0.3j):
            g = mp_stieltjes(spec, z)
            res = implicit_residual(g, lambda w: 1.0 / w, z, r.t, 1.0, r.c)
            assert abs(res) < 1e-12


class TestQuantile:
    def test_endpoints(self):
        spec = MPSpec.full(RATIOS)
        lo, hi = mp_edges(spec)
        assert quantile(spec, 0.0) == hi
        assert quantile(spec, 1.0) == lo

    def test_median_against_quadrature_oracle(self):
        lam_star = quantile(UNIT, 0.5)
        mass, err = quad(lambda u: mp_density(UNIT, u), lam_star, 4.0, limit=400)
        assert mass == pytest.approx(0.5, abs=1e-8)

    def test_roundtrip_identity(self):
        spec = MPSpec.truncated(RATIOS)
        lo, hi = mp_edges(spec)
        for lam in np.linspace(lo + 1e-6, hi - 1e-6, 9):
            assert quantile(spec, tail_mass(spec, lam)) == pytest.approx(lam, abs=1e-8)

    def test_monotone_decreasing(self):
        spec = MPSpec.full(RATIOS)
        values = [quantile(spec, x) for x in np.linspace(0.05, 0.95, 10)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            quantile(UNIT, 1.5)


class TestEmpiricalStieltjes:
    def test_single_atom(self):
        assert empirical_stieltjes([1.0], 1 + 1j, 1) == pytest.approx(-1j)

    def test_zero_atoms_with_scale(self):
        assert empirical_stieltjes([0.0, 0.0], 2.0, 2) == pytest.approx(0.5)

    def test_empty(self):
        assert empirical_stieltjes([], 1j, 5) == 0.0

    def test_atom_collision(self):
        with pytest.raises(SingularInputError):
            empirical_stieltjes([2.0], 2.0, 1)

    def test_monte_carlo_matches_closed_form(self):
        # pooled spectra of 25 independent draws at N=400: 1e4 atoms
        q, t = 0.9, 1.0
        N = 400
        M = int(round(N / q))
        spec = MPSpec(a=1.0, b=M / N, t=t)
        eigs = []
        for trial in range(25):
            x = np.sqrt(t / N) * normal_matrix((M, N), seed=77, trial=trial)
            eigs.append(np.linalg.svd(x, compute_uv=False) ** 2)
        eigs = np.concatenate(eigs)
        z = 5.0 + 1.0j
        assert abs(empirical_stieltjes(eigs, z, eigs.size) - mp_stieltjes(spec, z)) < 0.02


class TestEvolveStieltjes:
    def test_time_zero_identity(self):
        g0 = AtomicStieltjes([0.3, 1.2])
        z = 0.7 + 0.2j
        assert evolve_stieltjes(g0, z, 0.0, RATIOS) == g0(z)

    def test_zero_matrix_matches_closed_form(self):
        r = RATIOS
        g0 = AtomicStieltjes([0.0])
        full = MPSpec.full(r)
        trunc = MPSpec.truncated(r)
        rng = np.random.default_rng(3)
        for _ in range(25):
            z = complex(rng.uniform(0.05, 14), rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 0.5))
            assert abs(evolve_stieltjes(g0, z, r.t, r) - mp_stieltjes(full, z)) < 1e-10
            assert abs(
                evolve_stieltjes(g0, z, r.t, r, truncated=True) - mp_stieltjes(trunc, z)
            ) < 1e-10

    def test_atom_spectra_residuals(self):
        rng = np.random.default_rng(11)
        r = RATIOS
        for _ in range(5):
            atoms = np.sort(rng.uniform(0.0, 3.0, size=6))[::-1]
            g0 = AtomicStieltjes(atoms)
            z = complex(rng.uniform(0.1, 8.0), rng.choice([-1, 1]) * rng.uniform(0.05, 1.0))
            g = evolve_stieltjes(g0, z, r.t, r)
            assert abs(implicit_residual(g, g0, z, r.t, 1.0, r.c)) < 1e-10
            gt = evolve_stieltjes(g0, z, r.t, r, truncated=True)
            assert abs(implicit_residual(gt, g0, z, r.t, r.alpha, r.c_tilde)) < 1e-10

    def test_herglotz_sign_of_outputs(self):
        r = RATIOS
        g0 = AtomicStieltjes([0.0, 0.5, 2.0, 2.0])
        rng = np.random.default_rng(8)
        for _ in range(20):
            z = complex(rng.uniform(-1, 12), rng.choice([-1, 1]) * rng.uniform(1e-3, 2))
            g = evolve_stieltjes(g0, z, r.t, r)
            assert g.imag * z.imag < 0

    def test_real_axis_rejected(self):
        with pytest.raises(ParameterError):
            evolve_stieltjes(AtomicStieltjes([0.0]), 5.0, 1.0, RATIOS)


class TestPlemelj:
    def test_closed_form_center(self):
        sched = default_eps_schedule(4.0)
        bv = plemelj_boundary(lambda p, t: mp_stieltjes(UNIT, p), 2.0, 1.0, sched)
        assert bv.hilbert == pytest.approx(0.5, abs=1e-6)
        assert bv.density == pytest.approx(1.0 / (2.0 * np.pi), abs=1e-6)

    def test_far_outside_support(self):
        sched = default_eps_schedule(4.0)
        bv = plemelj_boundary(lambda p, t: mp_stieltjes(UNIT, p), 25.0, 1.0, sched)
        assert bv.density <= 1e-8

    def test_general_path_equals_closed_path(self):
        # zero starting matrix: the solver route must agree with the
        # closed form on a 20-point grid
        r = RATIOS
        spec = MPSpec.full(r)
        g0 = AtomicStieltjes([0.0])
        grid = bulk_grid(spec, 20)
        lo, hi = mp_edges(spec)
        for lam in grid:
            sched = default_eps_schedule(min(hi - lo, 4.0 * (lam - lo)))
            via_solver = plemelj_boundary(
                lambda p, t: evolve_stieltjes(g0, p, t, r), lam, r.t, sched
            )
            via_closed = plemelj_boundary(
                lambda p, t: mp_stieltjes(spec, p), lam, r.t, sched
            )
            assert via_solver.hilbert == pytest.approx(via_closed.hilbert, abs=1e-6)
            assert via_solver.density == pytest.approx(via_closed.density, abs=1e-6)

    def test_plemelj_consistency_on_bulk_grid(self):
        # boundary limit equals the (hilbert, density) pair everywhere
        spec = MPSpec.truncated(RATIOS)
        lo, hi = mp_edges(spec)
        for lam in bulk_grid(spec, 12):
            sched = default_eps_schedule(min(hi - lo, 4.0 * min(lam - lo, hi - lam)))
            bv = plemelj_boundary(lambda p, t: mp_stieltjes(spec, p), lam, RATIOS.t, sched)
            assert bv.hilbert == pytest.approx(mp_hilbert(spec, lam), abs=1e-5)
            assert bv.density == pytest.approx(mp_density(spec, lam), abs=1e-5)

    def test_schedule_validation(self):
        with pytest.raises(ParameterError):
            extrapolate_to_zero([1e-2, 5e-3], [1.0, 2.0])
        with pytest.raises(ParameterError):
            extrapolate_to_zero([5e-3, 1e-2, 2e-2], [1.0, 2.0, 3.0])

    def test_unstable_extrapolation_detected(self):
        xs = np.array([8e-2, 4e-2, 2e-2, 1e-2])
        ys = [1.0, 1.01, 0.99, 57.0]
        with pytest.raises(UnstableBoundaryError):
            extrapolate_to_zero(xs, ys)


class TestBulkGrid:
    def test_density_floor_satisfied(self):
        for spec in (MPSpec.full(RATIOS), MPSpec.truncated(RATIOS)):
            grid = bulk_grid(spec, 15)
            floor = 0.02 * mp_density_max(spec)
            assert np.all(mp_density(spec, grid) >= floor)

    def test_interval_brackets_grid(self):
        spec = MPSpec.truncated(RATIOS)
        left, right = bulk_interval(spec)
        grid = bulk_grid(spec, 7)
        assert left <= grid[0] < grid[-1] <= right

"""Spectral densities, Stieltjes transforms, and the implicit time evolution.

Two square-root spectral families cover both spectra of interest: the
squared singular values of the full noisy matrix follow the law with
scales ``(a, b) = (1, 1/q)`` and those of the truncated block follow
``(a, b) = (alpha, beta/q)``.  For a general starting matrix the
time-``t`` Stieltjes transform is only available through an implicit
equation, solved here by damped Newton with continuation in ``t``.
Real-axis boundary values (Hilbert transform and density) are recovered
by evaluating just below the axis and extrapolating the offset to zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import (
    BranchError,
    ParameterError,
    SingularInputError,
    SolverError,
    UnstableBoundaryError,
)
from .params import ShapeRatios

__all__ = [
    "MPSpec",
    "SpectrumT0",
    "BoundaryValue",
    "SolverOptions",
    "AtomicStieltjes",
    "mp_edges",
    "mp_density",
    "mp_density_max",
    "mp_hilbert",
    "mp_stieltjes",
    "tail_mass",
    "quantile",
    "bulk_interval",
    "empirical_stieltjes",
    "evolve_stieltjes",
    "implicit_residual",
    "plemelj_boundary",
    "default_eps_schedule",
    "extrapolate_to_zero",
]


@dataclass(frozen=True)
class MPSpec:
    """Square-root spectral law with edges ``(sqrt(a) -+ sqrt(b))^2 * t``.

    ``MPSpec.full(r)`` is the law of the full spectrum and
    ``MPSpec.truncated(r)`` the law of the nonzero truncated spectrum,
    for shape ratios ``r``.  Both have unit mass since ``a <= b`` in
    those instantiations.
    """

    a: float
    b: float
    t: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0 or self.t <= 0:
            raise ParameterError(
                f"MPSpec requires a, b, t > 0, got a={self.a}, b={self.b}, t={self.t}"
            )

    @staticmethod
    def full(r: ShapeRatios) -> "MPSpec":
        """Law of the full spectrum: scales (1, 1/q)."""
        return MPSpec(a=1.0, b=1.0 / r.q, t=r.t)

    @staticmethod
    def truncated(r: ShapeRatios) -> "MPSpec":
        """Law of the nonzero truncated spectrum: scales (alpha, beta/q)."""
        return MPSpec(a=r.alpha, b=r.beta / r.q, t=r.t)


@dataclass(frozen=True)
class SpectrumT0:
    """Noise-free spectra: squared singular values of A and of its kept block.

    ``eigs`` has length N (zeros included), ``tilde_eigs`` length n
    (nonzero block only); both sorted descending.
    """

    eigs: np.ndarray
    tilde_eigs: np.ndarray

    def __post_init__(self):
        for name in ("eigs", "tilde_eigs"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 1:
                raise ParameterError(f"{name} must be one-dimensional")
            if np.any(arr < 0):
                raise ParameterError(f"{name} must be nonnegative")
            if np.any(np.diff(arr) > 0):
                raise ParameterError(f"{name} must be sorted descending")

    @staticmethod
    def from_matrix(a: np.ndarray, m: int, n: int) -> "SpectrumT0":
        """Spectra of a matrix and of its kept m x n block."""
        a = np.asarray(a, dtype=float)
        eigs = np.sort(np.linalg.svd(a, compute_uv=False) ** 2)[::-1]
        full = np.zeros(min(a.shape))
        full[: eigs.size] = eigs
        block = np.sort(np.linalg.svd(a[:m, :n], compute_uv=False) ** 2)[::-1]
        return SpectrumT0(eigs=full, tilde_eigs=block[:n])


@dataclass(frozen=True)
class BoundaryValue:
    """Boundary value of a Stieltjes transform on the real axis."""

    hilbert: float
    density: float


def mp_edges(spec: MPSpec) -> tuple[float, float]:
    """Support edges ``((sqrt(a)-sqrt(b))^2 t, (sqrt(a)+sqrt(b))^2 t)``."""
    sa, sb = np.sqrt(spec.a), np.sqrt(spec.b)
    return (sa - sb) ** 2 * spec.t, (sa + sb) ** 2 * spec.t


def mp_density(spec: MPSpec, lam) -> np.ndarray | float:
    """Spectral density ``sqrt((hi-lam)(lam-lo)) / (2 pi a lam t)``.

    Zero outside the support.  Accepts scalars or arrays.
    """
    lo, hi = mp_edges(spec)
    lam_arr = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam_arr)
    inside = (lam_arr > lo) & (lam_arr < hi)
    lam_in = lam_arr[inside]
    out[inside] = np.sqrt((hi - lam_in) * (lam_in - lo)) / (
        2.0 * np.pi * spec.a * lam_in * spec.t
    )
    if np.isscalar(lam) or lam_arr.ndim == 0:
        return float(out)
    return out


def mp_density_max(spec: MPSpec) -> float:
    """Maximum of the density over its support.

    The maximiser is the harmonic mean of the edges.  When the lower
    edge is zero (square shapes) the density diverges there and the
    maximum is infinite.
    """
    lo, hi = mp_edges(spec)
    if lo <= 0.0:
        return np.inf
    lam_star = 2.0 * hi * lo / (hi + lo)
    return float(mp_density(spec, lam_star))


def mp_hilbert(spec: MPSpec, lam: float) -> float:
    """Hilbert transform ``(lam - (b - a) t) / (2 a lam t)``."""
    if lam == 0:
        raise SingularInputError("Hilbert transform is singular at lam = 0")
    return (lam - (spec.b - spec.a) * spec.t) / (2.0 * spec.a * lam * spec.t)


def _sqrt_branch(z: complex, lo: float, hi: float) -> complex:
    """sqrt((z - hi)(z - lo)) analytic off [lo, hi], ~ +z at infinity."""
    return np.sqrt(complex(z) - hi) * np.sqrt(complex(z) - lo)


def mp_stieltjes(spec: MPSpec, z: complex) -> complex:
    """Closed-form Stieltjes transform of the square-root law.

    ``(z - (b - a) t - sqrt((z - hi)(z - lo))) / (2 a z t)``, with the
    branch that decays like ``1/z`` and has imaginary part of sign
    opposite to ``Im z``.
    """
    lo, hi = mp_edges(spec)
    z = complex(z)
    if z == 0:
        raise SingularInputError("Stieltjes transform evaluation at z = 0")
    if z.imag == 0.0 and lo <= z.real <= hi:
        raise BranchError(
            f"z = {z} lies on the support [{lo:.6g}, {hi:.6g}]; "
            "the two boundary values differ"
        )
    w = _sqrt_branch(z, lo, hi)
    g = (z - (spec.b - spec.a) * spec.t - w) / (2.0 * spec.a * z * spec.t)
    if z.imag != 0.0 and g.imag * z.imag > 0.0:
        g = (z - (spec.b - spec.a) * spec.t + w) / (2.0 * spec.a * z * spec.t)
        if g.imag * z.imag > 0.0:
            raise BranchError(f"no admissible square-root branch at z = {z}")
    return g


def _theta_integrand(spec: MPSpec):
    """Density integrand under lam = lo + (hi-lo) sin^2(theta).

    The substitution absorbs both square-root edge factors, leaving a
    smooth integrand ``(hi-lo)^2 sin^2 cos^2 / (pi a t lam)``.
    """
    lo, hi = mp_edges(spec)
    width = hi - lo

    def integrand(theta):
        s, c = np.sin(theta), np.cos(theta)
        lam = lo + width * s * s
        return width * width * s * s * c * c / (np.pi * spec.a * spec.t * lam)

    return integrand


def tail_mass(spec: MPSpec, lam: float) -> float:
    """Mass of the density above ``lam``: integral of the density on [lam, hi]."""
    lo, hi = mp_edges(spec)
    if lam <= lo:
        return 1.0
    if lam >= hi:
        return 0.0
    theta = np.arcsin(np.sqrt((lam - lo) / (hi - lo)))
    val, _ = quad(_theta_integrand(spec), theta, np.pi / 2.0, limit=200,
                  epsabs=1e-13, epsrel=1e-13)
    return float(val)


def quantile(spec: MPSpec, x: float) -> float:
    """Point with upper-tail mass ``x``; decreasing in x, clamped to the edges."""
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"quantile fraction must lie in [0, 1], got {x}")
    lo, hi = mp_edges(spec)
    if x == 0.0:
        return hi
    if x == 1.0:
        return lo
    return float(brentq(lambda lam: tail_mass(spec, lam) - x, lo, hi,
                        xtol=1e-14, rtol=8.9e-16, maxiter=200))


def bulk_interval(spec: MPSpec, floor_fraction: float = 0.02) -> tuple[float, float]:
    """Interval where the density stays above ``floor_fraction`` of its maximum.

    Used as the guard region for boundary inversions, which divide by
    the density.  Requires a strictly positive lower edge.
    """
    lo, hi = mp_edges(spec)
    rho_max = mp_density_max(spec)
    if not np.isfinite(rho_max):
        raise ParameterError(
            "density maximum diverges (lower edge at 0); no bulk interval"
        )
    floor = floor_fraction * rho_max
    lam_star = 2.0 * hi * lo / (hi + lo)
    left = brentq(lambda u: mp_density(spec, u) - floor, lo, lam_star,
                  xtol=1e-13)
    right = brentq(lambda u: mp_density(spec, u) - floor, lam_star, hi,
                   xtol=1e-13)
    return float(left), float(right)


def bulk_grid(spec: MPSpec, count: int, floor_fraction: float = 0.02,
              edge_mass: float = 0.02) -> np.ndarray:
    """Evenly spaced bulk points for inversion grids.

    Intersects the density-threshold interval with a quantile trim that
    drops ``edge_mass`` of spectral mass at each edge; the trim keeps
    the grid away from the narrow density spike that forms next to a
    near-zero lower edge, where boundary extrapolation cannot resolve
    the transform.
    """
    left, right = bulk_interval(spec, floor_fraction)
    left = max(left, quantile(spec, 1.0 - edge_mass))
    right = min(right, quantile(spec, edge_mass))
    if not left < right:
        raise ParameterError("bulk grid is empty for these parameters")
    return np.linspace(left, right, count)


def empirical_stieltjes(eigs: Sequence[float], z: complex, scale: int) -> complex:
    """Finite-spectrum transform ``(1/scale) sum_j 1/(z - eig_j)``."""
    eigs = np.asarray(eigs, dtype=float)
    if eigs.size == 0:
        return 0.0 + 0.0j
    z = complex(z)
    d = z - eigs
    if np.any(d == 0):
        raise SingularInputError(f"z = {z} coincides with a spectrum atom")
    return complex(np.sum(1.0 / d) / scale)


@dataclass(frozen=True)
class AtomicStieltjes:
    """Stieltjes transform of a finite atom spectrum, with derivative."""

    atoms: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "atoms", np.asarray(self.atoms, dtype=float))

    def __call__(self, z: complex) -> complex:
        d = complex(z) - self.atoms
        if np.any(d == 0):
            raise SingularInputError(f"z = {z} coincides with an atom")
        return complex(np.mean(1.0 / d))

    def prime(self, z: complex) -> complex:
        d = complex(z) - self.atoms
        if np.any(d == 0):
            raise SingularInputError(f"z = {z} coincides with an atom")
        return complex(-np.mean(1.0 / d**2))


@dataclass(frozen=True)
class SolverOptions:
    """Options for the implicit-equation solver.

    ``max_step_change`` bounds the relative change of the solution per
    continuation step; larger jumps force step halving so the tracked
    root cannot hop to another branch of the implicit equation.
    """

    tol: float = 1e-12
    max_newton: int = 60
    initial_steps: int = 32
    min_step_factor: float = 2.0**-16
    max_step_change: float = 0.5


def _numeric_prime(fn: Callable[[complex], complex]):
    def prime(w: complex) -> complex:
        h = 1e-6 * (1.0 + abs(w))
        return (fn(w + h) - fn(w - h)) / (2.0 * h)

    return prime


def implicit_residual(g: complex, g0: Callable[[complex], complex],
                      z: complex, t: float, scale: float, shift: float) -> complex:
    """Residual of the implicit time-evolution equation at value ``g``.

    The mapped argument is ``w = (1 - scale*t*g) * (z*(1 - scale*t*g) - shift*t)``
    and the equation reads ``g = g0(w) / (1 + scale*t*g0(w))``.
    """
    zt = 1.0 - scale * t * g
    ztp = z * zt - shift * t
    g0w = g0(zt * ztp)
    return g - g0w / (1.0 + scale * t * g0w)


def _newton_solve(g0, g0p, z, t, scale, shift, g_init, opts) -> complex:
    """Damped Newton for one continuation step; returns g or raises SolverError.

    A converged root with imaginary part on the wrong side of the axis
    is the mirror (unphysical) branch; one restart from the conjugate
    usually lands on the physical one.
    """

    def residual(g):
        return implicit_residual(g, g0, z, t, scale, shift)

    def residual_prime(g):
        zt = 1.0 - scale * t * g
        w = zt * (z * zt - shift * t)
        g0w = g0(w)
        dw = (2.0 * z * zt - shift * t) * (-scale * t)
        dphi = g0p(w) * dw / (1.0 + scale * t * g0w) ** 2
        return 1.0 - dphi

    atoms = getattr(g0, "atoms", None)

    def physical(g):
        if z.imag != 0.0 and g.imag * z.imag >= 0.0:
            return False
        if atoms is not None:
            # an atom of g0 at the mapped point mimics a root: the
            # residual drops below tolerance next to the pole
            zt = 1.0 - scale * t * g
            w = zt * (z * zt - shift * t)
            if np.min(np.abs(w - atoms)) <= 1e-9 * (1.0 + abs(w)):
                return False
        return True

    def iterate(g):
        r = residual(g)
        for _ in range(opts.max_newton):
            if abs(r) <= opts.tol * (1.0 + abs(g)):
                return g, abs(r), True
            rp = residual_prime(g)
            if rp == 0:
                break
            step = -r / rp
            for k in range(12):
                g_try = g + step * (0.5**k)
                r_try = residual(g_try)
                if abs(r_try) < abs(r):
                    g, r = g_try, r_try
                    break
            else:
                break
        return g, abs(r), False

    g, res, converged = iterate(complex(g_init))
    if converged and physical(g):
        return g
    if converged:
        g2, res, converged = iterate(g.conjugate())
        if converged and physical(g2):
            return g2
    raise SolverError(
        f"implicit solver stalled at z={z}, t={t} with residual {res:.3e}",
        residual=res,
    )


def _continue_in_t(g0, g0p, z, t, scale, shift, opts) -> complex:
    """Track the solution from t=0 (where it equals g0(z)) up to time t."""
    base_dt = t / opts.initial_steps
    dt = base_dt
    t_cur = 0.0
    g = complex(g0(z))
    last_residual = None
    while t_cur < t:
        t_next = min(t_cur + dt, t)
        try:
            g_next = _newton_solve(g0, g0p, z, t_next, scale, shift, g, opts)
            if abs(g_next - g) > opts.max_step_change * (1.0 + abs(g_next)):
                raise SolverError(
                    f"solution jump {abs(g_next - g):.3e} over one step",
                    residual=0.0,
                )
        except SolverError as err:
            last_residual = err.residual
            dt *= 0.5
            if dt < base_dt * opts.min_step_factor:
                raise SolverError(
                    f"continuation step underflow at z={z}, t={t_cur:.6g}/{t}",
                    residual=last_residual,
                ) from err
            continue
        g, t_cur = g_next, t_next
        dt = min(dt * 2.0, base_dt)
    return g


def _continue_in_height(g0, g0p, z, t, scale, shift, g_start, s_start, opts) -> complex:
    """Walk |Im z| down from s_start to the target height at fixed t.

    The transform is analytic off the real axis, so the physical branch
    continues uniquely along this path; adaptive halving with a jump
    guard keeps the iterate on it.
    """
    side = 1.0 if z.imag > 0 else -1.0
    s_target = abs(z.imag)
    s = s_start
    g = g_start
    ds = max(s_start - s_target, 0.0) / 8.0
    min_ds = (s_start - s_target) * opts.min_step_factor if s_start > s_target else 0.0
    last_residual = None
    while s > s_target:
        s_next = max(s - ds, s_target)
        z_next = complex(z.real, side * s_next)
        try:
            g_next = _newton_solve(g0, g0p, z_next, t, scale, shift, g, opts)
            if abs(g_next - g) > opts.max_step_change * (1.0 + abs(g_next)):
                raise SolverError(
                    f"solution jump {abs(g_next - g):.3e} over one step",
                    residual=0.0,
                )
        except SolverError as err:
            last_residual = err.residual
            ds *= 0.5
            if ds < min_ds:
                raise SolverError(
                    f"height continuation underflow at z={z}, height {s:.3e}",
                    residual=last_residual,
                ) from err
            continue
        g, s = g_next, s_next
        ds *= 2.0
    return g


def evolve_stieltjes(
    g0: Callable[[complex], complex],
    z: complex,
    t: float,
    r: ShapeRatios,
    truncated: bool = False,
    g0_prime: Callable[[complex], complex] | None = None,
    opts: SolverOptions = SolverOptions(),
) -> complex:
    """Time-``t`` Stieltjes transform from its time-zero transform ``g0``.

    Solves the implicit characteristics equation by damped Newton with
    homotopy continuation, starting from ``g0(z)`` at time zero.
    ``truncated`` selects the truncated-spectrum coefficients
    (alpha-scaled flow).  Near the real axis the branches of the
    implicit equation almost collide, so the continuation in ``t`` runs
    at a safe height below the axis first and then walks the height
    down to the requested point.

    ``g0`` must be the transform of a probability measure on the real
    axis, analytic off it and decaying like 1/z; ``g0_prime`` is its
    derivative (taken from ``g0.prime`` or by finite differences when
    absent).
    """
    z = complex(z)
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    if t == 0.0:
        return complex(g0(z))
    if z.imag == 0.0:
        raise ParameterError("evolved transform needs Im z != 0; use the "
                             "boundary extraction for real points")
    scale = r.alpha if truncated else 1.0
    shift = r.c_tilde if truncated else r.c
    if g0_prime is None:
        g0_prime = getattr(g0, "prime", None) or _numeric_prime(g0)

    # top edge of the zero-matrix part of the support, as a height scale
    safe_height = (np.sqrt(scale) + np.sqrt(scale + shift)) ** 2 * t
    if abs(z.imag) >= safe_height:
        return _continue_in_t(g0, g0_prime, z, t, scale, shift, opts)
    side = 1.0 if z.imag > 0 else -1.0
    z_safe = complex(z.real, side * safe_height)
    g_safe = _continue_in_t(g0, g0_prime, z_safe, t, scale, shift, opts)
    return _continue_in_height(
        g0, g0_prime, z, t, scale, shift, g_safe, safe_height, opts
    )


def default_eps_schedule(width: float) -> np.ndarray:
    """Geometric offset schedule scaled by the support width."""
    return width * np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])


def extrapolate_to_zero(xs: Sequence[float], ys: Sequence[complex],
                        stability_tol: float = 1e-7) -> complex:
    """Polynomial (Neville) extrapolation of ``ys(xs)`` to ``xs = 0``.

    Raises UnstableBoundaryError when the final correction grows instead
    of contracting, beyond a noise floor set by ``stability_tol``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = [complex(y) for y in ys]
    if xs.size < 3:
        raise ParameterError("extrapolation schedule needs at least 3 entries")
    if np.any(xs <= 0) or np.any(np.diff(xs) >= 0):
        raise ParameterError("schedule must be strictly decreasing and positive")
    n = xs.size
    table = [[0j] * n for _ in range(n)]
    for i in range(n):
        table[i][0] = ys[i]
    for j in range(1, n):
        for i in range(j, n):
            table[i][j] = (
                xs[i - j] * table[i][j - 1] - xs[i] * table[i - 1][j - 1]
            ) / (xs[i - j] - xs[i])
    diagonal = [table[i][i] for i in range(n)]
    scale = max(1.0, max(abs(y) for y in ys))
    corrections = [abs(diagonal[i] - diagonal[i - 1]) for i in range(1, n)]
    if len(corrections) >= 2:
        floor = stability_tol * scale
        if corrections[-1] > 10.0 * corrections[-2] + floor:
            raise UnstableBoundaryError(
                f"extrapolation corrections grew: {corrections}"
            )
    return diagonal[-1]


def plemelj_boundary(
    solver: Callable[[complex, float], complex],
    lam: float,
    t: float,
    eps_schedule: Sequence[float],
) -> BoundaryValue:
    """Boundary value of a Stieltjes transform just below the real axis.

    Evaluates ``solver(lam - i*eps, t)`` along the (decreasing) schedule
    and extrapolates ``eps -> 0``; the limit is ``hilbert + i*pi*density``.
    The density is clamped at zero.
    """
    eps = np.asarray(eps_schedule, dtype=float)
    vals = [solver(complex(lam, -e), t) for e in eps]
    limit = extrapolate_to_zero(eps, vals)
    return BoundaryValue(hilbert=float(limit.real),
                         density=float(max(limit.imag / np.pi, 0.0)))

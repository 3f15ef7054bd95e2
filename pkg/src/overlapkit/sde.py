"""Eigenvalue diffusion of the noisy Gram matrix, and Burgers-law validation.

The squared singular values of the noisy matrix follow a coupled
diffusion with a pairwise repulsion drift.  An explicit Euler-Maruyama
scheme is used; a step that would break the strict ordering or
positivity is rejected and retried on the two halves of the interval,
with the Brownian increments refined by bridge sampling so the driving
path is unchanged.  A dyadic noise tree keyed by the seed makes whole
trajectories reproducible and refinement-consistent across step sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from .ensemble import MatrixSpec, sample_ensemble
from .errors import ParameterError, StiffnessError
from .params import Dims
from .spectral import (
    AtomicStieltjes,
    MPSpec,
    evolve_stieltjes,
    empirical_stieltjes,
    implicit_residual,
    tail_mass,
)

__all__ = [
    "EigenState",
    "BrownianTree",
    "BurgersValidation",
    "bru_step",
    "split_degeneracies",
    "integrate_spectrum",
    "burgers_validate",
    "ks_distance_to_law",
]

_SPLIT_GAP = 1e-8
_MAX_REFINE_DEPTH = 10


@dataclass(frozen=True)
class EigenState:
    """Strictly decreasing positive eigenvalues at a given time."""

    t: float
    eigs: np.ndarray
    dims: Dims

    def __post_init__(self):
        eigs = np.asarray(self.eigs, dtype=float)
        object.__setattr__(self, "eigs", eigs)
        if eigs.size != self.dims.N:
            raise ParameterError(f"expected {self.dims.N} eigenvalues, got {eigs.size}")
        if eigs[-1] <= 0 or np.any(np.diff(eigs) >= 0):
            raise ParameterError("eigenvalues must be strictly decreasing and positive")


def split_degeneracies(eigs: np.ndarray, gap: float = _SPLIT_GAP) -> np.ndarray:
    """Deterministically separate exact ties (and zeros) by ``gap`` steps.

    Returns a strictly decreasing positive spectrum; distinct, already
    positive entries are untouched.  An all-zero input becomes
    ``N*gap, ..., 2*gap, gap``.
    """
    asc = np.sort(np.asarray(eigs, dtype=float))
    out = np.empty_like(asc)
    prev = 0.0
    for j, v in enumerate(asc):
        out[j] = max(v, prev + gap)
        prev = out[j]
    return out[::-1]


def _em_candidate(eigs: np.ndarray, dt: float, dw: np.ndarray,
                  dims: Dims) -> np.ndarray:
    """One Euler-Maruyama step; dw has variance dt per component."""
    diff = eigs[:, None] - eigs[None, :]
    np.fill_diagonal(diff, 1.0)
    ratio = (eigs[:, None] + eigs[None, :]) / diff
    np.fill_diagonal(ratio, 0.0)
    drift = dims.M / dims.N + ratio.sum(axis=1) / dims.N
    return eigs + drift * dt + (2.0 / np.sqrt(dims.N)) * np.sqrt(eigs) * dw


def _is_admissible(eigs: np.ndarray) -> bool:
    return eigs[-1] > 0 and bool(np.all(np.diff(eigs) < 0))


def _closest_gap(eigs: np.ndarray) -> float:
    return float(np.min(np.abs(np.diff(eigs)))) if eigs.size > 1 else np.inf


def _sorted_fallback(cand: np.ndarray) -> np.ndarray | None:
    """Reorder a rejected candidate as an unordered spectrum.

    The scheme is a function of the eigenvalue set, not of the labels,
    so reflecting a crossed pair (sorting) and reflecting a negative
    value at zero leaves every symmetric observable unbiased.  Returns
    None when exact ties survive, which a diffusion never produces.
    """
    reordered = np.sort(np.abs(cand))[::-1]
    if reordered[-1] > 0 and bool(np.all(np.diff(reordered) < 0)):
        return reordered
    return None


def bru_step(state: EigenState, dt: float, rng: np.random.Generator,
             max_depth: int = _MAX_REFINE_DEPTH,
             on_underflow: str = "error") -> EigenState:
    """Advance the eigenvalue diffusion by ``dt``.

    Rejected steps are retried on bridge-refined halves down to
    ``dt / 2**max_depth``.  Below that, ``on_underflow`` decides: with
    ``"error"`` a stiffness error reports the closest eigenvalue gap;
    with ``"sort"`` the candidate is reordered as an unordered spectrum
    (exact for symmetric observables, since close encounters park at
    the noise scale of any step size and cannot be refined away).
    """
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")

    def advance(eigs, h, dw, depth):
        cand = _em_candidate(eigs, h, dw, state.dims)
        if _is_admissible(cand):
            return cand
        if depth >= max_depth:
            if on_underflow == "sort":
                reordered = _sorted_fallback(cand)
                if reordered is not None:
                    return reordered
            raise StiffnessError(
                f"step rejected down to dt/2^{max_depth} at t={state.t:.6g}; "
                f"closest gap {_closest_gap(eigs):.3e}",
                closest_gap=_closest_gap(eigs),
            )
        mid = 0.5 * dw + 0.5 * np.sqrt(h) * rng.standard_normal(eigs.size)
        left = advance(eigs, h / 2.0, mid, depth + 1)
        return advance(left, h / 2.0, dw - mid, depth + 1)

    dw = np.sqrt(dt) * rng.standard_normal(state.eigs.size)
    new_eigs = advance(state.eigs, dt, dw, 0)
    return EigenState(t=state.t + dt, eigs=new_eigs, dims=state.dims)


class BrownianTree:
    """Dyadic increments of independent Brownian paths, keyed by a seed.

    Node (level, index) covers the dyadic interval of length
    ``total_time / 2**level``; its increment is defined by bridge
    splitting from the root, with every split draw derived from the
    node id, so any two discretisations of the same tree follow the
    same underlying paths.
    """

    def __init__(self, seed: int, total_time: float, n_paths: int):
        if total_time <= 0:
            raise ParameterError("total_time must be positive")
        self.seed = int(seed)
        self.total_time = float(total_time)
        self.n_paths = int(n_paths)
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def _draw(self, node_id: int) -> np.ndarray:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(node_id,))
        gen = np.random.Generator(np.random.Philox(seq))
        return gen.standard_normal(self.n_paths)

    def increment(self, level: int, index: int) -> np.ndarray:
        """Brownian increment over dyadic interval (level, index)."""
        if not 0 <= index < (1 << level):
            raise ParameterError(f"index {index} out of range at level {level}")
        key = (level, index)
        if key in self._cache:
            return self._cache[key]
        if level == 0:
            value = np.sqrt(self.total_time) * self._draw(1)
        else:
            parent = self.increment(level - 1, index // 2)
            h_parent = self.total_time / (1 << (level - 1))
            parent_id = (1 << (level - 1)) + index // 2
            left = 0.5 * parent + 0.5 * np.sqrt(h_parent) * self._draw(parent_id)
            if index % 2 == 0:
                value = left
            else:
                value = parent - left
            self._cache[(level, index // 2 * 2)] = left
            self._cache[(level, index // 2 * 2 + 1)] = parent - left
        self._cache[key] = value
        return self._cache[key]


def integrate_spectrum(
    eigs0: np.ndarray,
    dims: Dims,
    t_final: float,
    n_steps: int,
    tree: BrownianTree,
    max_depth: int = _MAX_REFINE_DEPTH,
    on_underflow: str = "sort",
) -> np.ndarray:
    """Integrate the eigenvalue diffusion to ``t_final`` on a dyadic grid.

    Steps that stay rejected at the deepest refinement are reordered as
    unordered spectra by default (see ``bru_step``); pass
    ``on_underflow="error"`` to surface a stiffness error instead.
    """
    if n_steps < 1 or n_steps & (n_steps - 1):
        raise ParameterError(f"n_steps must be a power of two, got {n_steps}")
    level = n_steps.bit_length() - 1
    eigs = np.asarray(eigs0, dtype=float)

    def advance(cur, lvl, idx, depth):
        dw = tree.increment(lvl, idx)
        step = t_final / (1 << lvl)
        cand = _em_candidate(cur, step, dw, dims)
        if _is_admissible(cand):
            return cand
        if depth >= max_depth:
            if on_underflow == "sort":
                reordered = _sorted_fallback(cand)
                if reordered is not None:
                    return reordered
            raise StiffnessError(
                f"step rejected down to dt/2^{max_depth} at interval "
                f"({lvl}, {idx}); closest gap {_closest_gap(cur):.3e}",
                closest_gap=_closest_gap(cur),
            )
        left = advance(cur, lvl + 1, 2 * idx, depth + 1)
        return advance(left, lvl + 1, 2 * idx + 1, depth + 1)

    for i in range(n_steps):
        eigs = advance(eigs, level, i, 0)
    return eigs


@dataclass(frozen=True)
class BurgersValidation:
    """Per-point comparison of empirical and implicit-equation transforms.

    Also carries the two endpoint spectra (diffusion and direct draw)
    for external distribution checks.
    """

    z_grid: np.ndarray
    g_sde: np.ndarray
    g_direct: np.ndarray
    g_theory: np.ndarray
    dev_sde: np.ndarray
    dev_direct: np.ndarray
    residuals: np.ndarray
    ks_statistic: float
    max_deviation: float
    eigs_sde: np.ndarray
    eigs_direct: np.ndarray


def _initial_spectrum(spec: MatrixSpec) -> np.ndarray:
    a = spec.materialize()
    svals = np.linalg.svd(a, compute_uv=False)
    eigs = np.zeros(spec.dims.N)
    eigs[: svals.size] = np.sort(svals**2)[::-1]
    return eigs


def burgers_validate(
    spec: MatrixSpec,
    t_final: float,
    n_steps: int,
    z_grid,
    seed: int,
    warmup_fraction: float = 1.0 / 16.0,
    refine_depth: int = 6,
) -> BurgersValidation:
    """Validate the implicit transform equation against two samplers.

    Integrates the eigenvalue diffusion to ``t_final``, draws one
    direct sample of the noisy matrix at the same time, and compares
    both empirical transforms on ``z_grid`` against the implicit
    equation solution seeded with the starting spectrum.  Also reports
    the two-sample KS distance between the two endpoint spectra.

    Degenerate starting spectra (repeated atoms, in particular the zero
    matrix) make the packed eigenvalues non-integrable right at the
    start, so the diffusion is launched from an exact Gaussian draw at
    the small warmup time ``warmup_fraction * t_final``; by the Markov
    property this leaves the endpoint law unchanged.

    The refinement cap is shallow (``refine_depth``): at early times
    the noise exceeds the smallest eigenvalue gaps at every feasible
    step size, so rejected steps are reordered as unordered spectra,
    which is exact for the symmetric observables reported here.
    """
    z_grid = np.asarray(z_grid, dtype=complex)
    if t_final < 0:
        raise ParameterError("t_final must be >= 0")
    if np.any(np.abs(z_grid.imag) < 0.1):
        raise ParameterError("z grid must keep |Im z| >= 0.1")
    dims = spec.dims
    eigs0 = _initial_spectrum(spec)
    if t_final == 0:
        eigs_end = eigs0.copy()
    else:
        t0 = warmup_fraction * t_final
        x0, _ = sample_ensemble(spec, t0, seed ^ 0xA11CE, trial=2)
        eigs_warm = np.sort(np.linalg.svd(x0, compute_uv=False) ** 2)[::-1]
        tree = BrownianTree(seed, t_final - t0, dims.N)
        eigs_end = integrate_spectrum(eigs_warm, dims, t_final - t0, n_steps,
                                      tree, max_depth=refine_depth)

    x_direct, _ = sample_ensemble(spec, t_final, seed ^ 0xD1EC7, trial=1)
    eigs_direct = np.sort(np.linalg.svd(x_direct, compute_uv=False) ** 2)[::-1]

    g0 = AtomicStieltjes(eigs0)
    ratios = dims.ratios(t_final)
    g_sde = np.array([empirical_stieltjes(eigs_end, z, dims.N) for z in z_grid])
    g_direct = np.array([empirical_stieltjes(eigs_direct, z, dims.N) for z in z_grid])
    g_theory = np.empty_like(g_sde)
    residuals = np.empty(z_grid.size)
    for k, z in enumerate(z_grid):
        g = evolve_stieltjes(g0, z, t_final, ratios)
        g_theory[k] = g
        residuals[k] = abs(implicit_residual(g, g0, z, t_final, 1.0, ratios.c))
    dev_sde = np.abs(g_sde - g_theory)
    dev_direct = np.abs(g_direct - g_theory)
    ks = float(ks_2samp(eigs_end, eigs_direct).statistic)
    return BurgersValidation(
        z_grid=z_grid,
        g_sde=g_sde,
        g_direct=g_direct,
        g_theory=g_theory,
        dev_sde=dev_sde,
        dev_direct=dev_direct,
        residuals=residuals,
        ks_statistic=ks,
        max_deviation=float(max(dev_sde.max(), dev_direct.max())),
        eigs_sde=eigs_end,
        eigs_direct=eigs_direct,
    )


def ks_distance_to_law(eigs: np.ndarray, spec: MPSpec) -> float:
    """One-sample KS distance of a spectrum to a square-root law."""
    eigs = np.sort(np.asarray(eigs, dtype=float))
    n = eigs.size
    cdf = np.array([1.0 - tail_mass(spec, v) for v in eigs])
    upper = np.abs(np.arange(1, n + 1) / n - cdf)
    lower = np.abs(np.arange(0, n) / n - cdf)
    return float(max(upper.max(), lower.max()))

"""Monte Carlo harness: sampling, truncated SVD conventions, overlap estimators.

Noise matrices are generated by Box-Muller from a counter-based
generator keyed by ``(seed, trial)``, so trials are reproducible and
order-independent; estimates are accumulated per trial slot and reduced
at the end, which makes the results bit-identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, ParameterError
from .params import Dims, ShapeRatios
from .spectral import MPSpec, quantile

__all__ = [
    "MatrixSpec",
    "SvdTriplet",
    "OverlapEstimate",
    "TargetEstimates",
    "normal_matrix",
    "sample_ensemble",
    "svd_full",
    "svd_truncated",
    "overlap_frames",
    "overlap_matrices",
    "mc_rescaled_overlaps",
    "mc_kernel_overlaps",
    "correlation_identity_test",
    "resolve_threads",
]

_RANK_TOL = 1e-12
_MAX_RESAMPLES = 100


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit value, else OVERLAPKIT_THREADS, else cpu count."""
    if threads is not None:
        if threads < 1:
            raise ParameterError(f"threads must be >= 1, got {threads}")
        return threads
    env = os.environ.get("OVERLAPKIT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError as err:
            raise ParameterError(f"OVERLAPKIT_THREADS={env!r} is not an integer") from err
        if value < 1:
            raise ParameterError(f"OVERLAPKIT_THREADS must be >= 1, got {value}")
        return value
    return os.cpu_count() or 1


@dataclass(frozen=True)
class MatrixSpec:
    """Starting matrix for the ensemble: zero, diagonal, or loaded from file."""

    dims: Dims
    kind: str = "zero"
    diagonal: np.ndarray | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "diagonal", "file"):
            raise ParameterError(f"unknown matrix kind {self.kind!r}")
        if self.kind == "diagonal":
            if self.diagonal is None:
                raise ParameterError("diagonal kind needs values")
            vals = np.asarray(self.diagonal, dtype=float)
            object.__setattr__(self, "diagonal", vals)
            if vals.ndim != 1 or vals.size > min(self.dims.M, self.dims.N):
                raise ParameterError(
                    f"diagonal length {vals.size} exceeds min(M, N) = "
                    f"{min(self.dims.M, self.dims.N)}"
                )
        if self.kind == "file" and not self.path:
            raise ParameterError("file kind needs a path")

    def materialize(self) -> np.ndarray:
        """Dense (M, N) array for this starting matrix."""
        d = self.dims
        if self.kind == "zero":
            return np.zeros((d.M, d.N))
        if self.kind == "diagonal":
            a = np.zeros((d.M, d.N))
            k = self.diagonal.size
            a[np.arange(k), np.arange(k)] = self.diagonal
            return a
        from .dataio import load_matrix

        a = load_matrix(self.path)
        if a.shape != (d.M, d.N):
            raise ParameterError(
                f"matrix file has shape {a.shape}, expected {(d.M, d.N)}"
            )
        return a


@dataclass(frozen=True)
class SvdTriplet:
    """Full singular frames with the fixed null-space conventions.

    ``left`` is an orthonormal (M, M) frame, ``right`` an orthonormal
    (N, N) frame, ``svals`` the min(M, N) singular values in descending
    order (zeros padded for the truncated matrix).  Sign pairing: each
    right vector with a left partner is flipped so that its first
    nonzero component is positive, with the partner flipped in tandem.
    """

    left: np.ndarray
    svals: np.ndarray
    right: np.ndarray
    dims: Dims


@dataclass(frozen=True)
class OverlapEstimate:
    """Monte Carlo mean of a rescaled overlap with its standard error."""

    value: float
    stderr: float
    trials: int

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("estimate needs at least one trial")


@dataclass(frozen=True)
class TargetEstimates:
    """Estimates of the three channels at one (x, y) quantile target."""

    x: float
    y: float
    v: OverlapEstimate
    u: OverlapEstimate
    w: OverlapEstimate


def _philox_key(seed: int, trial: int, attempt: int = 0) -> int:
    return ((int(seed) ^ int(trial)) & ((1 << 64) - 1)) | (int(attempt) << 64)


def normal_matrix(shape: tuple[int, int], seed: int, trial: int = 0,
                  attempt: int = 0) -> np.ndarray:
    """Standard normal matrix via Box-Muller on a Philox stream.

    The stream is keyed by (seed, trial, attempt), so every trial is an
    independent, order-free substream.
    """
    gen = np.random.Generator(np.random.Philox(key=_philox_key(seed, trial, attempt)))
    count = int(np.prod(shape))
    half = (count + 1) // 2
    u1 = 1.0 - gen.random(half)  # in (0, 1]: keeps the log finite
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return z.reshape(shape)


def _truncate(x: np.ndarray, dims: Dims) -> np.ndarray:
    out = np.zeros_like(x)
    out[: dims.m, : dims.n] = x[: dims.m, : dims.n]
    return out


def sample_ensemble(spec: MatrixSpec, t: float, seed: int, trial: int = 0,
                    attempt: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One draw of the noisy matrix and its truncation.

    The noise has entrywise variance ``t/N``; at ``t = 0`` the pair is
    the starting matrix and its truncation exactly.
    """
    if t < 0:
        raise ParameterError(f"t must be >= 0, got {t}")
    d = spec.dims
    a = spec.materialize()
    if t == 0:
        return a, _truncate(a, d)
    x = a + np.sqrt(t / d.N) * normal_matrix((d.M, d.N), seed, trial, attempt)
    return x, _truncate(x, d)


def _canonical_signs(right: np.ndarray, n_pairs: int) -> np.ndarray:
    """Sign flips making the first nonzero component of each paired
    right vector positive."""
    signs = np.ones(right.shape[1])
    for j in range(n_pairs):
        col = right[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        lead = col[nz[0]] if nz.size else 1.0
        if lead < 0:
            signs[j] = -1.0
    return signs


def svd_full(x: np.ndarray, dims: Dims) -> SvdTriplet:
    """Full SVD of the noisy matrix with canonical sign pairing."""
    if x.shape != (dims.M, dims.N):
        raise ParameterError(f"matrix shape {x.shape} != {(dims.M, dims.N)}")
    u, s, vt = np.linalg.svd(x, full_matrices=True)
    right = vt.T
    signs = _canonical_signs(right, dims.N)
    right = right * signs
    u[:, : dims.N] = u[:, : dims.N] * signs[: dims.N]
    return SvdTriplet(left=u, svals=s, right=right, dims=dims)


def svd_truncated(xtrunc: np.ndarray, dims: Dims,
                  check_degenerate: bool = True) -> SvdTriplet:
    """Full frames of the truncated matrix with the fixed null conventions.

    The m x n block is decomposed; its right/left vectors are embedded
    by zero padding.  Left vectors n+1..m complete the block column
    space inside the first m coordinates, left vectors m+1..M are the
    standard basis there, and right vectors n+1..N are the standard
    basis beyond n.
    """
    d = dims
    if xtrunc.shape != (d.M, d.N):
        raise ParameterError(f"matrix shape {xtrunc.shape} != {(d.M, d.N)}")
    if np.any(xtrunc[d.m:, :]) or np.any(xtrunc[:, d.n:]):
        raise ParameterError("matrix does not have the truncation sparsity")
    block = xtrunc[: d.m, : d.n]
    ub, sb, vbt = np.linalg.svd(block, full_matrices=True)
    if check_degenerate and (sb.size == 0 or sb[-1] <= _RANK_TOL * max(sb[0], 1.0)):
        raise DegenerateSampleError(
            f"truncated block numerically rank deficient (min sval {sb[-1]:.3e})"
        )
    vb = vbt.T
    signs = _canonical_signs(vb, d.n)
    vb = vb * signs
    ub[:, : d.n] = ub[:, : d.n] * signs

    left = np.zeros((d.M, d.M))
    left[: d.m, : d.m] = ub
    left[d.m:, d.m:] = np.eye(d.M - d.m)
    right = np.zeros((d.N, d.N))
    right[: d.n, : d.n] = vb
    right[d.n:, d.n:] = np.eye(d.N - d.n)
    svals = np.zeros(d.N)
    svals[: d.n] = sb
    return SvdTriplet(left=left, svals=svals, right=right, dims=d)


def overlap_frames(a: np.ndarray, dims: Dims) -> tuple[SvdTriplet, SvdTriplet]:
    """Canonical frames of a deterministic matrix and its truncation.

    Rank deficiency is allowed here: for a degenerate starting matrix
    any orthonormal choice inside a null block gives the same overlap
    tables.
    """
    full = svd_full(a, dims)
    trunc = svd_truncated(_truncate(a, dims), dims, check_degenerate=False)
    return full, trunc


def overlap_matrices(full: SvdTriplet, trunc: SvdTriplet
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Overlap tables between the two frames.

    Returns the (n, N) squared right-vector table, the (m, M) squared
    left-vector table, and the (n, N) signed product table.
    """
    d = trunc.dims
    if full.dims != d:
        raise ParameterError("frames have inconsistent dimensions")
    pv = trunc.right[:, : d.n].T @ full.right
    pu = trunc.left[:, : d.m].T @ full.left
    return pv**2, pu**2, pv * pu[: d.n, : d.N]


def _target_indices(fracs, count):
    """1-based index clamp(round(frac * count), 1, count), returned 0-based."""
    idx = np.clip(np.rint(np.asarray(fracs, dtype=float) * count), 1, count)
    return idx.astype(int) - 1


def _matched_targets(r: ShapeRatios, xs, ys):
    """Spectral positions of the quantile targets for a zero starting matrix."""
    lam = [quantile(MPSpec.full(r), y) for y in ys]
    mu = [quantile(MPSpec.truncated(r), x) for x in xs]
    return np.array(mu), np.array(lam)


def _bulk_trial(spec: MatrixSpec, t: float, seed: int, trial: int,
                i_sel: np.ndarray, j_sel: np.ndarray,
                mu_targets=None, lam_targets=None) -> np.ndarray:
    """Per-trial rescaled overlaps at the selected index pairs.

    Right vectors come from the Gram matrices; left vectors are
    reconstructed only for the selected columns.  Returns an array of
    shape (len(i_sel), 3) with N*V, N*U, N*W.
    """
    d = spec.dims
    for attempt in range(_MAX_RESAMPLES):
        x, _ = sample_ensemble(spec, t, seed, trial, attempt)
        block = x[: d.m, : d.n]
        w_full, vecs_full = np.linalg.eigh(x.T @ x)
        w_blk, vecs_blk = np.linalg.eigh(block.T @ block)
        w_full, vecs_full = w_full[::-1], vecs_full[:, ::-1]
        w_blk, vecs_blk = w_blk[::-1], vecs_blk[:, ::-1]
        if w_blk[-1] > (_RANK_TOL ** 2) * max(w_blk[0], 1.0):
            break
    else:
        raise DegenerateSampleError(
            f"trial {trial}: resample limit {_MAX_RESAMPLES} exceeded"
        )

    if mu_targets is not None:
        i_sel = np.array([np.abs(w_blk - v).argmin() for v in mu_targets])
        j_sel = np.array([np.abs(w_full - v).argmin() for v in lam_targets])

    vj = vecs_full[:, j_sel] * _canonical_signs(vecs_full[:, j_sel], j_sel.size)
    vi = vecs_blk[:, i_sel] * _canonical_signs(vecs_blk[:, i_sel], i_sel.size)
    uj = (x @ vj) / np.sqrt(w_full[j_sel])
    ui = (block @ vi) / np.sqrt(w_blk[i_sel])

    dot_v = np.einsum("ki,kj->ij", vi, vj[: d.n, :]).diagonal()
    dot_u = np.einsum("ki,kj->ij", ui, uj[: d.m, :]).diagonal()
    out = np.empty((i_sel.size, 3))
    out[:, 0] = d.N * dot_v**2
    out[:, 1] = d.N * dot_u**2
    out[:, 2] = d.N * dot_v * dot_u
    return out


def _reduce(values: np.ndarray, trials: int) -> OverlapEstimate:
    mean = float(values.mean())
    if trials > 1:
        stderr = float(values.std(ddof=1) / np.sqrt(trials))
    else:
        stderr = 0.0
    return OverlapEstimate(value=mean, stderr=stderr, trials=trials)


def _run_trials(worker, trials: int, threads: int | None, width: int) -> np.ndarray:
    """Execute trials into fixed slots; the reduction never depends on order."""
    slots = np.empty((trials, width, 3))
    workers = resolve_threads(threads)
    if workers == 1:
        for k in range(trials):
            slots[k] = worker(k)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for k, res in zip(range(trials), pool.map(worker, range(trials))):
                slots[k] = res
    return slots


def mc_rescaled_overlaps(
    spec: MatrixSpec,
    t: float,
    targets: list[tuple[float, float]],
    trials: int,
    seed: int,
    threads: int | None = None,
    selection: str = "index",
) -> list[TargetEstimates]:
    """Monte Carlo estimates of the rescaled overlaps at quantile targets.

    Each target is a pair (x, y) of quantile fractions; the sampled
    index pair is ``(round(x*n), round(y*N))`` (clamped).  With
    ``selection="eigenvalue"`` the indices are instead matched to the
    nearest limiting quantile positions (zero starting matrix only).
    """
    if trials < 1:
        raise ParameterError("need trials >= 1")
    if not targets:
        raise ParameterError("need at least one target")
    xs = np.array([p[0] for p in targets], dtype=float)
    ys = np.array([p[1] for p in targets], dtype=float)
    if np.any((xs <= 0) | (xs >= 1)) or np.any((ys <= 0) | (ys >= 1)):
        raise ParameterError("target fractions must lie strictly inside (0, 1)")
    d = spec.dims
    i_sel = _target_indices(xs, d.n)
    j_sel = _target_indices(ys, d.N)
    mu_targets = lam_targets = None
    if selection == "eigenvalue":
        if spec.kind != "zero":
            raise ParameterError("eigenvalue matching is defined for the zero matrix")
        mu_targets, lam_targets = _matched_targets(d.ratios(t), xs, ys)
    elif selection != "index":
        raise ParameterError(f"unknown selection mode {selection!r}")

    def worker(k):
        return _bulk_trial(spec, t, seed, k, i_sel, j_sel, mu_targets, lam_targets)

    slots = _run_trials(worker, trials, threads, len(targets))
    out = []
    for p, (x, y) in enumerate(targets):
        out.append(
            TargetEstimates(
                x=float(x),
                y=float(y),
                v=_reduce(slots[:, p, 0], trials),
                u=_reduce(slots[:, p, 1], trials),
                w=_reduce(slots[:, p, 2], trials),
            )
        )
    return out


def _kernel_trial(spec: MatrixSpec, t: float, seed: int, trial: int,
                  which: str, idx: int | None) -> float:
    d = spec.dims
    for attempt in range(_MAX_RESAMPLES):
        x, xt = sample_ensemble(spec, t, seed, trial, attempt)
        try:
            trunc = svd_truncated(xt, d)
        except DegenerateSampleError:
            continue
        break
    else:
        raise DegenerateSampleError(
            f"trial {trial}: resample limit {_MAX_RESAMPLES} exceeded"
        )
    full = svd_full(x, d)
    _, u_table, _ = overlap_matrices(full, trunc)
    if which == "u1":
        return d.N * float(u_table[d.n: d.m, idx].mean())
    if which == "u2":
        return d.N * float(u_table[idx, d.N: d.M].mean())
    return d.N * float(u_table[d.n: d.m, d.N: d.M].mean())


def mc_kernel_overlaps(
    spec: MatrixSpec,
    t: float,
    which: str,
    frac: float | None,
    trials: int,
    seed: int,
    threads: int | None = None,
) -> OverlapEstimate:
    """Monte Carlo estimate of a null-space overlap channel.

    ``which`` is one of ``u1`` (null truncated rows against a bulk
    column at fraction ``frac``), ``u2`` (bulk truncated row at
    ``frac`` against null full columns) or ``u3`` (both null ranges).
    Estimates are averaged over the whole null index range, which makes
    them independent of the basis chosen inside the null blocks.
    """
    d = spec.dims
    if which in ("u1", "u3") and d.m == d.n:
        raise ParameterError("u1/u3 need m > n (nonempty block null range)")
    if which in ("u2", "u3") and d.M == d.N:
        raise ParameterError("u2/u3 need M > N (nonempty full null range)")
    if which not in ("u1", "u2", "u3"):
        raise ParameterError(f"unknown kernel case {which!r}")
    idx = None
    if which == "u1":
        if frac is None:
            raise ParameterError("u1 needs a column quantile fraction")
        idx = int(_target_indices([frac], d.N)[0])
    elif which == "u2":
        if frac is None:
            raise ParameterError("u2 needs a row quantile fraction")
        idx = int(_target_indices([frac], d.n)[0])

    def worker(k):
        val = _kernel_trial(spec, t, seed, k, which, idx)
        return np.array([[val, 0.0, 0.0]])

    slots = _run_trials(worker, trials, threads, 1)
    return _reduce(slots[:, 0, 0], trials)


def correlation_identity_test(
    dims: Dims,
    t: float,
    dt: float,
    samples: int,
    seed: int,
    grid: int = 5,
) -> float:
    """Empirical check of the projected-increment covariance identity.

    Freezes one sampled pair of frames, then draws independent matrix
    increments with entrywise variance ``dt`` and compares the sample
    covariance of the two projected increments against the product of
    frame overlaps, over a grid of index quadruples.  Returns the
    largest absolute deviation of covariance/dt from the overlap
    product.
    """
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if samples < 2:
        raise ParameterError("need at least 2 increment samples")
    spec = MatrixSpec(dims=dims)
    x, xt = sample_ensemble(spec, t, seed, trial=0)
    full = svd_full(x, dims)
    trunc = svd_truncated(xt, dims)

    def pick(count, upper):
        return np.unique(np.linspace(1, upper, count).round().astype(int)) - 1

    i_sel = pick(grid, dims.m)
    l_sel = pick(grid, dims.n)
    j_sel = pick(grid, dims.M)
    k_sel = pick(grid, dims.N)

    target = np.einsum(
        "ij,lk->iljk",
        trunc.left[:, i_sel].T @ full.left[:, j_sel],
        trunc.right[:, l_sel].T @ full.right[:, k_sel],
    )

    uj = full.left[:, j_sel]
    vk = full.right[:, k_sel]
    ui = trunc.left[: dims.m, i_sel]
    vl = trunc.right[: dims.n, l_sel]

    acc = np.zeros_like(target)
    batch = 256
    done = 0
    block_id = 0
    while done < samples:
        count = min(batch, samples - done)
        db = normal_matrix((count * dims.M, dims.N), seed ^ 0x5EED, block_id)
        db = db.reshape(count, dims.M, dims.N) * np.sqrt(dt)
        a_proj = np.einsum("mj,bmn,nk->bjk", uj, db, vk)
        b_proj = np.einsum("mi,bmn,nl->bil", ui, db[:, : dims.m, : dims.n], vl)
        acc += np.einsum("bil,bjk->iljk", b_proj, a_proj)
        done += count
        block_id += 1
    cov = acc / (samples * dt)
    return float(np.abs(cov - target).max())

"""Macroscopic shape parameters and finite matrix dimensions.

Everything downstream is controlled by four ratios: ``q`` (columns over
rows of the full matrix), ``alpha`` (kept columns over all columns),
``beta`` (kept rows over all rows) and the noise variance ``t``.  The
conventions assume a tall full matrix (``q <= 1``) and a truncation that
keeps at least as many rows as columns (``alpha * q <= beta``).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class ShapeRatios:
    """Limiting shape ratios and noise variance.

    Attributes
    ----------
    q : float
        Column/row ratio of the full matrix, in (0, 1].
    alpha : float
        Fraction of columns kept by the truncation, in (0, 1].
    beta : float
        Fraction of rows kept by the truncation, in (0, 1].
    t : float
        Noise variance (also the time of the matrix diffusion), >= 0.
    """

    q: float
    alpha: float
    beta: float
    t: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ParameterError(f"q must be in (0, 1], got {self.q}")
        if not 0.0 < self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.beta <= 1.0:
            raise ParameterError(f"beta must be in (0, 1], got {self.beta}")
        if self.alpha * self.q > self.beta + 1e-12:
            raise ParameterError(
                f"need alpha*q <= beta (kept block at least as tall as wide), "
                f"got alpha*q={self.alpha * self.q} > beta={self.beta}"
            )
        if self.t < 0.0:
            raise ParameterError(f"t must be >= 0, got {self.t}")

    @property
    def c(self) -> float:
        """Constant 1/q - 1 entering the full-spectrum characteristics."""
        return 1.0 / self.q - 1.0

    @property
    def c_tilde(self) -> float:
        """Constant beta/q - alpha entering the truncated-spectrum characteristics."""
        return self.beta / self.q - self.alpha

    def with_t(self, t: float) -> "ShapeRatios":
        """Same ratios at a different time."""
        return ShapeRatios(self.q, self.alpha, self.beta, t)


@dataclass(frozen=True)
class Dims:
    """Finite matrix dimensions: full M x N, truncated block m x n."""

    M: int
    N: int
    m: int
    n: int

    def __post_init__(self):
        for name in ("M", "N", "m", "n"):
            v = getattr(self, name)
            if not isinstance(v, (int,)) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if self.N > self.M:
            raise ParameterError(f"need N <= M, got N={self.N} > M={self.M}")
        if self.n > self.N:
            raise ParameterError(f"need n <= N, got n={self.n} > N={self.N}")
        if not self.n <= self.m <= self.M:
            raise ParameterError(
                f"need n <= m <= M, got n={self.n}, m={self.m}, M={self.M}"
            )

    def ratios(self, t: float) -> ShapeRatios:
        """Shape ratios realised by these dimensions, at noise variance t."""
        return ShapeRatios(
            q=self.N / self.M, alpha=self.n / self.N, beta=self.m / self.M, t=t
        )

    @staticmethod
    def from_ratios(M: int, q: float, alpha: float, beta: float) -> "Dims":
        """Round (q, alpha, beta) to integer dimensions for a given M."""
        N = int(round(q * M))
        n = int(round(alpha * N))
        m = int(round(beta * M))
        m = max(m, n)
        return Dims(M=M, N=N, m=m, n=n)

"""Stiffness matrix of the fractional diffusion term.

Entry ``z[i, j]`` is the net fractional flux out of the dual cell
``[x_{i-1/2}, x_{i+1/2}]`` generated by the hat function ``phi_j``. With a
uniform spacing ``h`` the entries with ``|i - j| >= 2`` depend only on the
offset ``i - j``, so the matrix is Toeplitz and is stored as two scalars per
adjacent diagonal plus one array per triangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gamma as gamma_fn

from .core import FadeParams, SpaceTimeGrid


def _prefactor(lam: float, b: float, h: float) -> float:
    return b * h ** (lam - 1.0) / gamma_fn(lam + 1.0)


def _diag(lam: float, gamma: float) -> float:
    return 2.0**-lam + 2.0 * 0.5**lam - 1.5**lam


def _sub_adjacent(lam: float, gamma: float) -> float:
    return (
        3.0 * 1.5**lam * gamma
        - 3.0 * 0.5**lam * gamma
        - 2.5**lam * gamma
        - 2.0**-lam * (1.0 - gamma)
    )


def _super_adjacent(lam: float, gamma: float) -> float:
    return (
        3.0 * 1.5**lam * (1.0 - gamma)
        - 3.0 * 0.5**lam * (1.0 - gamma)
        - 2.5**lam * (1.0 - gamma)
        - 2.0**-lam * gamma
    )


def _lower_tail(k: NDArray[np.float64], lam: float, gamma: float) -> NDArray[np.float64]:
    """Offsets ``k = i - j >= 2``."""
    first = (k + 0.5) ** lam - 2.0 * (k - 0.5) ** lam + (k - 1.5) ** lam
    second = (k + 1.5) ** lam - 2.0 * (k + 0.5) ** lam + (k - 0.5) ** lam
    return gamma * first - gamma * second


def _upper_tail(k: NDArray[np.float64], lam: float, gamma: float) -> NDArray[np.float64]:
    """Offsets ``k = j - i >= 2``."""
    first = 2.0 * (k + 0.5) ** lam - (k - 0.5) ** lam - (k + 1.5) ** lam
    second = 2.0 * (k - 0.5) ** lam - (k - 1.5) ** lam - (k + 0.5) ** lam
    return (1.0 - gamma) * first - (1.0 - gamma) * second


def _unit_entry(offset: int, lam: float, gamma: float) -> float:
    """Entry divided by ``b h^(lam-1) / Gamma(lam+1)`` for ``offset = i - j``."""
    if offset == 0:
        return _diag(lam, gamma)
    if offset == 1:
        return _sub_adjacent(lam, gamma)
    if offset == -1:
        return _super_adjacent(lam, gamma)
    if offset >= 2:
        return float(_lower_tail(np.float64(offset), lam, gamma))
    return float(_upper_tail(np.float64(-offset), lam, gamma))


def stiffness_entry(
    i: int,
    j: int,
    lam: float,
    gamma: float,
    b: float,
    h: float,
    size: int | None = None,
) -> float:
    """Closed-form value of ``z[i, j]`` (1-based interior indices).

    ``size`` is the number of interior unknowns ``I - 1``; when given, indices
    are checked against it.
    """
    if i < 1 or j < 1 or (size is not None and (i > size or j > size)):
        raise IndexError(f"stiffness index ({i}, {j}) out of range")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    if not h > 0.0:
        raise ValueError("h must be positive")
    return _prefactor(lam, b, h) * _unit_entry(i - j, lam, gamma)


@dataclass(frozen=True)
class StiffnessMatrix:
    """Toeplitz-structured storage of the ``(I-1) x (I-1)`` stiffness matrix.

    ``lower_band[k - 2]`` holds the entries with ``i - j = k`` and
    ``upper_band[k - 2]`` those with ``j - i = k``.
    """

    size: int
    diag: float
    sub_adjacent: float
    super_adjacent: float
    lower_band: NDArray[np.float64] = field(repr=False)
    upper_band: NDArray[np.float64] = field(repr=False)
    provenance: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.size, self.size)

    def first_column(self) -> NDArray[np.float64]:
        col = np.empty(self.size)
        col[0] = self.diag
        if self.size > 1:
            col[1] = self.sub_adjacent
            col[2:] = self.lower_band
        return col

    def first_row(self) -> NDArray[np.float64]:
        row = np.empty(self.size)
        row[0] = self.diag
        if self.size > 1:
            row[1] = self.super_adjacent
            row[2:] = self.upper_band
        return row

    def matvec(self, v: ArrayLike) -> NDArray[np.float64]:
        return matvec(self, v)

    def to_dense(self) -> NDArray[np.float64]:
        return to_dense(self)

    def scaled(self, factor: float) -> StiffnessMatrix:
        return StiffnessMatrix(
            self.size,
            self.diag * factor,
            self.sub_adjacent * factor,
            self.super_adjacent * factor,
            self.lower_band * factor,
            self.upper_band * factor,
            self.provenance,
        )


def build_stiffness(size: int, lam: float, gamma: float, b: float, h: float) -> StiffnessMatrix:
    """Assemble the band representation for ``size`` interior unknowns."""
    if size < 1:
        raise ValueError("need at least one interior unknown")
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    if not h > 0.0:
        raise ValueError("h must be positive")
    scale = _prefactor(lam, b, h)
    k = np.arange(2, size, dtype=float)
    lower = scale * _lower_tail(k, lam, gamma)
    upper = scale * _upper_tail(k, lam, gamma)
    lower.setflags(write=False)
    upper.setflags(write=False)
    return StiffnessMatrix(
        size=size,
        diag=scale * _diag(lam, gamma),
        sub_adjacent=scale * _sub_adjacent(lam, gamma),
        super_adjacent=scale * _super_adjacent(lam, gamma),
        lower_band=lower,
        upper_band=upper,
        provenance=(lam, gamma, b, h),
    )


def assemble(grid: SpaceTimeGrid, params: FadeParams) -> StiffnessMatrix:
    """Stiffness matrix for ``params`` on the interior nodes of ``grid``."""
    if (grid.x_left, grid.x_right) != (params.x_left, params.x_right):
        raise ValueError("grid and parameter domains differ")
    return build_stiffness(grid.intervals - 1, params.lam, params.gamma, params.b, grid.h)


def matvec(Z: StiffnessMatrix, v: ArrayLike) -> NDArray[np.float64]:
    """Product ``Z @ v`` computed diagonal by diagonal from the band storage."""
    v = np.asarray(v, dtype=float)
    n = Z.size
    if v.shape != (n,):
        raise ValueError(f"expected vector of length {n}, got shape {v.shape}")
    out = Z.diag * v
    if n == 1:
        return out
    out[1:] += Z.sub_adjacent * v[:-1]
    out[:-1] += Z.super_adjacent * v[1:]
    for k in range(2, n):
        out[k:] += Z.lower_band[k - 2] * v[:-k]
        out[:-k] += Z.upper_band[k - 2] * v[k:]
    return out


def to_dense(Z: StiffnessMatrix) -> NDArray[np.float64]:
    """Materialize the full matrix."""
    n = Z.size
    col = Z.first_column()
    row = Z.first_row()
    idx = np.arange(n)
    offset = idx[:, None] - idx[None, :]
    return np.where(offset >= 0, col[np.abs(offset)], row[np.abs(offset)])

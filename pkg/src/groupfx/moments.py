"""Linear moment systems for group-level parameters.

A group parameter theta is defined implicitly by E[h1(D) - h2(D) theta] = 0,
where h1 maps a unit's data to a k-vector and h2 to a k x k matrix. This module
holds the per-unit containers, the builders for the two concrete designs used
throughout (a difference regression with a binary event, and its instrumented
variant), and the solver that turns averaged moments into theta.

Conventions fixed here and relied on everywhere else:

* theta is ordered (intercept, effect).
* averages are computed by left-to-right summation in storage order, so that
  recomputing them from an exported file reproduces them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .exceptions import EmptyGroupError, InvalidInputError

DEFAULT_RANK_TOL = 1e-10


def _require_finite(name: str, value: np.ndarray | float) -> None:
    if not np.all(np.isfinite(value)):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")


def _seq_mean(values: np.ndarray) -> np.ndarray:
    """Mean over axis 0 with strictly sequential (left-to-right) summation."""
    # np.add.reduceat accumulates in storage order; plain .sum() may pairwise.
    total = np.add.reduceat(values, np.array([0]), axis=0)[0]
    return total / values.shape[0]


def _compensated_mean(values: np.ndarray) -> np.ndarray:
    """Neumaier-compensated mean over axis 0, still left to right."""
    total = np.zeros(values.shape[1:])
    carry = np.zeros(values.shape[1:])
    for row in values:
        t = total + row
        # compensate with whichever operand dominated the rounding
        carry = carry + np.where(
            np.abs(total) >= np.abs(row), (total - t) + row, (row - t) + total
        )
        total = t
    return (total + carry) / values.shape[0]


@dataclass(frozen=True)
class UnitMoment:
    """Moment contribution of a single unit.

    Parameters
    ----------
    h1 : ndarray, shape (k,)
        Constant part of the moment, in units of the outcome equation.
    h2 : ndarray, shape (k, k)
        Coefficient of theta; an outer product for regression designs, a
        cross product of instruments and regressors for IV designs.
    """

    h1: np.ndarray
    h2: np.ndarray

    def __post_init__(self) -> None:
        h1 = np.asarray(self.h1, dtype=float)
        h2 = np.asarray(self.h2, dtype=float)
        if h1.ndim != 1:
            raise InvalidInputError(f"h1 must be a vector, got shape {h1.shape}")
        k = h1.shape[0]
        if k < 1:
            raise InvalidInputError("moment dimension k must be at least 1")
        if h2.shape != (k, k):
            raise InvalidInputError(
                f"h2 must be {k}x{k} to match h1, got shape {h2.shape}"
            )
        _require_finite("h1", h1)
        _require_finite("h2", h2)
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)

    @property
    def k(self) -> int:
        return self.h1.shape[0]


@dataclass(frozen=True)
class GroupSample:
    """All unit moments of one group, stored as stacked arrays.

    ``h1s`` has shape (n_g, k) and ``h2s`` shape (n_g, k, k); row i is unit i
    in observation order. Construct from :class:`UnitMoment` objects via
    :meth:`from_units` or pass the arrays directly.
    """

    group_id: str
    h1s: np.ndarray
    h2s: np.ndarray

    def __post_init__(self) -> None:
        h1s = np.asarray(self.h1s, dtype=float)
        h2s = np.asarray(self.h2s, dtype=float)
        if h1s.ndim != 2 or h2s.ndim != 3:
            raise InvalidInputError("h1s must be (n, k) and h2s (n, k, k)")
        n, k = h1s.shape
        if h2s.shape != (n, k, k):
            raise InvalidInputError(
                f"h2s shape {h2s.shape} inconsistent with h1s shape {h1s.shape}"
            )
        if n < 1:
            raise EmptyGroupError(f"group {self.group_id!r} has no units")
        _require_finite("h1s", h1s)
        _require_finite("h2s", h2s)
        object.__setattr__(self, "h1s", h1s)
        object.__setattr__(self, "h2s", h2s)

    @classmethod
    def from_units(cls, group_id: str, units: Iterable[UnitMoment]) -> "GroupSample":
        units = list(units)
        if not units:
            raise EmptyGroupError(f"group {group_id!r} has no units")
        k = units[0].k
        for u in units:
            if u.k != k:
                raise InvalidInputError(
                    f"group {group_id!r} mixes moment dimensions {k} and {u.k}"
                )
        return cls(
            group_id=str(group_id),
            h1s=np.stack([u.h1 for u in units]),
            h2s=np.stack([u.h2 for u in units]),
        )

    @property
    def n_g(self) -> int:
        return self.h1s.shape[0]

    @property
    def k(self) -> int:
        return self.h1s.shape[1]

    @property
    def units(self) -> list[UnitMoment]:
        return [UnitMoment(self.h1s[i], self.h2s[i]) for i in range(self.n_g)]


@dataclass(frozen=True)
class MomentAverages:
    """Within-group arithmetic means of the unit moments."""

    H1: np.ndarray
    H2: np.ndarray

    @property
    def k(self) -> int:
        return self.H1.shape[0]


def build_did_unit(delta_y: float, e: int) -> UnitMoment:
    """Moment contribution of one unit in the difference regression.

    The unit's outcome change ``delta_y`` is regressed on a constant and the
    binary event ``e``; theta is (intercept, effect).
    """
    _require_finite("delta_y", delta_y)
    _require_finite("e", e)
    x = np.array([1.0, float(e)])
    return UnitMoment(h1=x * float(delta_y), h2=np.outer(x, x))


def build_iv_unit(delta_y: float, e: int, z: float) -> UnitMoment:
    """Moment contribution of one unit in the instrumented difference regression.

    Instruments (1, z) are crossed with regressors (1, e); theta remains
    (intercept, effect) and h2 is generally asymmetric. With z identical to e
    this reduces exactly to :func:`build_did_unit`.
    """
    _require_finite("delta_y", delta_y)
    _require_finite("e", e)
    _require_finite("z", z)
    zvec = np.array([1.0, float(z)])
    xvec = np.array([1.0, float(e)])
    return UnitMoment(h1=zvec * float(delta_y), h2=np.outer(zvec, xvec))


def average_moments(sample: GroupSample, compensated: bool = False) -> MomentAverages:
    """Exact arithmetic means of a group's unit moments.

    Summation is left-to-right in storage order, making the result
    deterministic for a given unit ordering (and reproducible after an
    export/ingest round trip). Reordering units moves the result only at the
    floating-point reassociation level. ``compensated`` switches to Kahan
    accumulation for last-bit accuracy on badly scaled data; it is off by
    default so that golden values stay stable.
    """
    if sample.n_g < 1:
        raise EmptyGroupError(f"group {sample.group_id!r} has no units")
    mean = _compensated_mean if compensated else _seq_mean
    return MomentAverages(H1=mean(sample.h1s), H2=mean(sample.h2s))


def solve_theta(
    avgs: MomentAverages, rank_tol: float = DEFAULT_RANK_TOL
) -> Optional[np.ndarray]:
    """Solve H2 theta = H1 for theta, or report a singular system.

    Returns None when the smallest singular value of H2 does not exceed
    ``rank_tol`` times the largest (the finite-precision stand-in for the
    population invertibility event); callers map None to omega = 0. A
    ``rank_tol`` of zero demands a strictly positive smallest singular value.
    """
    if rank_tol < 0:
        raise InvalidInputError(f"rank_tol must be nonnegative, got {rank_tol}")
    H1 = np.asarray(avgs.H1, dtype=float)
    H2 = np.asarray(avgs.H2, dtype=float)
    _require_finite("H1", H1)
    _require_finite("H2", H2)
    svals = np.linalg.svd(H2, compute_uv=False)
    smax = svals[0]
    smin = svals[-1]
    if smax == 0.0 or smin <= rank_tol * smax:
        return None
    return np.linalg.solve(H2, H1)


def batched_singular_values(H2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest singular values for a stack of (G, k, k) matrices."""
    svals = np.linalg.svd(np.asarray(H2, dtype=float), compute_uv=False)
    return svals[..., -1], svals[..., 0]

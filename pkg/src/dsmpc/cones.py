"""Euclidean projections onto boxes, second-order cones and their products."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Box:
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self) -> None:
        lb = np.asarray(self.lb, dtype=float).ravel()
        ub = np.asarray(self.ub, dtype=float).ravel()
        if lb.shape != ub.shape:
            raise ValueError("box bounds differ in length")
        if np.any(lb > ub):
            raise ValueError("box has lb > ub")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def dim(self) -> int:
        return self.lb.size

    @classmethod
    def nonpositive(cls, n: int) -> "Box":
        return cls(np.full(n, -np.inf), np.zeros(n))


@dataclass(frozen=True)
class SOC:
    """``{(u, t) : ||u|| <= t}`` with the scalar ``t`` stored last."""

    dim: int

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("second-order cone needs dimension >= 2")


Segment = Union[Box, SOC]


class ConeProduct:
    """Cartesian product of segments, laid out consecutively."""

    def __init__(self, segments: Sequence[Segment]):
        self.segments = tuple(segments)
        box_idx, lbs, ubs = [], [], []
        socs: dict[int, list[int]] = {}
        pos = 0
        for seg in self.segments:
            if isinstance(seg, Box):
                box_idx.append(np.arange(pos, pos + seg.dim))
                lbs.append(seg.lb)
                ubs.append(seg.ub)
            elif isinstance(seg, SOC):
                socs.setdefault(seg.dim, []).append(pos)
            else:
                raise TypeError(f"unknown segment {seg!r}")
            pos += seg.dim
        self.dim = pos
        self._box_idx = np.concatenate(box_idx) if box_idx else np.zeros(0, dtype=int)
        self._lb = np.concatenate(lbs) if lbs else np.zeros(0)
        self._ub = np.concatenate(ubs) if ubs else np.zeros(0)
        # rows of a (count, dim) index matrix per cone dimension
        self._soc_groups = [
            (dim, np.asarray(starts)[:, None] + np.arange(dim)[None, :]) for dim, starts in sorted(socs.items())
        ]
        # flat layout for projecting every cone in one pass: the u entries, their cone, and each t
        soc_starts = [(start, dim) for dim, starts in socs.items() for start in starts]
        soc_starts.sort()
        self._u_idx = np.array([i for st, dim in soc_starts for i in range(st, st + dim - 1)], dtype=int)
        self._u_cone = np.array([c for c, (st, dim) in enumerate(soc_starts) for _ in range(dim - 1)], dtype=int)
        self._t_idx = np.array([st + dim - 1 for st, dim in soc_starts], dtype=int)

    @property
    def n_linear(self) -> int:
        return self._box_idx.size

    @property
    def n_soc(self) -> int:
        return sum(ix.shape[0] for _, ix in self._soc_groups)

    def project(self, y: np.ndarray) -> np.ndarray:
        return project_product(y, self)

    def contains(self, y: np.ndarray, tol: float = 0.0) -> bool:
        y = np.asarray(y, dtype=float)
        if y.size != self.dim:
            return False
        yb = y[self._box_idx]
        if np.any(yb < self._lb - tol) or np.any(yb > self._ub + tol):
            return False
        for _, ix in self._soc_groups:
            Y = y[ix]
            if np.any(np.linalg.norm(Y[:, :-1], axis=1) > Y[:, -1] + tol):
                return False
        return True


def project_box(y, lb, ub):
    """Clip ``y`` into ``[lb, ub]`` elementwise."""
    lb_a, ub_a = np.asarray(lb, dtype=float), np.asarray(ub, dtype=float)
    if np.any(lb_a > ub_a):
        raise ValueError("box has lb > ub")
    out = np.maximum(lb_a, np.minimum(y, ub_a))
    return float(out) if np.ndim(out) == 0 else out


def _project_soc_rows(Y: np.ndarray) -> np.ndarray:
    u, t = Y[:, :-1], Y[:, -1]
    nu = np.linalg.norm(u, axis=1)
    w1 = 0.5 * np.maximum(0.0, t - nu)
    w2 = 0.5 * np.maximum(0.0, t + nu)
    theta = np.zeros_like(u)
    nz = nu > 0.0
    theta[nz] = u[nz] / nu[nz, None]
    theta[~nz, 0] = 1.0
    out = np.empty_like(Y)
    out[:, :-1] = (w2 - w1)[:, None] * theta
    out[:, -1] = w1 + w2
    # keep points that are already in the cone bit-for-bit
    inside = nu <= t
    out[inside] = Y[inside]
    return out


def project_soc(y: np.ndarray) -> np.ndarray:
    """Project ``y = (u, t)`` onto ``{||u|| <= t}``; the last entry is ``t``."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("second-order cone needs a vector of length >= 2")
    return _project_soc_rows(y[None, :])[0]


def project_product(y: np.ndarray, omega: ConeProduct) -> np.ndarray:
    """Apply the segment projections of ``omega`` to the matching slices of ``y``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (omega.dim,):
        raise ValueError(f"dimension mismatch: {y.shape} vs ({omega.dim},)")
    out = np.empty_like(y)
    bi = omega._box_idx
    out[bi] = np.maximum(omega._lb, np.minimum(y[bi], omega._ub))
    if omega._t_idx.size:
        u = y[omega._u_idx]
        t = y[omega._t_idx]
        nu = np.sqrt(np.bincount(omega._u_cone, weights=u * u, minlength=t.size))
        # outside the cone the projection is ((t + |u|) / 2) * (u / |u|, 1), or zero below the polar cone
        w = 0.5 * np.maximum(t + nu, 0.0)
        inside = nu <= t
        scale = np.where(inside, 1.0, w / np.where(nu > 0.0, nu, 1.0))
        out[omega._u_idx] = np.where(inside[omega._u_cone], u, u * scale[omega._u_cone])
        out[omega._t_idx] = np.where(inside, t, w)
    return out

"""Uncertain traffic parameters and the moments of linear combinations of them.

Parameters are addressed by tuple keys:

* ``("e", z, k)``: exogenous flow difference of link ``z`` at step ``k``
* ``("r", z, w, k)``: turning ratio from link ``z`` into ``w`` at step ``k``

Unless a correlation is supplied for a pair of keys, they are independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .network import Network

Key = tuple[Hashable, ...]

PSD_TOL = 1e-8  # relative to the trace
TRUNCATION = 1e-12  # pivot truncation, relative to the trace
RATIO_SUM_TOL = 1e-6


class ParamError(ValueError):
    """Missing or inconsistent stochastic parameters."""


class NotPSDError(ValueError):
    """A covariance matrix has an eigenvalue below the tolerance."""


@dataclass(frozen=True)
class RandomScalar:
    mean: float
    variance: float = 0.0

    def __post_init__(self) -> None:
        if not self.variance >= 0:
            raise ParamError(f"variance must be nonnegative, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class ParamSet:
    """Moments of every uncertain parameter over a horizon of ``horizon`` steps."""

    horizon: int
    exo: dict[str, list[RandomScalar]]
    turning: dict[str, list[dict[str, RandomScalar]]]
    correlations: dict[frozenset, float] = field(default_factory=dict)
    _adj: dict | None = field(default=None, init=False, repr=False, compare=False)

    def get(self, key: Key) -> RandomScalar:
        try:
            if key[0] == "e":
                _, z, k = key
                return self.exo[z][k]
            if key[0] == "r":
                _, z, w, k = key
                return self.turning[z][k][w]
        except (KeyError, IndexError):
            pass
        raise ParamError(f"missing parameter entry {key!r}")

    def mean(self, key: Key) -> float:
        return self.get(key).mean

    def ratio_mean(self, z: str, w: str, k: int) -> float:
        return self.get(("r", z, w, k)).mean

    def cov(self, a: Key, b: Key) -> float:
        pa = self.get(a)
        if a == b:
            return pa.variance
        pb = self.get(b)
        rho = self.correlations.get(frozenset((a, b)), 0.0)
        return rho * pa.std * pb.std

    def _adjacency(self) -> dict[Key, list[tuple[Key, float]]]:
        if self._adj is None:
            adj: dict[Key, list[tuple[Key, float]]] = {}
            for pair, rho in self.correlations.items():
                a, b = tuple(pair)
                adj.setdefault(a, []).append((b, rho))
                adj.setdefault(b, []).append((a, rho))
            self._adj = adj
        return self._adj

    def cov_matrix(self, keys: Sequence[Key]) -> np.ndarray:
        n = len(keys)
        out = np.zeros((n, n))
        pos: dict[Key, list[int]] = {}
        for i, a in enumerate(keys):
            out[i, i] = self.get(a).variance
            pos.setdefault(a, []).append(i)
        for i, a in enumerate(keys):
            # repeated keys are the same random variable
            for j in pos[a]:
                out[i, j] = out[i, i]
        adj = self._adjacency()
        if adj:
            for i, a in enumerate(keys):
                for b, rho in adj.get(a, ()):
                    for j in pos.get(b, ()):
                        out[i, j] = rho * self.get(a).std * self.get(b).std
        return out

    def correlate(self, a: Key, b: Key, rho: float) -> None:
        if not -1.0 <= rho <= 1.0:
            raise ParamError(f"correlation {rho} outside [-1, 1]")
        if a == b:
            raise ParamError("a parameter cannot be correlated with itself")
        self.get(a), self.get(b)
        self.correlations[frozenset((a, b))] = float(rho)
        self._adj = None

    def with_zero_variance(self) -> "ParamSet":
        exo = {z: [RandomScalar(p.mean) for p in ps] for z, ps in self.exo.items()}
        turning = {
            z: [{w: RandomScalar(p.mean) for w, p in step.items()} for step in steps]
            for z, steps in self.turning.items()
        }
        return ParamSet(self.horizon, exo, turning, {})

    def validate(self, net: "Network") -> "ParamSet":
        """Check coverage of ``net``; renormalize ratio means that sum to 1 within 1e-6."""
        for z in net.links:
            if z not in self.exo or len(self.exo[z]) < self.horizon:
                raise ParamError(f"missing exogenous moments for link {z!r}")
            down = net.downstream_links[z]
            if not down:
                continue
            steps = self.turning.get(z)
            if steps is None or len(steps) < self.horizon:
                raise ParamError(f"missing turning ratios for link {z!r}")
            for k in range(self.horizon):
                step = steps[k]
                for w in down:
                    if w not in step:
                        raise ParamError(f"missing turning ratio {z}->{w} at step {k}")
                total = sum(step[w].mean for w in down)
                if abs(total - 1.0) > RATIO_SUM_TOL:
                    raise ParamError(f"turning ratios of link {z!r} at step {k} sum to {total}")
                for w in down:
                    p = step[w]
                    mean = p.mean / total
                    if not 0.0 <= mean <= 1.0:
                        raise ParamError(f"turning ratio {z}->{w} mean {p.mean} outside [0, 1]")
                    step[w] = RandomScalar(mean, p.variance)
        for pair, rho in self.correlations.items():
            if not -1.0 <= rho <= 1.0:
                raise ParamError(f"correlation {rho} outside [-1, 1]")
        return self

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        links: dict[str, Any] = {}
        for z, ps in self.exo.items():
            links[z] = {"exo": [{"mean": p.mean, "variance": p.variance} for p in ps]}
        for z, steps in self.turning.items():
            item = links.setdefault(z, {})
            ws: dict[str, list] = {}
            for step in steps:
                for w, p in step.items():
                    ws.setdefault(w, []).append({"mean": p.mean, "variance": p.variance})
            item["turning"] = ws
        corr = []
        for pair, rho in self.correlations.items():
            a, b = sorted(pair, key=repr)
            corr.append({"a": list(a), "b": list(b), "rho": rho})
        return {"horizon": self.horizon, "links": links, "correlations": corr}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ParamSet":
        horizon = int(doc["horizon"])
        exo: dict[str, list[RandomScalar]] = {}
        turning: dict[str, list[dict[str, RandomScalar]]] = {}
        for z, item in doc["links"].items():
            exo[z] = [RandomScalar(float(p["mean"]), float(p.get("variance", 0.0))) for p in item.get("exo", [])]
            if "turning" in item:
                steps: list[dict[str, RandomScalar]] = [dict() for _ in range(horizon)]
                for w, ps in item["turning"].items():
                    for k, p in enumerate(ps[:horizon]):
                        steps[k][w] = RandomScalar(float(p["mean"]), float(p.get("variance", 0.0)))
                turning[z] = steps
        out = cls(horizon, exo, turning)
        for c in doc.get("correlations", []):
            a = _key_from_json(c["a"])
            b = _key_from_json(c["b"])
            out.correlate(a, b, float(c["rho"]))
        return out


def _key_from_json(raw: Sequence[Any]) -> Key:
    if raw[0] == "e":
        return ("e", str(raw[1]), int(raw[2]))
    return ("r", str(raw[1]), str(raw[2]), int(raw[3]))


def load_params(path: str | Path) -> ParamSet:
    with open(path) as fh:
        return ParamSet.from_dict(json.load(fh))


def save_params(params: ParamSet, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh, indent=1)


# ---------------------------------------------------------------------------
# moments of linear combinations


def combo_mean(coeffs: Sequence[float], b: float, means: Sequence[float]) -> float:
    """Expected value of ``a^T X + b``."""
    a = np.asarray(coeffs, dtype=float)
    mu = np.asarray(means, dtype=float)
    if a.shape != mu.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {mu.shape}")
    return float(a @ mu + b)


def _check_psd(cov: np.ndarray) -> None:
    if cov.size == 0:
        return
    scale = max(float(np.trace(cov)), 0.0)
    lam = np.linalg.eigvalsh((cov + cov.T) / 2)
    if lam[0] < -PSD_TOL * scale or (scale == 0.0 and lam[0] < 0.0):
        raise NotPSDError(f"covariance has eigenvalue {lam[0]:.3e} (trace {scale:.3e})")


def combo_variance(coeffs: Sequence[float], cov: np.ndarray) -> float:
    """Variance ``a^T Sigma a`` of a linear combination."""
    a = np.asarray(coeffs, dtype=float)
    S = np.asarray(cov, dtype=float)
    if S.shape != (a.size, a.size):
        raise ValueError(f"dimension mismatch: coefficients {a.size}, covariance {S.shape}")
    _check_psd(S)
    return max(float(a @ S @ a), 0.0)


def _stacked_cov(params: ParamSet, ratio_keys: list[Key], exo_keys: list[Key]) -> np.ndarray:
    keys = ratio_keys + exo_keys
    C = params.cov_matrix(keys)
    nr = len(ratio_keys)
    T = np.zeros((nr + 1, len(keys)))
    T[:nr, :nr] = np.eye(nr)
    T[nr, nr:] = 1.0
    return T @ C @ T.T


def sigma1_keys(net: "Network", z: str, k: int) -> tuple[list[Key], list[Key]]:
    ups = net.upstream_links[z]
    return [("r", w, z, l) for l in range(k + 1) for w in ups], [("e", z, l) for l in range(k + 1)]


def sigma2_keys(net: "Network", z: str, k: int) -> tuple[list[Key], list[Key]]:
    ups = net.upstream_links[z]
    return [("r", w, z, l) for l in range(k) for w in ups], [("e", z, l) for l in range(k + 1)]


def build_sigma1(net: "Network", params: ParamSet, z: str, k: int) -> np.ndarray:
    """Covariance of the predicted count ``n_z(t+k+1)``'s random coefficients.

    The vector is the upstream turning ratios into ``z`` at steps ``0..k``
    (step-major, upstream links in network order) followed by the cumulative
    exogenous difference ``sum_{l<=k} e_z(l)``.
    """
    if not 0 <= k < params.horizon:
        raise ParamError(f"step {k} outside horizon {params.horizon}")
    return _stacked_cov(params, *sigma1_keys(net, z, k))


def build_sigma2(net: "Network", params: ParamSet, z: str, k: int) -> np.ndarray:
    """Covariance for ``n_z(t+k) + e_z(t+k)``: ratios at steps ``0..k-1`` and cumulative exo up to ``k``.

    ``k = 0`` is accepted and yields ``[[Var e_z(0)]]``.
    """
    if k < 0:
        raise ParamError(f"step {k} must be nonnegative")
    return _stacked_cov(params, *sigma2_keys(net, z, k))


@dataclass(frozen=True)
class CovFactor:
    G: np.ndarray  # rows x dim, G^T G = Sigma

    @property
    def rank(self) -> int:
        return self.G.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.G.T @ self.G


def factorize(sigma: np.ndarray) -> CovFactor:
    """Pivoted Cholesky factor ``G`` with ``G^T G = sigma``, truncated at 1e-12 * trace."""
    S = np.array(sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance must be square")
    n = S.shape[0]
    scale = max(1.0, float(np.max(np.abs(S)))) if n else 1.0
    if n and np.max(np.abs(S - S.T)) > 1e-12 * scale:
        raise ValueError("covariance is not symmetric")
    S = (S + S.T) / 2
    tr = float(np.trace(S)) if n else 0.0
    if tr < 0 or (n and np.min(np.diag(S)) < -PSD_TOL * max(tr, 0.0)):
        raise NotPSDError("covariance has a negative variance")
    thresh = TRUNCATION * tr
    rows = []
    A = S.copy()
    for _ in range(n):
        i = int(np.argmax(np.diag(A)))
        piv = A[i, i]
        if piv <= thresh or piv <= 0.0:
            break
        row = A[i] / math.sqrt(piv)
        rows.append(row)
        A -= np.outer(row, row)
    if n and np.max(np.abs(A)) > PSD_TOL * max(tr, 1e-300):
        raise NotPSDError("covariance is indefinite beyond tolerance")
    G = np.array(rows) if rows else np.zeros((0, n))
    return CovFactor(G)


def chance_factor(eps: float) -> float:
    """Multiplier of the standard deviation in the distributionally robust bound."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"risk level must lie in (0, 1), got {eps}")
    return math.sqrt((1.0 - eps) / eps)


def independent_params(
    horizon: int,
    exo: Mapping[str, Iterable[tuple[float, float]]],
    turning: Mapping[str, Iterable[Mapping[str, tuple[float, float]]]],
) -> ParamSet:
    """Convenience constructor from ``(mean, variance)`` pairs."""
    return ParamSet(
        horizon,
        {z: [RandomScalar(*mv) for mv in ps] for z, ps in exo.items()},
        {z: [{w: RandomScalar(*mv) for w, mv in step.items()} for step in steps] for z, steps in turning.items()},
    )

"""Discrete metric-measure spaces: point clouds, cost matrices, loss tensors.

Flattening convention
---------------------
A coupling ``P`` between an ``n``-point space and an ``m``-point space is
vectorized column-major, ``vec(P) = [P_11, P_21, ..., P_n1, P_12, ..., P_nm]``,
so ``P[i, j]`` lives at position ``i + j * n``.  Every tensor and every
conic constraint in this package uses that layout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .accel import kernels
from .errors import InputError, MetricWarning

METRIC_KINDS = ("squared_euclidean", "euclidean", "graph")
LOSS_KINDS = ("quadratic",)


def vec_index(i: int, j: int, n: int) -> int:
    """Position of ``P[i, j]`` in ``vec(P)`` for a coupling with ``n`` rows."""
    return i + j * n


def vec(P: np.ndarray) -> np.ndarray:
    return np.asarray(P, dtype=float).ravel(order="F")


def unvec(p: np.ndarray, n: int, m: int | None = None) -> np.ndarray:
    m = n if m is None else m
    return np.asarray(p, dtype=float).reshape((n, m), order="F")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of ``N`` points in ``R^d``, stored as an ``(N, d)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError(f"point cloud must be an (N, d) array with N, d >= 1, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.N


@dataclass(frozen=True)
class MetricMatrix:
    """Symmetric nonnegative ``N x N`` cost matrix with zero diagonal."""

    entries: np.ndarray
    metric_kind: str = "squared_euclidean"

    def __post_init__(self):
        C = np.asarray(self.entries, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise InputError(f"cost matrix must be square, got shape {C.shape}")
        if self.metric_kind not in METRIC_KINDS:
            raise InputError(f"unknown metric kind {self.metric_kind!r}")
        if not np.all(np.isfinite(C)):
            raise InputError("cost matrix has non-finite entries")
        if np.any(C < 0):
            raise InputError("cost matrix has negative entries")
        if np.any(np.diag(C) != 0):
            raise InputError("cost matrix must have a zero diagonal")
        if not np.array_equal(C, C.T):
            raise InputError("cost matrix must be symmetric")
        object.__setattr__(self, "entries", _frozen(C))

    @property
    def N(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class GroupSpec:
    """Group labels for agents and the two edge weights of the graph metric.

    ``group_of`` maps agent index (0-based) to a hashable label; a sequence is
    read as ``group_of[i]``.
    """

    group_of: Mapping[int, object] | Sequence[object]
    intra_weight: float
    inter_weight: float
    labels: tuple = field(init=False, repr=False)

    def __post_init__(self):
        g = self.group_of
        if isinstance(g, Mapping):
            keys = sorted(g)
            if keys != list(range(len(keys))):
                raise InputError("group_of must label every agent index 0..N-1 exactly once")
            labels = tuple(g[k] for k in keys)
        else:
            labels = tuple(g)
        if not labels:
            raise InputError("group_of is empty")
        if not (self.intra_weight > 0 and self.inter_weight > 0):
            raise InputError("graph weights must be positive")
        if not self.intra_weight < self.inter_weight:
            raise InputError("intra_weight must be strictly smaller than inter_weight")
        object.__setattr__(self, "labels", labels)

    @property
    def N(self) -> int:
        return len(self.labels)

    def groups(self) -> dict:
        out: dict = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return out


@dataclass(frozen=True)
class LossTensor:
    """Loss tensor ``G`` of shape ``(n*m, n*m)`` on column-major coupling indices."""

    entries: np.ndarray
    loss_kind: str = "quadratic"
    source_sizes: tuple = ()

    def __post_init__(self):
        G = np.asarray(self.entries, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise InputError(f"loss tensor must be square, got shape {G.shape}")
        if self.loss_kind not in LOSS_KINDS:
            raise InputError(f"unknown loss kind {self.loss_kind!r}")
        sizes = tuple(self.source_sizes)
        if not sizes:
            n = int(round(np.sqrt(G.shape[0])))
            sizes = (n, n)
        if sizes[0] * sizes[1] != G.shape[0]:
            raise InputError(f"source sizes {sizes} do not match tensor order {G.shape[0]}")
        object.__setattr__(self, "entries", _frozen(G))
        object.__setattr__(self, "source_sizes", sizes)

    @property
    def N(self) -> int:
        return self.source_sizes[0]

    def is_swap_symmetric(self, rtol=1e-12) -> bool:
        G = self.entries
        scale = max(1.0, float(np.max(np.abs(G)))) if G.size else 1.0
        return bool(np.max(np.abs(G - G.T), initial=0.0) <= rtol * scale)


def as_cloud(x) -> PointCloud:
    return x if isinstance(x, PointCloud) else PointCloud(x)


def pairwise_cost(cloud, metric_kind: str = "squared_euclidean") -> MetricMatrix:
    """Pairwise cost matrix of a point cloud.

    Parameters
    ----------
    cloud : PointCloud or array_like of shape (N, d)
    metric_kind : {"squared_euclidean", "euclidean"}

    Returns
    -------
    MetricMatrix
    """
    cloud = as_cloud(cloud)
    if metric_kind not in ("squared_euclidean", "euclidean"):
        raise InputError(f"pairwise_cost supports squared_euclidean and euclidean, not {metric_kind!r}")
    D = kernels.pairwise_sq_dists(np.ascontiguousarray(cloud.points))
    if metric_kind == "euclidean":
        D = np.sqrt(D)
    return MetricMatrix(D, metric_kind)


def graph_metric(spec: GroupSpec, N: int) -> MetricMatrix:
    """Two-level graph metric: ``intra_weight`` inside a group, ``inter_weight`` across."""
    if spec.N != N:
        raise InputError(f"group spec covers {spec.N} agents, expected {N}")
    if spec.inter_weight > 2 * spec.intra_weight:
        warnings.warn(
            f"inter_weight {spec.inter_weight} exceeds twice intra_weight {spec.intra_weight}; "
            "the graph costs violate the triangle inequality",
            MetricWarning,
            stacklevel=2,
        )
    labels = list(spec.labels)
    same = np.array([[labels[i] == labels[k] for k in range(N)] for i in range(N)])
    C = np.where(same, float(spec.intra_weight), float(spec.inter_weight))
    np.fill_diagonal(C, 0.0)
    return MetricMatrix(C, "graph")


def _entries(C) -> np.ndarray:
    if isinstance(C, MetricMatrix):
        return np.ascontiguousarray(C.entries)
    return np.ascontiguousarray(np.asarray(C, dtype=float))


def build_loss_tensor(Cx, Cy, loss_kind: str = "quadratic", require_square: bool = True) -> LossTensor:
    """Loss tensor ``G[(i,j),(i',j')] = 0.5 * (Cx[i,i'] - Cy[j,j'])**2``.

    Rows and columns are indexed by ``i + j * n`` (column-major ``vec``).
    """
    if loss_kind != "quadratic":
        raise InputError(f"only the quadratic loss is implemented, got {loss_kind!r}")
    X = _entries(Cx)
    Y = _entries(Cy)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise InputError("cost matrices must be square")
    n, m = X.shape[0], Y.shape[0]
    if require_square and n != m:
        raise InputError(f"uniform square couplings need equal sizes, got {n} and {m}")
    return LossTensor(kernels.loss_tensor(X, Y), loss_kind, (n, m))

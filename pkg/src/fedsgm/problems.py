"""Client oracles, benchmark problems and dataset handling.

Every client exposes value/subgradient oracles for its objective ``f_j`` and
constraint ``g_j``; the federated problem averages them over clients in
ascending id order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import Domain, as_vector, max_norm, ordered_scalar_mean
from . import rng as rngmod


class ProblemError(ValueError):
    pass


class DatasetError(ValueError):
    pass


class ClientProblem:
    """Base class for a client's objective/constraint pair.

    Subclasses implement the four scalar/vector oracles. The batched
    ``*_values`` methods take a ``(k, d)`` array of points; the default loops.
    """

    client_id: int = 0
    lipschitz_G: float = 0.0

    def objective_value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def objective_subgrad(self, w: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def constraint_value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def constraint_subgrad(self, w: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def objective_values(self, W: np.ndarray) -> np.ndarray:
        return np.array([self.objective_value(w) for w in W])

    def constraint_values(self, W: np.ndarray) -> np.ndarray:
        return np.array([self.constraint_value(w) for w in W])


class CallableClient(ClientProblem):
    """Client assembled from plain functions; handy for small hand-built problems."""

    def __init__(self, f: Callable, grad_f: Callable, g: Callable, grad_g: Callable,
                 lipschitz_G: float, client_id: int = 0):
        self._f, self._grad_f, self._g, self._grad_g = f, grad_f, g, grad_g
        self.lipschitz_G = float(lipschitz_G)
        self.client_id = client_id

    def objective_value(self, w):
        return float(self._f(w))

    def objective_subgrad(self, w, rng=None):
        return np.asarray(self._grad_f(w), dtype=np.float64)

    def constraint_value(self, w):
        return float(self._g(w))

    def constraint_subgrad(self, w, rng=None):
        return np.asarray(self._grad_g(w), dtype=np.float64)


class LinearBallClient(ClientProblem):
    """f_j(w) = <c_j, w>,  g_j(w) = ||w||^2 - r^2."""

    def __init__(self, c: np.ndarray, radius: float, lipschitz_G: float, client_id: int):
        self.c = c
        self.radius = float(radius)
        self.lipschitz_G = float(lipschitz_G)
        self.client_id = client_id

    def objective_value(self, w):
        return float(self.c @ w)

    def objective_subgrad(self, w, rng=None):
        return self.c.copy()

    def constraint_value(self, w):
        return float(w @ w) - self.radius**2

    def constraint_subgrad(self, w, rng=None):
        return 2.0 * w

    def objective_values(self, W):
        return W @ self.c

    def constraint_values(self, W):
        return np.einsum("ij,ij->i", W, W) - self.radius**2


def logistic_loss(w: np.ndarray, x: np.ndarray, y: int) -> float:
    """-y<w,x> + log(1 + exp(<w,x>)), stable for large |<w,x>|."""
    if w.shape != x.shape:
        raise ProblemError(f"w has shape {w.shape}, x has shape {x.shape}")
    z = float(w @ x)
    return float(np.logaddexp(0.0, z)) - y * z


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LogisticNPClient(ClientProblem):
    """Neyman-Pearson client: f_j is the mean class-0 logistic loss, g_j the class-1 one.

    With ``batch_size`` set and a generator supplied, subgradients use a
    uniform row subsample of that size instead of the full local set.
    """

    def __init__(self, X0: np.ndarray, X1: np.ndarray, lipschitz_G: float, client_id: int,
                 batch_size: int | None = None):
        if len(X0) == 0 or len(X1) == 0:
            raise ProblemError(f"client {client_id} needs rows of both classes")
        self.X0, self.X1 = X0, X1
        self.lipschitz_G = float(lipschitz_G)
        self.client_id = client_id
        self.batch_size = batch_size

    def _rows(self, X, rng):
        if self.batch_size is None or rng is None or self.batch_size >= len(X):
            return X
        return X[rng.choice(len(X), size=self.batch_size, replace=False)]

    # class 0: log(1 + e^z); class 1: log(1 + e^-z)
    def objective_value(self, w):
        return float(np.mean(np.logaddexp(0.0, self.X0 @ w)))

    def objective_subgrad(self, w, rng=None):
        X = self._rows(self.X0, rng)
        return X.T @ _sigmoid(X @ w) / len(X)

    def constraint_value(self, w):
        return float(np.mean(np.logaddexp(0.0, -(self.X1 @ w))))

    def constraint_subgrad(self, w, rng=None):
        X = self._rows(self.X1, rng)
        return X.T @ (_sigmoid(X @ w) - 1.0) / len(X)

    def objective_values(self, W):
        return np.mean(np.logaddexp(0.0, W @ self.X0.T), axis=1)

    def constraint_values(self, W):
        Z = W @ self.X1.T
        return np.mean(np.logaddexp(0.0, Z) - Z, axis=1)


@dataclass(frozen=True)
class OptimumHint:
    w: np.ndarray
    f: float
    provenance: str


@dataclass
class FederatedProblem:
    clients: list
    domain: Domain
    optimum_hint: OptimumHint | None = None
    name: str = "problem"
    dim: int = field(default=0)

    def __post_init__(self):
        if not self.clients:
            raise ProblemError("a federated problem needs at least one client")
        if self.domain.dim is not None:
            if self.dim and self.dim != self.domain.dim:
                raise ProblemError("domain dimension disagrees with problem dimension")
            self.dim = self.domain.dim
        if not self.dim:
            raise ProblemError("problem dimension unknown")
        for j, client in enumerate(self.clients):
            client.client_id = j

    @property
    def n(self) -> int:
        return len(self.clients)

    @property
    def lipschitz_G(self) -> float:
        return max(c.lipschitz_G for c in self.clients)

    def global_f(self, w) -> float:
        return ordered_scalar_mean([c.objective_value(w) for c in self.clients])

    def global_g(self, w) -> float:
        return ordered_scalar_mean([c.constraint_value(w) for c in self.clients])

    def global_values(self, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = np.zeros(len(W))
        g = np.zeros(len(W))
        for c in self.clients:
            f += c.objective_values(W)
            g += c.constraint_values(W)
        return f / self.n, g / self.n


def global_eval(problem: FederatedProblem, w) -> tuple[float, float]:
    return problem.global_f(w), problem.global_g(w)


@dataclass(frozen=True)
class LabeledDataset:
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2 or len(self.rows) != len(self.labels):
            raise DatasetError("rows must be an (m, d) array with one label per row")
        if not np.all(np.isfinite(self.rows)):
            raise DatasetError("dataset has missing or non-finite values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DatasetError("labels must be 0 or 1")

    @property
    def d_feat(self) -> int:
        return self.rows.shape[1]

    def class_rows(self, label: int) -> np.ndarray:
        return self.rows[self.labels == label]


def standardize(rows: np.ndarray) -> np.ndarray:
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    out = np.zeros_like(rows)
    live = std > 0
    out[:, live] = (rows[:, live] - mean[live]) / std[live]
    return out


def load_csv(path) -> LabeledDataset:
    """Read ``features..., label`` rows and standardize every feature column.

    A first line whose cells are all non-numeric is treated as a header.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    with path.open(newline="") as fh:
        lines = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    if lines and all(not _is_number(cell) for cell in lines[0]):
        lines = lines[1:]
    if not lines:
        raise DatasetError(f"{path}: no data rows")
    width = len(lines[0])
    if width < 2:
        raise DatasetError(f"{path}: need at least one feature column and a label column")
    data = np.empty((len(lines), width))
    for i, row in enumerate(lines):
        if len(row) != width:
            raise DatasetError(f"{path}: row {i + 1} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise DatasetError(f"{path}: row {i + 1}, column {j + 1}: cannot parse {cell!r}") from None
    labels = data[:, -1]
    bad = np.flatnonzero((labels != 0) & (labels != 1))
    if bad.size:
        raise DatasetError(f"{path}: row {bad[0] + 1}: label {labels[bad[0]]:g} is not 0 or 1")
    return LabeledDataset(standardize(data[:, :-1]), labels.astype(np.int64))


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def make_np_synthetic(rows: int, d_feat: int, class_balance: float = 0.5, seed: int = 0,
                      separation: float = 3.0) -> LabeledDataset:
    """Two Gaussian classes with unit covariance.

    ``class_balance`` is the fraction of class-1 rows. Class 1 is centred at
    ``separation * u`` and class 0 at ``-separation * u'`` with ``u'`` tilted
    60 degrees away from ``u``, so objective and constraint gradients are not
    aligned.
    """
    if not 0.0 < class_balance < 1.0:
        raise DatasetError("class_balance must lie in (0, 1)")
    gen = rngmod.stream(seed, "problem", rows, d_feat)
    n1 = max(1, min(rows - 1, int(round(rows * class_balance))))
    labels = np.zeros(rows, dtype=np.int64)
    labels[:n1] = 1
    u = gen.standard_normal(d_feat)
    u /= np.linalg.norm(u)
    v = gen.standard_normal(d_feat)
    v -= (v @ u) * u
    v /= np.linalg.norm(v) if d_feat > 1 else 1.0
    u0 = 0.5 * u + (math.sqrt(3) / 2) * v if d_feat > 1 else u
    means = np.where(labels[:, None] == 1, separation * u, -separation * u0)
    X = means + gen.standard_normal((rows, d_feat))
    order = gen.permutation(rows)
    return LabeledDataset(X[order], labels[order])


def _shards(indices: np.ndarray, n: int) -> list[np.ndarray]:
    return [indices[j::n] for j in range(n)]


def build_np_classification(data: LabeledDataset, n: int, partition_seed: int = 0,
                            domain: Domain | None = None, heterogeneous: bool = False,
                            batch_size: int | None = None) -> FederatedProblem:
    """Split each class over ``n`` clients and wrap them as NP clients.

    IID partitions shuffle each class and deal rows round-robin, so shard
    sizes differ by at most one. ``heterogeneous=True`` instead sorts each
    class along a random direction and hands out contiguous blocks.
    """
    if n < 1:
        raise ProblemError("n must be >= 1")
    gen = rngmod.stream(partition_seed, "partition", n)
    direction = gen.standard_normal(data.d_feat)
    per_class = []
    for label in (0, 1):
        X = data.class_rows(label)
        if len(X) < n:
            raise ProblemError(f"class {label} has {len(X)} rows, fewer than n={n} clients")
        if heterogeneous:
            order = np.argsort(X @ direction, kind="stable")
            per_class.append([X[idx] for idx in np.array_split(order, n)])
        else:
            per_class.append([X[idx] for idx in _shards(gen.permutation(len(X)), n)])
    G = float(np.max(np.linalg.norm(data.rows, axis=1)))
    clients = [LogisticNPClient(per_class[0][j], per_class[1][j], G, j, batch_size) for j in range(n)]
    return FederatedProblem(clients, domain or Domain.unbounded(), name="np_classification",
                            dim=data.d_feat)


def build_synthetic_linear_ball(d: int, direction, radius_constraint: float, n: int = 8,
                                half_width: float = 2.0, heterogeneity: float = 0.5,
                                seed: int = 0) -> FederatedProblem:
    """min <c, w> s.t. ||w||^2 <= r^2 over the cube [-h, h]^d.

    Client ``j`` holds ``c + p_j`` with the perturbations centred to mean
    zero, so the global problem keeps the closed-form optimum
    ``w* = -r c / ||c||``, ``f* = -r ||c||``.
    """
    c = np.asarray(direction, dtype=np.float64).reshape(-1)
    if c.shape[0] != d:
        raise ProblemError(f"direction has dimension {c.shape[0]}, expected {d}")
    norm_c = float(np.linalg.norm(c))
    if not norm_c > 0 or not math.isfinite(norm_c):
        raise ProblemError("direction must be a finite nonzero vector")
    if not 0 < radius_constraint < half_width:
        raise ProblemError("need 0 < radius_constraint < half_width")
    gen = rngmod.stream(seed, "problem", n, d)
    perturb = heterogeneity * gen.standard_normal((n, d)) if n > 1 else np.zeros((n, d))
    perturb -= perturb.mean(axis=0)
    cs = [c + p for p in perturb]
    domain = Domain.cube(d, half_width)
    G = max(max(float(np.linalg.norm(cj)) for cj in cs), 2.0 * max_norm(domain))
    clients = [LinearBallClient(cj, radius_constraint, G, j) for j, cj in enumerate(cs)]
    hint = OptimumHint(-radius_constraint * c / norm_c, -radius_constraint * norm_c, "derived: KKT")
    return FederatedProblem(clients, domain, hint, name="linear_ball")

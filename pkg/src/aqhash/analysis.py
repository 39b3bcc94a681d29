"""Optimization-geometry toolkit.

Coherence of a code matrix (columns = one relaxed code per class), the
Welch lower bound with a numerical walk through its Gram-matrix proof,
gradient descent on the sum of squared pairwise cosines, loss-landscape
grids along filter-normalized random directions, and attention-map
export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .extractor import token_coordinates


def _column_norms(V: np.ndarray, op: str) -> np.ndarray:
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] < 1:
        raise ShapeError(op, V.shape, reason="expected a (dims, columns) matrix, got")
    norms = np.linalg.norm(V, axis=0)
    if (norms == 0).any():
        raise DataError(f"{op}: column {int(np.flatnonzero(norms == 0)[0])} is zero")
    return norms


def coherence_mu(V: np.ndarray) -> tuple[float, tuple[int, int]]:
    """Max |cosine| over distinct column pairs, with an attaining pair."""
    V = np.asarray(V, dtype=np.float64)
    if V.shape[1] < 2:
        raise ShapeError("coherence_mu", V.shape, reason="need at least 2 columns, got")
    norms = _column_norms(V, "coherence_mu")
    gram = np.abs((V / norms).T @ (V / norms))
    np.fill_diagonal(gram, -1.0)
    i, j = np.unravel_index(int(np.argmax(gram)), gram.shape)
    return float(gram[i, j]), (int(i), int(j))


def welch_lower_bound(n_columns: int, n_dims: int) -> float:
    """sqrt((C - n) / (n (C - 1))); 0 when C <= n (the bound is vacuous)."""
    if n_columns < 2 or n_dims < 1:
        raise DataError(f"need C > 1 and n >= 1, got C={n_columns}, n={n_dims}")
    if n_columns <= n_dims:
        return 0.0
    return math.sqrt((n_columns - n_dims) / (n_dims * (n_columns - 1)))


@dataclass
class InequalityCheck:
    name: str
    lhs: float
    rhs: float
    equality: bool = False

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs

    @property
    def holds(self) -> bool:
        tol = 1e-12 * max(1.0, abs(self.lhs), abs(self.rhs))
        if self.equality:
            return abs(self.slack) <= max(tol, 1e-9 * max(1.0, abs(self.rhs)))
        return self.slack >= -tol


@dataclass
class ProofTrace:
    """Numerical walk through the Gram-matrix proof of the coherence bound."""

    n_dims: int
    n_columns: int
    mu: float
    bound: float
    gram_trace: float
    gram_fro_sq: float
    checks: list[InequalityCheck] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return all(c.holds for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"C={self.n_columns} n={self.n_dims} mu={self.mu:.12f} bound={self.bound:.12f}"]
        for c in self.checks:
            rel = "==" if c.equality else ">="
            out.append(f"  {c.name}: {c.lhs:.9g} {rel} {c.rhs:.9g} "
                       f"(slack {c.slack:+.3e}) {'ok' if c.holds else 'VIOLATED'}")
        return out


def verify_bound(V: np.ndarray) -> ProofTrace:
    """Check every step of the bound's proof on a concrete matrix.

    Columns are unit-normalized internally.  Chain: the Gram matrix has
    trace C and at most n positive eigenvalues; Cauchy-Schwarz forces
    (Tr G)^2 <= n * sum(eig^2) = n * ||G||_F^2, so the off-diagonal energy
    is at least C(C-n)/n, and the max squared cosine dominates the mean.
    """
    norms = _column_norms(V, "verify_bound")
    X = np.asarray(V, dtype=np.float64) / norms
    n, C = X.shape
    G = X.T @ X
    eig = np.linalg.eigvalsh(G)
    trace = float(np.trace(G))
    fro_sq = float((G * G).sum())
    off_diag = G.copy()
    np.fill_diagonal(off_diag, 0.0)
    off_energy = float((off_diag * off_diag).sum())
    mu, _ = coherence_mu(X)
    bound = welch_lower_bound(C, n)
    checks = [
        InequalityCheck("trace(G) == C", trace, float(C), equality=True),
        InequalityCheck("||G||_F^2 == sum(eig^2)", fro_sq, float((eig * eig).sum()),
                        equality=True),
        InequalityCheck("n * ||G||_F^2 >= trace(G)^2", n * fro_sq, trace * trace),
        InequalityCheck("off-diagonal energy >= C(C-n)/n", off_energy, C * (C - n) / n),
        InequalityCheck("mu^2 >= mean off-diagonal square", mu * mu,
                        off_energy / (C * (C - 1))),
        InequalityCheck("mu >= welch bound", mu, bound),
    ]
    return ProofTrace(n_dims=n, n_columns=C, mu=mu, bound=bound,
                      gram_trace=trace, gram_fro_sq=fro_sq, checks=checks)


def cosine_value(V: np.ndarray) -> float:
    """f(V) = sum over ordered pairs i != j of cos^2(angle between columns)."""
    norms = _column_norms(V, "cosine_value")
    U = np.asarray(V, dtype=np.float64) / norms
    G = U.T @ U
    np.fill_diagonal(G, 0.0)
    return float((G * G).sum())


def cosine_objective(V: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and analytic gradient of the squared-cosine objective.

    With U the column-normalized V and G-hat the off-diagonal Gram, the
    gradient w.r.t. U is 4*U*G-hat; projecting out each column's radial
    component and dividing by its norm chains back to V.
    """
    norms = _column_norms(V, "cosine_objective")
    U = np.asarray(V, dtype=np.float64) / norms
    G = U.T @ U
    np.fill_diagonal(G, 0.0)
    value = float((G * G).sum())
    dU = 4.0 * (U @ G)
    radial = (U * dU).sum(axis=0)
    grad = (dU - U * radial) / norms
    return value, grad


@dataclass
class MinimizeResult:
    final_mu: float
    final_value: float
    matrix: np.ndarray
    trajectory: list[tuple[float, float]]  # (objective, mu) per recorded step


def minimize_coherence(n_columns: int, n_dims: int, steps: int = 2000,
                       seed: int = 0, learning_rate: float = 0.001,
                       record_every: int = 10) -> MinimizeResult:
    """Projected gradient descent on the squared-cosine objective.

    Columns are renormalized to unit length after every step (the
    objective is scale-invariant, so this is a pure conditioning aid).
    """
    if n_columns < 2 or n_dims < 1:
        raise DataError(f"need C > 1 and n >= 1, got C={n_columns}, n={n_dims}")
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(n_dims, n_columns))
    V /= np.linalg.norm(V, axis=0)
    trajectory = []
    for step in range(steps):
        value, grad = cosine_objective(V)
        if step % record_every == 0:
            trajectory.append((value, coherence_mu(V)[0]))
        V = V - learning_rate * grad
        V /= np.linalg.norm(V, axis=0)
    final_value = cosine_value(V)
    final_mu = coherence_mu(V)[0]
    trajectory.append((final_value, final_mu))
    return MinimizeResult(final_mu=final_mu, final_value=final_value,
                          matrix=V, trajectory=trajectory)


@dataclass
class LandscapeGrid:
    offsets_a: np.ndarray
    offsets_b: np.ndarray
    losses: np.ndarray  # (resolution, resolution), row = a index
    center: float

    def csv_lines(self) -> list[str]:
        lines = ["a,b,loss"]
        for i, a in enumerate(self.offsets_a):
            for j, b in enumerate(self.offsets_b):
                lines.append(f"{a:.10g},{b:.10g},{self.losses[i, j]:.12g}")
        return lines


def landscape_grid(V: np.ndarray, resolution: int = 41, extent: float = 1.0,
                   seed: int = 0) -> LandscapeGrid:
    """Objective values over a 2-D slice spanned by two random directions.

    Directions are Gaussian with each column rescaled to the matching
    column norm of V (the filter-normalization analogue), so the extent
    is expressed in units of the codes themselves.  Resolution must be
    odd so the exact center cell evaluates the unperturbed matrix.
    """
    if resolution < 3 or resolution % 2 == 0:
        raise DataError(f"resolution must be odd and >= 3, got {resolution}")
    norms = _column_norms(V, "landscape_grid")
    rng = np.random.default_rng(seed)
    half = resolution // 2
    step = extent / half
    offsets = (np.arange(resolution) - half) * step  # exact 0.0 at the center

    def direction():
        D = rng.normal(size=V.shape)
        return D / np.linalg.norm(D, axis=0) * norms

    d1, d2 = direction(), direction()
    losses = np.empty((resolution, resolution))
    for i, a in enumerate(offsets):
        for j, b in enumerate(offsets):
            losses[i, j] = cosine_value(V + a * d1 + b * d2)
    return LandscapeGrid(offsets_a=offsets.copy(), offsets_b=offsets.copy(),
                         losses=losses, center=float(losses[half, half]))


@dataclass
class CoherenceReport:
    n_dims: int
    n_columns: int
    mu: float
    attaining_pair: tuple[int, int]
    welch_bound: float
    gram_trace: float
    gram_fro_sq: float

    def as_text(self) -> str:
        head = [
            "coherence report",
            f"  columns (classes)  C = {self.n_columns}",
            f"  dimensions         n = {self.n_dims}",
            f"  coherence          mu = {self.mu:.10f}",
            f"  attained by pair   ({self.attaining_pair[0]}, {self.attaining_pair[1]})",
            f"  welch lower bound  {self.welch_bound:.10f}",
            f"  gram trace         {self.gram_trace:.10f}",
            f"  gram frobenius^2   {self.gram_fro_sq:.10f}",
            "",
        ]
        kv = [f"mu={self.mu:.12g}",
              f"welch_bound={self.welch_bound:.12g}",
              f"pair_i={self.attaining_pair[0]}",
              f"pair_j={self.attaining_pair[1]}",
              f"gram_trace={self.gram_trace:.12g}",
              f"gram_fro_sq={self.gram_fro_sq:.12g}"]
        return "\n".join(head + kv)


def coherence_report(V: np.ndarray) -> CoherenceReport:
    norms = _column_norms(V, "coherence_report")
    X = np.asarray(V, dtype=np.float64) / norms
    mu, pair = coherence_mu(X)
    G = X.T @ X
    return CoherenceReport(n_dims=V.shape[0], n_columns=V.shape[1], mu=mu,
                           attaining_pair=pair,
                           welch_bound=welch_lower_bound(V.shape[1], V.shape[0]),
                           gram_trace=float(np.trace(G)),
                           gram_fro_sq=float((G * G).sum()))


def representative_columns(labels: np.ndarray, seed: int) -> np.ndarray:
    """One row index per distinct label, drawn uniformly, in label order."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picks = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        picks.append(int(rng.choice(members)))
    return np.array(picks, dtype=np.int64)


def relaxed_class_codes(model, dataset, indices: np.ndarray, seed: int = 0) -> np.ndarray:
    """One relaxed k-bit code per class as columns of a (k, C) matrix."""
    indices = np.asarray(indices)
    labels = np.asarray(dataset.labels)[indices]
    picks = representative_columns(labels, seed)
    cols = []
    for p in picks:
        logits = model.infer_logits(dataset.pyramid(int(indices[p])))
        cols.append(np.tanh(logits.data.reshape(-1)))
    return np.array(cols).T


def attention_export(model, pyramid) -> tuple[np.ndarray, list[tuple[int, int, int]]]:
    """Head-averaged per-query attention rows plus each token's coordinates."""
    weights = model.attention_rows(pyramid)
    coords = token_coordinates(model.config.levels)
    return weights, coords


def attention_csv_lines(weights: np.ndarray, coords: list[tuple[int, int, int]]) -> list[str]:
    lines = ["query,level,row,col,weight"]
    for q in range(weights.shape[0]):
        for t, (level, row, col) in enumerate(coords):
            lines.append(f"{q},{level},{row},{col},{weights[q, t]:.12g}")
    return lines

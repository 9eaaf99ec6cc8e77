"""Calibration matrices, entropy-based subset selection, and rank fidelity.

The calibration matrix records which of K interpolated candidates solved each
item. Per-item Bernoulli entropy of the empirical solve rate scores how
informative an item is for ranking candidates; subsets picked by entropy,
uniform sampling, or endpoint disagreement can then be compared by the
Spearman correlation between subset-induced and full-benchmark rankings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import SubsetSelectionError
from .evaluation import ItemOutcome, SimulatedBenchmark, candidate_id
from .merge import Genotype, MergeKind


@dataclass
class CorrectnessMatrix:
    """K models x n items binary outcomes, with matching token lengths."""

    model_ids: list[str]
    item_ids: list[str]
    correct: np.ndarray
    lengths: np.ndarray

    def __post_init__(self):
        self.correct = np.asarray(self.correct, dtype=np.int8)
        self.lengths = np.asarray(self.lengths, dtype=np.float64)
        k, n = len(self.model_ids), len(self.item_ids)
        if k < 2:
            raise ValueError(f"calibration needs at least 2 models, got {k}")
        if len(set(self.model_ids)) != k or len(set(self.item_ids)) != n:
            raise ValueError("model and item ids must be unique")
        if self.correct.shape != (k, n) or self.lengths.shape != (k, n):
            raise ValueError(
                f"matrix shapes must be ({k}, {n}), got correct {self.correct.shape} "
                f"and lengths {self.lengths.shape}"
            )
        if not np.isin(self.correct, (0, 1)).all():
            raise ValueError("correctness entries must be binary")
        if (self.lengths < 0).any():
            raise ValueError("lengths must be >= 0")
        self._item_index = {iid: i for i, iid in enumerate(self.item_ids)}

    def column(self, item_id: str) -> np.ndarray:
        try:
            return self.correct[:, self._item_index[item_id]]
        except KeyError:
            raise ValueError(f"unknown item id {item_id!r}") from None

    def to_json_dict(self) -> dict:
        return {
            "model_ids": list(self.model_ids),
            "item_ids": list(self.item_ids),
            "correct": self.correct.tolist(),
            "lengths": self.lengths.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CorrectnessMatrix":
        return cls(
            model_ids=list(d["model_ids"]),
            item_ids=list(d["item_ids"]),
            correct=np.array(d["correct"]),
            lengths=np.array(d["lengths"]),
        )


def save_matrix(matrix: CorrectnessMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(matrix.to_json_dict(), fh)


def load_matrix(path) -> CorrectnessMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return CorrectnessMatrix.from_json_dict(payload)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed matrix file: {exc}") from exc


@dataclass(frozen=True)
class ItemStats:
    """Empirical solve rate and its Bernoulli entropy for one item."""

    item_id: str
    p: float
    entropy: float


class SubsetStrategy(str, Enum):
    ENTROPY = "entropy"
    RANDOM = "random"
    DISAGREEMENT = "disagreement"


@dataclass(frozen=True)
class EvaluationSubset:
    """Ordered, de-duplicated item ids picked by one strategy."""

    item_ids: tuple[str, ...]
    strategy: SubsetStrategy
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "strategy", SubsetStrategy(self.strategy))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(self.item_ids) < 1:
            raise ValueError("subset must contain at least one item")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError("subset item ids must be unique")


def save_subset(subset: EvaluationSubset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "strategy": subset.strategy.value,
                "seed": subset.seed,
                "item_ids": list(subset.item_ids),
            },
            fh,
        )


def load_subset(path) -> EvaluationSubset:
    with open(path, "r", encoding="utf-8") as fh:
        d = json.load(fh)
    try:
        return EvaluationSubset(
            item_ids=tuple(d["item_ids"]),
            strategy=SubsetStrategy(d["strategy"]),
            seed=int(d["seed"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed subset file: {exc}") from exc


def default_lambda_grid(k: int = 10) -> list[float]:
    """K coefficients uniformly spaced over [0, 1], endpoints included."""
    if k < 2:
        raise ValueError(f"grid needs at least 2 points, got {k}")
    return [i / (k - 1) for i in range(k)]


def build_calibration_matrix(
    evaluate_at: Callable[[float], Sequence[ItemOutcome]],
    lam_grid: Sequence[float],
    model_ids: Sequence[str] | None = None,
) -> CorrectnessMatrix:
    """Evaluate one candidate per grid coefficient and stack the outcomes.

    Row k holds the outcomes of the candidate at ``lam_grid[k]`` over all
    items; every row must cover the same items in the same order. Model ids
    default to the deterministic candidate ids of the interpolation genotypes.
    """
    grid = [float(v) for v in lam_grid]
    if len(grid) < 2:
        raise ValueError("lambda grid needs at least 2 points")
    if any(not 0.0 <= v <= 1.0 for v in grid):
        raise ValueError("lambda grid values must lie in [0, 1]")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    if model_ids is None:
        model_ids = [candidate_id(Genotype(MergeKind.TA, (lam,))) for lam in grid]
    elif len(model_ids) != len(grid):
        raise ValueError("model_ids must match the grid length")

    item_ids: list[str] | None = None
    correct_rows, length_rows = [], []
    for lam in grid:
        outcomes = list(evaluate_at(lam))
        row_ids = [o.item_id for o in outcomes]
        if item_ids is None:
            item_ids = row_ids
        elif row_ids != item_ids:
            raise ValueError(f"candidate at lambda={lam} returned a different item set")
        correct_rows.append([o.correct for o in outcomes])
        length_rows.append([o.length for o in outcomes])
    return CorrectnessMatrix(
        model_ids=list(model_ids),
        item_ids=list(item_ids or []),
        correct=np.array(correct_rows, dtype=np.int8),
        lengths=np.array(length_rows, dtype=np.float64),
    )


def empirical_solve_rate(matrix: CorrectnessMatrix, item_id: str) -> float:
    """Fraction of calibration models that solved the item."""
    return float(matrix.column(item_id).mean())


def bernoulli_entropy(p: float) -> float:
    """Entropy of a Bernoulli(p) outcome in bits, with 0 * log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def item_stats(matrix: CorrectnessMatrix) -> list[ItemStats]:
    rates = matrix.correct.mean(axis=0)
    return [
        ItemStats(item_id=iid, p=float(p), entropy=bernoulli_entropy(float(p)))
        for iid, p in zip(matrix.item_ids, rates)
    ]


def expected_distinction(t: float) -> float:
    """Expected probability 2*t*(1-t) that an item separates two random candidates.

    Under the ascending-threshold response model with two candidates drawn
    uniformly from [0, 1], the item distinguishes them exactly when the two
    draws straddle the threshold.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return 2.0 * t * (1.0 - t)


def select_subset(
    matrix: CorrectnessMatrix,
    strategy: SubsetStrategy | str,
    size: int,
    seed: int = 0,
) -> EvaluationSubset:
    """Pick ``size`` items by the given strategy, deterministically.

    ENTROPY takes the highest-entropy items (ties broken by ascending item
    index); RANDOM samples uniformly without replacement under ``seed``;
    DISAGREEMENT takes items whose correctness differs between the first and
    last calibration rows, in index order, and errors when fewer than
    ``size`` items qualify.
    """
    strategy = SubsetStrategy(strategy)
    n = len(matrix.item_ids)
    if size < 1:
        raise SubsetSelectionError(f"subset size must be >= 1, got {size}")
    if size > n:
        raise SubsetSelectionError(f"subset size {size} exceeds item count {n}")

    if strategy == SubsetStrategy.ENTROPY:
        rates = matrix.correct.mean(axis=0)
        entropies = [bernoulli_entropy(float(p)) for p in rates]
        order = sorted(range(n), key=lambda i: (-entropies[i], i))
        chosen = order[:size]
    elif strategy == SubsetStrategy.RANDOM:
        rng = np.random.default_rng(seed)
        chosen = list(rng.choice(n, size=size, replace=False))
    else:
        eligible = [i for i in range(n) if matrix.correct[0, i] != matrix.correct[-1, i]]
        if len(eligible) < size:
            raise SubsetSelectionError(
                f"only {len(eligible)} items disagree at the endpoint rows, "
                f"cannot select {size}"
            )
        chosen = eligible[:size]
    return EvaluationSubset(
        item_ids=tuple(matrix.item_ids[i] for i in chosen),
        strategy=strategy,
        seed=seed,
    )


def _midranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based), ties sharing their mid-rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"inputs must be equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("need at least 2 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("rank correlation is undefined for constant input")
    rx = _midranks(x)
    ry = _midranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float((rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry)))


@dataclass(frozen=True)
class FidelityCell:
    strategy: SubsetStrategy
    size: int
    seed: int
    rho: float


def rank_fidelity_curve(
    bench: SimulatedBenchmark,
    strategies: Sequence[SubsetStrategy | str],
    sizes: Sequence[int],
    n_models: int,
    seeds: Sequence[int],
    calibration_k: int = 10,
) -> list[FidelityCell]:
    """Measure how well subset rankings reproduce full-benchmark rankings.

    For each seed, ``n_models`` candidate coefficients are drawn uniformly
    and every candidate is scored on the full benchmark; each
    (strategy, size) subset then induces its own accuracy ranking and the
    Spearman correlation against the full ranking is recorded. A constant
    ranking on either side (no information) is recorded as rho = 0.
    """
    if n_models < 2:
        raise ValueError("need at least 2 candidate models to rank")
    n = len(bench)
    if any(s < 1 or s > n for s in sizes):
        raise ValueError(f"subset sizes must lie in [1, {n}]")
    strategies = [SubsetStrategy(s) for s in strategies]

    matrix = build_calibration_matrix(
        lambda lam: _outcomes_fast(bench, lam), default_lambda_grid(calibration_k)
    )

    # Entropy / disagreement subsets are functions of the matrix alone;
    # random subsets are drawn per seed below.
    static_indices: dict[tuple[SubsetStrategy, int], np.ndarray] = {}
    for strategy in strategies:
        if strategy == SubsetStrategy.RANDOM:
            continue
        for size in sizes:
            subset = select_subset(matrix, strategy, size, seed=0)
            static_indices[(strategy, size)] = np.array(
                [bench.index_of(i) for i in subset.item_ids]
            )

    cells = []
    for seed in seeds:
        lam_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        lams = lam_rng.uniform(0.0, 1.0, size=n_models)
        corr = np.stack([bench.correctness_vector(lam) for lam in lams])
        full_acc = corr.mean(axis=1)
        for strategy in strategies:
            for size in sizes:
                if strategy == SubsetStrategy.RANDOM:
                    subset = select_subset(matrix, strategy, size, seed=seed)
                    idx = np.array([bench.index_of(i) for i in subset.item_ids])
                else:
                    idx = static_indices[(strategy, size)]
                sub_acc = corr[:, idx].mean(axis=1)
                cells.append(
                    FidelityCell(strategy=strategy, size=size, seed=seed, rho=_safe_rho(sub_acc, full_acc))
                )
    return cells


def mean_fidelity(cells: Sequence[FidelityCell]) -> list[tuple[SubsetStrategy, int, float]]:
    """Per (strategy, size) mean rho, in first-seen order."""
    sums: dict[tuple[SubsetStrategy, int], list[float]] = {}
    for cell in cells:
        sums.setdefault((cell.strategy, cell.size), []).append(cell.rho)
    return [(s, size, float(np.mean(v))) for (s, size), v in sums.items()]


def _safe_rho(x: np.ndarray, y: np.ndarray) -> float:
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return spearman_rho(x, y)


def _outcomes_fast(bench: SimulatedBenchmark, lam: float) -> list[ItemOutcome]:
    correct = bench.correctness_vector(lam)
    lengths = bench.length_vector(lam)
    return [
        ItemOutcome(item_id=iid, correct=int(c), length=float(l))
        for iid, c, l in zip(bench.item_ids, correct, lengths)
    ]

"""Candidate evaluation: simulated item-response benchmark and record files.

Two fitness backends share one contract (genotype in, accuracy/length out):

* ``SimulatedFitness`` scores candidates on a synthetic benchmark whose items
  respond to the interpolation coefficient through threshold or logistic
  rules, so the whole pipeline runs at desk scale with no model inference.
* ``RecordsFitness`` replays per-item outcomes produced by an external
  harness from a JSONL record file, keyed by deterministic candidate ids.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GenotypeError, MissingCandidatesError, RecordFormatError
from .merge import Genotype, MergeKind


@dataclass(frozen=True)
class ItemOutcome:
    """One candidate's result on one item: solved or not, and output tokens."""

    item_id: str
    correct: int
    length: float

    def __post_init__(self):
        if not self.item_id:
            raise ValueError("item_id must be non-empty")
        if self.correct not in (0, 1):
            raise ValueError(f"correct must be 0 or 1, got {self.correct}")
        if self.length < 0:
            raise ValueError(f"length must be >= 0, got {self.length}")


@dataclass(frozen=True)
class ObjectiveVector:
    """Accuracy and mean output length, with the minimization-form fitness."""

    accuracy: float
    mean_length: float

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if self.mean_length < 0:
            raise ValueError(f"mean_length must be >= 0, got {self.mean_length}")

    @property
    def fitness(self) -> tuple[float, float]:
        return (-self.accuracy, self.mean_length)


def compute_objectives(outcomes: Sequence[ItemOutcome]) -> ObjectiveVector:
    """Mean correctness and mean token length over a non-empty outcome list."""
    if not outcomes:
        raise ValueError("cannot compute objectives from an empty outcome list")
    acc = sum(o.correct for o in outcomes) / len(outcomes)
    mean_len = sum(o.length for o in outcomes) / len(outcomes)
    return ObjectiveVector(accuracy=acc, mean_length=mean_len)


# ---------------------------------------------------------------------------
# Simulated item-response benchmark
# ---------------------------------------------------------------------------


class ResponseKind(str, Enum):
    THRESHOLD_UP = "THRESHOLD_UP"      # solved iff lam >= t
    THRESHOLD_DOWN = "THRESHOLD_DOWN"  # solved iff lam <= t
    LOGISTIC = "LOGISTIC"              # solved ~ Bernoulli(sigmoid(a * (lam - t)))


@dataclass(frozen=True)
class SimItem:
    """One simulated item: response rule plus endpoint output lengths."""

    item_id: str
    response_kind: ResponseKind
    t: float
    a: float = 1.0
    len_long: float = 0.0
    len_short: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "response_kind", ResponseKind(self.response_kind))
        if not self.item_id:
            raise ValueError("item_id must be non-empty")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"{self.item_id}: t must lie in [0, 1], got {self.t}")
        if self.a <= 0:
            raise ValueError(f"{self.item_id}: slope a must be > 0, got {self.a}")
        if not self.len_long >= self.len_short >= 0:
            raise ValueError(
                f"{self.item_id}: need len_long >= len_short >= 0, "
                f"got {self.len_long} / {self.len_short}"
            )


_KIND_CODE = {ResponseKind.THRESHOLD_UP: 0, ResponseKind.THRESHOLD_DOWN: 1, ResponseKind.LOGISTIC: 2}


class SimulatedBenchmark:
    """Immutable item collection with vectorized per-lambda evaluation."""

    def __init__(self, items: Sequence[SimItem], noise_seed: int = 0):
        if not items:
            raise ValueError("benchmark needs at least one item")
        ids = [it.item_id for it in items]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique")
        self.items = tuple(items)
        self.noise_seed = int(noise_seed)
        self.item_ids = ids
        self._index = {iid: i for i, iid in enumerate(ids)}
        self._kinds = np.array([_KIND_CODE[it.response_kind] for it in items], dtype=np.int8)
        self._t = np.array([it.t for it in items], dtype=np.float64)
        self._a = np.array([it.a for it in items], dtype=np.float64)
        self._len_long = np.array([it.len_long for it in items], dtype=np.float64)
        self._len_short = np.array([it.len_short for it in items], dtype=np.float64)
        self._logistic_idx = np.flatnonzero(self._kinds == 2)

    def __len__(self) -> int:
        return len(self.items)

    def index_of(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise ValueError(f"unknown item id {item_id!r}") from None

    def correctness_vector(self, lam: float) -> np.ndarray:
        """Binary outcome per item at interpolation coefficient ``lam``."""
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        out = np.zeros(len(self.items), dtype=np.int8)
        up = self._kinds == 0
        down = self._kinds == 1
        out[up] = lam >= self._t[up]
        out[down] = lam <= self._t[down]
        for i in self._logistic_idx:
            p = logistic_response(self._a[i], self._t[i], lam)
            out[i] = _keyed_uniform(self.items[i].item_id, lam, self.noise_seed) < p
        return out

    def length_vector(self, lam: float) -> np.ndarray:
        """Deterministic per-item output length, linear between the endpoints."""
        return self._len_long + (self._len_short - self._len_long) * lam


def logistic_response(a: float, b: float, lam: float) -> float:
    """Standard logistic curve sigmoid(a * (lam - b)); a must be positive."""
    if a <= 0:
        raise ValueError(f"slope a must be > 0, got {a}")
    z = a * (lam - b)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def _keyed_uniform(item_id: str, lam: float, seed: int) -> float:
    # Deterministic draw keyed by (item, lambda bucket, seed): the same
    # candidate always receives the same stochastic outcome within one run.
    key = f"{item_id}:{round(lam * 1_000_000)}:{seed}".encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def evaluate_simulated(
    bench: SimulatedBenchmark,
    lam: float,
    subset: Iterable[str] | None = None,
) -> list[ItemOutcome]:
    """Evaluate one candidate coefficient on all items or a named subset.

    Outcomes follow benchmark order, or the given id order when ``subset``
    is provided; unknown subset ids are rejected.
    """
    correct = bench.correctness_vector(lam)
    lengths = bench.length_vector(lam)
    if subset is None:
        indices = range(len(bench))
    else:
        indices = [bench.index_of(iid) for iid in subset]
    return [
        ItemOutcome(item_id=bench.item_ids[i], correct=int(correct[i]), length=float(lengths[i]))
        for i in indices
    ]


# ---------------------------------------------------------------------------
# Default benchmark generator
# ---------------------------------------------------------------------------


def generate_benchmark(
    seed: int = 0,
    n_items: int = 1000,
    easy_frac: float = 0.476,
    hard_frac: float = 0.476,
    up_frac: float = 0.020,
    down_frac: float = 0.016,
    up_band: tuple[float, float] = (0.25, 0.50),
    down_band: tuple[float, float] = (0.50, 0.75),
    logistic_b_band: tuple[float, float] = (0.30, 0.70),
    logistic_a_range: tuple[float, float] = (4.0, 12.0),
    len_long_range: tuple[float, float] = (1500.0, 6000.0),
    len_short_range: tuple[float, float] = (100.0, 800.0),
    noise_seed: int | None = None,
) -> SimulatedBenchmark:
    """Build the default simulated benchmark.

    The difficulty profile mirrors what saturated correctness matrices look
    like in practice: the bulk of the items are either solved by every
    candidate (ascending threshold at 0) or failed by every candidate
    (descending threshold at 0), and carry no ranking signal. A small
    informative core does the discriminating: ascending thresholds spread
    over ``up_band`` (accuracy climbs as the coefficient grows), descending
    thresholds over ``down_band`` (accuracy decays past the optimum, so the
    accuracy curve peaks in the interior), and a few stochastic logistic
    items. Output lengths shrink linearly from a long endpoint draw to a
    short one.
    """
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    fracs = (easy_frac, hard_frac, up_frac, down_frac)
    if any(f < 0 for f in fracs) or sum(fracs) > 1.0 + 1e-9:
        raise ValueError("role fractions must be non-negative and sum to <= 1")
    rng = np.random.default_rng(seed)
    n_easy = int(round(easy_frac * n_items))
    n_hard = int(round(hard_frac * n_items))
    n_up = int(round(up_frac * n_items))
    n_down = int(round(down_frac * n_items))
    n_log = n_items - n_easy - n_hard - n_up - n_down
    roles = ["easy"] * n_easy + ["hard"] * n_hard + ["up"] * n_up + ["down"] * n_down + ["log"] * n_log
    roles = [roles[i] for i in rng.permutation(n_items)]

    width = len(str(max(n_items - 1, 1)))
    items = []
    for i, role in enumerate(roles):
        if role == "easy":
            kind, t, a = ResponseKind.THRESHOLD_UP, 0.0, 1.0
        elif role == "hard":
            kind, t, a = ResponseKind.THRESHOLD_DOWN, 0.0, 1.0
        elif role == "up":
            kind, t, a = ResponseKind.THRESHOLD_UP, float(rng.uniform(*up_band)), 1.0
        elif role == "down":
            kind, t, a = ResponseKind.THRESHOLD_DOWN, float(rng.uniform(*down_band)), 1.0
        else:
            kind = ResponseKind.LOGISTIC
            t = float(rng.uniform(*logistic_b_band))
            a = float(rng.uniform(*logistic_a_range))
        len_long = float(rng.uniform(*len_long_range))
        len_short = float(rng.uniform(*len_short_range))
        items.append(
            SimItem(
                item_id=f"item-{i:0{width}d}",
                response_kind=kind,
                t=t,
                a=a,
                len_long=len_long,
                len_short=len_short,
            )
        )
    return SimulatedBenchmark(items, noise_seed=seed if noise_seed is None else noise_seed)


def save_benchmark(bench: SimulatedBenchmark, path) -> None:
    """Serialize as a JSON array of item objects."""
    payload = [
        {
            "item_id": it.item_id,
            "response_kind": it.response_kind.value,
            "t": it.t,
            "a": it.a,
            "len_long": it.len_long,
            "len_short": it.len_short,
        }
        for it in bench.items
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_benchmark(path, noise_seed: int = 0) -> SimulatedBenchmark:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise ValueError(f"{path}: benchmark file must be a JSON array of items")
    items = []
    for pos, entry in enumerate(payload):
        try:
            items.append(
                SimItem(
                    item_id=entry["item_id"],
                    response_kind=ResponseKind(entry["response_kind"]),
                    t=float(entry["t"]),
                    a=float(entry.get("a", 1.0)),
                    len_long=float(entry["len_long"]),
                    len_short=float(entry["len_short"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: item {pos}: {exc}") from exc
    return SimulatedBenchmark(items, noise_seed=noise_seed)


# ---------------------------------------------------------------------------
# Record files from external harnesses
# ---------------------------------------------------------------------------

_RECORD_FIELDS = ("candidate_id", "item_id", "correct", "length")


def load_record_evaluations(path) -> dict[str, list[ItemOutcome]]:
    """Parse a JSONL record file into per-candidate outcome lists.

    One object per line: ``{"candidate_id", "item_id", "correct", "length"}``.
    Duplicate (candidate, item) pairs and malformed lines are rejected with
    the offending line number.
    """
    grouped: dict[str, list[ItemOutcome]] = {}
    seen: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise RecordFormatError(f"{path}: line {lineno}: record must be an object")
            missing = [f for f in _RECORD_FIELDS if f not in obj]
            if missing:
                raise RecordFormatError(
                    f"{path}: line {lineno}: missing field(s) {', '.join(missing)}"
                )
            cand = obj["candidate_id"]
            iid = obj["item_id"]
            if not isinstance(cand, str) or not cand or not isinstance(iid, str) or not iid:
                raise RecordFormatError(
                    f"{path}: line {lineno}: candidate_id and item_id must be non-empty strings"
                )
            if obj["correct"] not in (0, 1):
                raise RecordFormatError(
                    f"{path}: line {lineno}: correctness must be 0 or 1, got {obj['correct']!r}"
                )
            try:
                length = float(obj["length"])
            except (TypeError, ValueError):
                raise RecordFormatError(
                    f"{path}: line {lineno}: length must be numeric, got {obj['length']!r}"
                ) from None
            if length < 0:
                raise RecordFormatError(f"{path}: line {lineno}: length must be >= 0")
            key = (cand, iid)
            if key in seen:
                raise RecordFormatError(
                    f"{path}: line {lineno}: duplicate record for candidate "
                    f"{cand!r}, item {iid!r}"
                )
            seen.add(key)
            grouped.setdefault(cand, []).append(
                ItemOutcome(item_id=iid, correct=int(obj["correct"]), length=length)
            )
    return grouped


def candidate_id(genotype: Genotype) -> str:
    """Deterministic id derived from the genotype, stable across processes."""
    canon = genotype.kind.value + ":" + ",".join(repr(v) for v in genotype.values)
    digest = hashlib.blake2b(canon.encode("utf-8"), digest_size=6).hexdigest()
    return f"{genotype.kind.value}-{digest}"


def write_manifest(path, genotypes: Sequence[Genotype]) -> None:
    """Emit the candidate manifest consumed by an external evaluation harness."""
    with open(path, "w", encoding="utf-8") as fh:
        for g in genotypes:
            fh.write(json.dumps({"candidate_id": candidate_id(g), "genotype": g.to_dict()}) + "\n")


def load_manifest(path) -> list[tuple[str, Genotype]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append((obj["candidate_id"], Genotype.from_dict(obj["genotype"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordFormatError(f"{path}: line {lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Fitness backends
# ---------------------------------------------------------------------------


class FitnessEvaluator:
    """Maps genotypes to objective vectors; batches default to a loop."""

    def evaluate(self, genotype: Genotype) -> ObjectiveVector:
        raise NotImplementedError

    def evaluate_population(self, genotypes: Sequence[Genotype]) -> list[ObjectiveVector]:
        return [self.evaluate(g) for g in genotypes]


class CallableFitness(FitnessEvaluator):
    """Adapter wrapping a plain ``genotype -> ObjectiveVector`` callable."""

    def __init__(self, fn: Callable[[Genotype], ObjectiveVector]):
        self._fn = fn

    def evaluate(self, genotype: Genotype) -> ObjectiveVector:
        return self._fn(genotype)


class SimulatedFitness(FitnessEvaluator):
    """Scores interpolation genotypes on a simulated benchmark subset.

    Only the TA kind is accepted: the simulator models responses as a
    function of the single interpolation coefficient.
    """

    def __init__(self, bench: SimulatedBenchmark, subset_ids: Sequence[str] | None = None):
        self.bench = bench
        if subset_ids is None:
            self.subset_indices = np.arange(len(bench))
            self.subset_ids = list(bench.item_ids)
        else:
            self.subset_ids = list(subset_ids)
            self.subset_indices = np.array([bench.index_of(i) for i in self.subset_ids])
            if len(self.subset_indices) == 0:
                raise ValueError("subset must contain at least one item")

    def coefficient_of(self, genotype: Genotype) -> float:
        if genotype.kind != MergeKind.TA:
            raise GenotypeError(
                f"simulated evaluation models the interpolation coefficient only; "
                f"got genotype kind {genotype.kind.value!r}"
            )
        genotype.validate()
        return genotype.values[0]

    def evaluate_at(self, lam: float) -> ObjectiveVector:
        correct = self.bench.correctness_vector(lam)[self.subset_indices]
        lengths = self.bench.length_vector(lam)[self.subset_indices]
        return ObjectiveVector(accuracy=float(correct.mean()), mean_length=float(lengths.mean()))

    def outcomes_at(self, lam: float) -> list[ItemOutcome]:
        return evaluate_simulated(self.bench, lam, subset=self.subset_ids)

    def evaluate(self, genotype: Genotype) -> ObjectiveVector:
        return self.evaluate_at(self.coefficient_of(genotype))


class RecordsFitness(FitnessEvaluator):
    """Resolves genotypes against a pre-computed record map.

    Unknown candidates raise :class:`MissingCandidatesError`; the population
    batch path collects every missing candidate of the batch so one manifest
    round-trip per generation is enough.
    """

    def __init__(
        self,
        records: dict[str, list[ItemOutcome]],
        subset_ids: Sequence[str] | None = None,
    ):
        self.records = records
        self.subset_ids = list(subset_ids) if subset_ids is not None else None

    def evaluate(self, genotype: Genotype) -> ObjectiveVector:
        return self._resolve(genotype, collect=None)

    def evaluate_population(self, genotypes: Sequence[Genotype]) -> list[ObjectiveVector]:
        pending: list[tuple[str, Genotype]] = []
        results = []
        for g in genotypes:
            results.append(self._resolve(g, collect=pending))
        if pending:
            deduped = list({cid: (cid, g) for cid, g in pending}.values())
            raise MissingCandidatesError(deduped)
        return results  # type: ignore[return-value]

    def _resolve(self, genotype: Genotype, collect):
        cid = candidate_id(genotype)
        outcomes = self.records.get(cid)
        if outcomes is None:
            if collect is not None:
                collect.append((cid, genotype))
                return None
            raise MissingCandidatesError([(cid, genotype)])
        if self.subset_ids is not None:
            by_id = {o.item_id: o for o in outcomes}
            missing = [i for i in self.subset_ids if i not in by_id]
            if missing:
                raise RecordFormatError(
                    f"candidate {cid!r} has no record for item(s): {', '.join(missing[:5])}"
                    + ("" if len(missing) <= 5 else f" (+{len(missing) - 5} more)")
                )
            outcomes = [by_id[i] for i in self.subset_ids]
        return compute_objectives(outcomes)

"""Merge operators turning a genotype and two endpoints into one checkpoint.

All arithmetic runs in float32 with a fixed expression per operator so the
results are reproducible bit-for-bit: task arithmetic evaluates
``(1 - lam) * s2 + lam * s1`` (endpoints come back exactly at lam 0/1), and
trimmed merging applies the same interpolation form to the kept entries so a
density of 1 reproduces task arithmetic without drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .checkpoint import Checkpoint, check_compatible
from .errors import CompatibilityError, GenotypeError

DEFAULT_LINEAR_BOUNDS = (0.0, 1.5)
MIN_TIES_DENSITY = 1e-3


class MergeKind(str, Enum):
    TA = "ta"
    TIES = "ties"
    LINEAR = "linear"


_ARITY = {MergeKind.TA: 1, MergeKind.TIES: 2, MergeKind.LINEAR: 2}


@dataclass(frozen=True)
class Genotype:
    """Decision variables of one merge candidate.

    Value layout per kind: TA ``[lam]``; TIES ``[lam, k]``; LINEAR
    ``[w_system2, w_system1]``.
    """

    kind: MergeKind
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", MergeKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def validate(self, linear_bounds: tuple[float, float] = DEFAULT_LINEAR_BOUNDS) -> None:
        expected = _ARITY[self.kind]
        if len(self.values) != expected:
            raise GenotypeError(
                f"{self.kind.value} genotype takes {expected} value(s), got {len(self.values)}"
            )
        if self.kind == MergeKind.TA:
            (lam,) = self.values
            if not 0.0 <= lam <= 1.0:
                raise GenotypeError(f"ta: lambda must lie in [0, 1], got {lam}")
        elif self.kind == MergeKind.TIES:
            lam, k = self.values
            if not 0.0 <= lam <= 1.0:
                raise GenotypeError(f"ties: lambda must lie in [0, 1], got {lam}")
            if not 0.0 < k <= 1.0:
                raise GenotypeError(f"ties: density k must lie in (0, 1], got {k}")
        else:
            lo, hi = linear_bounds
            for label, w in zip(("w_system2", "w_system1"), self.values):
                if not lo <= w <= hi:
                    raise GenotypeError(
                        f"linear: {label}={w} outside configured bounds [{lo}, {hi}]"
                    )

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        return cls(kind=MergeKind(d["kind"]), values=tuple(d["values"]))


def default_genotype_bounds(kind: MergeKind) -> tuple[tuple[float, float], ...]:
    """Search box per decision variable for each merge kind."""
    if kind == MergeKind.TA:
        return ((0.0, 1.0),)
    if kind == MergeKind.TIES:
        return ((0.0, 1.0), (MIN_TIES_DENSITY, 1.0))
    return (DEFAULT_LINEAR_BOUNDS, DEFAULT_LINEAR_BOUNDS)


@dataclass
class MergeEndpoints:
    """The two merge endpoints: slow/verbose system2 and fast/concise system1."""

    system2: Checkpoint
    system1: Checkpoint

    def __post_init__(self):
        report = check_compatible(self.system2, self.system1)
        if not report.compatible:
            raise CompatibilityError(report)


def compute_displacement(endpoints: MergeEndpoints) -> Checkpoint:
    """Elementwise system1 - system2, the direction from verbose to concise."""
    tensors = {
        name: endpoints.system1.tensors[name] - s2
        for name, s2 in endpoints.system2.tensors.items()
    }
    return Checkpoint(tensors=tensors, metadata={"op": "displacement"})


def merge_task_arithmetic(endpoints: MergeEndpoints, lam: float) -> Checkpoint:
    """Interpolate the endpoints: (1 - lam) * system2 + lam * system1."""
    if not 0.0 <= lam <= 1.0:
        raise GenotypeError(f"ta: lambda must lie in [0, 1], got {lam}")
    lam32 = np.float32(lam)
    one_minus = np.float32(1.0) - lam32
    tensors = {
        name: one_minus * s2 + lam32 * endpoints.system1.tensors[name]
        for name, s2 in endpoints.system2.tensors.items()
    }
    return Checkpoint(tensors=tensors, metadata={"op": "ta", "lambda": repr(float(lam))})


def merge_ties(endpoints: MergeEndpoints, lam: float, k: float) -> Checkpoint:
    """Interpolate only the ceil(k*n) largest-magnitude displacement entries per tensor.

    Entries outside the kept set stay exactly at system2. Magnitude ties keep
    the lower flat index first.
    """
    if not 0.0 <= lam <= 1.0:
        raise GenotypeError(f"ties: lambda must lie in [0, 1], got {lam}")
    if not 0.0 < k <= 1.0:
        raise GenotypeError(f"ties: density k must lie in (0, 1], got {k}")
    lam32 = np.float32(lam)
    one_minus = np.float32(1.0) - lam32
    tensors = {}
    for name, s2 in endpoints.system2.tensors.items():
        s1 = endpoints.system1.tensors[name]
        tau = (s1 - s2).ravel()
        n = tau.size
        keep_count = min(n, math.ceil(k * n))
        order = np.argsort(-np.abs(tau), kind="stable")
        mask = np.zeros(n, dtype=bool)
        mask[order[:keep_count]] = True
        merged = np.where(
            mask.reshape(s2.shape), one_minus * s2 + lam32 * s1, s2
        ).astype(np.float32, copy=False)
        tensors[name] = merged
    return Checkpoint(
        tensors=tensors,
        metadata={"op": "ties", "lambda": repr(float(lam)), "k": repr(float(k))},
    )


def merge_linear(
    endpoints: MergeEndpoints,
    w_system2: float,
    w_system1: float,
    bounds: tuple[float, float] = DEFAULT_LINEAR_BOUNDS,
) -> Checkpoint:
    """Unconstrained weighted sum w_system2 * system2 + w_system1 * system1."""
    lo, hi = bounds
    for label, w in (("w_system2", w_system2), ("w_system1", w_system1)):
        if not lo <= w <= hi:
            raise GenotypeError(f"linear: {label}={w} outside configured bounds [{lo}, {hi}]")
    w2 = np.float32(w_system2)
    w1 = np.float32(w_system1)
    tensors = {
        name: w2 * s2 + w1 * endpoints.system1.tensors[name]
        for name, s2 in endpoints.system2.tensors.items()
    }
    return Checkpoint(
        tensors=tensors,
        metadata={
            "op": "linear",
            "w_system2": repr(float(w_system2)),
            "w_system1": repr(float(w_system1)),
        },
    )


def decode_genotype(
    genotype: Genotype,
    endpoints: MergeEndpoints,
    linear_bounds: tuple[float, float] = DEFAULT_LINEAR_BOUNDS,
) -> Checkpoint:
    """Dispatch a genotype to its merge operator."""
    genotype.validate(linear_bounds=linear_bounds)
    if genotype.kind == MergeKind.TA:
        return merge_task_arithmetic(endpoints, genotype.values[0])
    if genotype.kind == MergeKind.TIES:
        return merge_ties(endpoints, genotype.values[0], genotype.values[1])
    return merge_linear(endpoints, genotype.values[0], genotype.values[1], bounds=linear_bounds)

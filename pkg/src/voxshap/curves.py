"""Deletion-curve faithfulness: MoRF/LeRF protocol with AOPC/ABPC metrics.

Units are removed cumulatively in attribution order (most- or
least-relevant first) and the value function is re-evaluated after every
step, using the same ROI, score kind, and masking baseline that produced
the attribution. Normalized metric variants rescale each curve by its own
attainable range (unperturbed score down to the fully-perturbed score) so
that score families with different ranges become comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError, VoxshapError
from .shapley import Attribution, Evaluator

DEFAULT_MAX_STEPS = 20
RANGE_EPSILON = 1e-12


@dataclass(frozen=True)
class CurveStep:
    k: int
    units_removed: int
    fraction_removed: float
    score: float


@dataclass(frozen=True)
class PerturbationCurve:
    """Scores after k cumulative removal steps; step 0 is the unperturbed score."""

    ordering: str  # "morf" | "lerf"
    num_units: int
    steps: tuple[CurveStep, ...]

    def __post_init__(self):
        if self.ordering not in ("morf", "lerf"):
            raise ValidationError(f"ordering must be 'morf' or 'lerf', got {self.ordering!r}")
        if len(self.steps) < 2:
            raise ValidationError("curve needs step 0 plus at least one removal step")
        removed = [s.units_removed for s in self.steps]
        if removed[0] != 0 or any(b <= a for a, b in zip(removed, removed[1:])):
            raise ValidationError("units_removed must start at 0 and strictly increase")

    @property
    def num_steps(self) -> int:
        return len(self.steps) - 1

    @property
    def scores(self) -> np.ndarray:
        return np.array([s.score for s in self.steps], dtype=np.float64)


@dataclass(frozen=True)
class CurveMetrics:
    aopc: float
    abpc: float
    naopc: float
    nabpc: float
    s_max: float
    s_min: float
    degenerate_range: bool
    # normalized scores can exit [0,1] when intermediate scores fall outside
    # the endpoint range (typical for FP, whose baseline score is 0)
    normalized_out_of_range: bool = False

    def to_dict(self) -> dict:
        return {
            "aopc": self.aopc,
            "abpc": self.abpc,
            "naopc": self.naopc,
            "nabpc": self.nabpc,
            "s_max": self.s_max,
            "s_min": self.s_min,
            "degenerate_range": self.degenerate_range,
            "normalized_out_of_range": self.normalized_out_of_range,
        }


def rank_units(attr: Attribution, ordering: str) -> list[int]:
    """Unit ids (1-based) by attribution: descending for MoRF, ascending for LeRF;
    ties break toward the lower unit id."""
    phi = np.asarray(attr.phi, dtype=np.float64)
    if phi.size < 1:
        raise ValidationError("attribution has no units")
    ids = range(len(phi))
    if ordering == "morf":
        order = sorted(ids, key=lambda j: (-phi[j], j))
    elif ordering == "lerf":
        order = sorted(ids, key=lambda j: (phi[j], j))
    else:
        raise ValidationError(f"ordering must be 'morf' or 'lerf', got {ordering!r}")
    return [j + 1 for j in order]


def removal_schedule(num_units: int, max_steps: int = DEFAULT_MAX_STEPS) -> list[int]:
    """Cumulative removed-unit counts per step: one unit per step up to
    max_steps units, otherwise max_steps equal batches with the remainder
    folded into the final one."""
    if num_units <= max_steps:
        return list(range(1, num_units + 1))
    batch = num_units // max_steps
    counts = [batch * i for i in range(1, max_steps)]
    counts.append(num_units)
    return counts


def deletion_curve(
    order: Sequence[int],
    evaluator: Evaluator,
    ordering: str,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> PerturbationCurve:
    """Evaluate the value function after each cumulative removal step.

    order lists unit ids (1-based) in removal order and must be a
    permutation of 1..M; the evaluator must match the one used for
    attribution (same score kind, ROI, masking baseline).
    """
    m = len(order)
    if sorted(order) != list(range(1, m + 1)):
        raise ValidationError("order must be a permutation of 1..M")
    schedule = removal_schedule(m, max_steps)
    mask = np.ones(m, dtype=np.uint8)
    steps = [CurveStep(k=0, units_removed=0, fraction_removed=0.0, score=float(evaluator(mask)))]
    removed = 0
    for k, count in enumerate(schedule, start=1):
        mask = mask.copy()
        for unit in order[removed:count]:
            mask[unit - 1] = 0
        removed = count
        try:
            score = float(evaluator(mask))
        except Exception as e:
            kind = type(e) if isinstance(e, VoxshapError) else VoxshapError
            raise kind(f"curve evaluation failed at step {k}: {e}") from e
        steps.append(
            CurveStep(k=k, units_removed=count, fraction_removed=count / m, score=score)
        )
    return PerturbationCurve(ordering=ordering, num_units=m, steps=tuple(steps))


def aopc(curve: PerturbationCurve) -> float:
    """Mean degradation from the unperturbed score over the MoRF steps."""
    if curve.ordering != "morf":
        raise ValidationError("AOPC is defined on the MoRF curve")
    s = curve.scores
    return float((s[0] - s[1:]).mean())


def abpc(lerf: PerturbationCurve, morf: PerturbationCurve) -> float:
    """Mean LeRF-minus-MoRF gap across steps."""
    if lerf.ordering != "lerf" or morf.ordering != "morf":
        raise ValidationError("abpc takes (lerf, morf) curves")
    if [s.units_removed for s in lerf.steps] != [s.units_removed for s in morf.steps]:
        raise ValidationError("curves have different removal schedules")
    return float((lerf.scores[1:] - morf.scores[1:]).mean())


def normalize_curve(
    curve: PerturbationCurve,
    s_max: float | None = None,
    s_min: float | None = None,
) -> tuple[PerturbationCurve, bool]:
    """Rescale scores by the attainable range: s(0) maps near 1, the
    fully-perturbed endpoint near 0. Returns (curve, degenerate_range)."""
    s = curve.scores
    s_max = float(s[0]) if s_max is None else float(s_max)
    s_min = float(s[-1]) if s_min is None else float(s_min)
    if not (np.isfinite(s_max) and np.isfinite(s_min)):
        raise ValidationError("normalization endpoints must be finite")
    degenerate = abs(s_max - s_min) <= RANGE_EPSILON
    scaled = (s - s_min) / (s_max - s_min + RANGE_EPSILON)
    steps = tuple(
        CurveStep(
            k=st.k,
            units_removed=st.units_removed,
            fraction_removed=st.fraction_removed,
            score=float(v),
        )
        for st, v in zip(curve.steps, scaled)
    )
    return PerturbationCurve(ordering=curve.ordering, num_units=curve.num_units, steps=steps), degenerate


def curve_metrics(morf: PerturbationCurve, lerf: PerturbationCurve) -> CurveMetrics:
    """AOPC/ABPC plus normalized variants from a MoRF/LeRF pair.

    Both curves share their endpoints (same step-0 coalition and same
    fully-removed coalition), so one attainable range normalizes both.
    """
    s_max = float(morf.scores[0])
    s_min = float(morf.scores[-1])
    if morf.scores[0] != lerf.scores[0] or morf.scores[-1] != lerf.scores[-1]:
        raise ValidationError("MoRF and LeRF curves do not share endpoints")
    n_morf, degenerate = normalize_curve(morf, s_max=s_max, s_min=s_min)
    n_lerf, _ = normalize_curve(lerf, s_max=s_max, s_min=s_min)
    normed = np.concatenate([n_morf.scores, n_lerf.scores])
    out_of_range = bool(((normed < -1e-12) | (normed > 1 + 1e-12)).any())
    return CurveMetrics(
        aopc=aopc(morf),
        abpc=abpc(lerf, morf),
        naopc=aopc(n_morf),
        nabpc=abpc(n_lerf, n_morf),
        s_max=s_max,
        s_min=s_min,
        degenerate_range=degenerate,
        normalized_out_of_range=out_of_range,
    )

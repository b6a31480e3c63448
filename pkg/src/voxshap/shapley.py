"""KernelSHAP over interpretable units: sampling, constrained solve, exact oracle.

The surrogate is a kernel-weighted linear model of coalition values with
both anchors enforced exactly: the intercept equals v(empty) and the
coefficients sum to v(full) - v(empty) (efficiency). The constraint is
eliminated algebraically rather than penalized, so those identities hold
to rounding error regardless of the sampling budget. A brute-force
permutation-average oracle is provided for validation on small M.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError, VoxshapError

Evaluator = Callable[[np.ndarray], float]

_EXACT_MAX_UNITS = 20
_L1_GUARD = 1e-12


@dataclass(frozen=True)
class ShapConfig:
    """Budget and solver knobs. budget counts unique non-trivial coalitions;
    the full and empty anchors are evaluated in addition to it."""

    budget: int = 2000
    seed: int = 0
    holdout: float = 0.1
    ridge: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.holdout < 0.5:
            raise ValidationError(f"holdout must be in [0, 0.5), got {self.holdout}")
        if self.ridge < 0:
            raise ValidationError(f"ridge must be >= 0, got {self.ridge}")
        if self.budget < 1:
            raise ValidationError(f"budget must be >= 1, got {self.budget}")


@dataclass(frozen=True)
class CoalitionSample:
    """Evaluated coalitions: mask rows, kernel weights (with sampling
    multiplicity folded in), values, and the two anchor values."""

    masks: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    v_empty: float
    v_full: float

    def __post_init__(self):
        masks = np.ascontiguousarray(self.masks, dtype=np.uint8)
        if masks.ndim != 2:
            raise ValidationError(f"masks must be 2D, got shape {masks.shape}")
        if len(np.unique(masks, axis=0)) != len(masks):
            raise ValidationError("duplicate coalition masks in sample")
        sizes = masks.sum(axis=1)
        if masks.size and ((sizes == 0) | (sizes == masks.shape[1])).any():
            raise ValidationError("sample contains a trivial (full or empty) mask")
        if (np.asarray(self.weights) <= 0).any():
            raise ValidationError("coalition weights must be > 0")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))

    @property
    def num_units(self) -> int:
        return self.masks.shape[1]


@dataclass(frozen=True)
class SolveDiagnostics:
    residual_max: float
    residual_mean: float
    cond: float
    holdout_mae: float | None
    holdout_r2: float | None
    n_coalitions: int
    ridge: float


@dataclass(frozen=True)
class Attribution:
    """Per-unit Shapley coefficients; phi[j] explains unit j+1. phi0 = v(empty)."""

    phi: np.ndarray
    phi0: float
    v_full: float
    diagnostics: SolveDiagnostics | None = None

    def to_dict(self) -> dict:
        d = {
            "phi": [float(p) for p in self.phi],
            "phi0": self.phi0,
            "v_full": self.v_full,
        }
        if self.diagnostics is not None:
            d["diagnostics"] = {
                "residual_max": self.diagnostics.residual_max,
                "residual_mean": self.diagnostics.residual_mean,
                "cond": self.diagnostics.cond,
                "holdout_mae": self.diagnostics.holdout_mae,
                "holdout_r2": self.diagnostics.holdout_r2,
                "n_coalitions": self.diagnostics.n_coalitions,
                "ridge": self.diagnostics.ridge,
            }
        return d


def kernel_weight(num_units: int, subset_size: int) -> float:
    """Shapley kernel weight (M-1) / (C(M,k) * k * (M-k)) for 0 < k < M."""
    m, k = num_units, subset_size
    if not 0 < k < m:
        raise ValidationError(f"kernel weight undefined for k={k}, M={m} (anchors are constraints)")
    return (m - 1) / (math.comb(m, k) * k * (m - k))


def _size_distribution(num_units: int) -> np.ndarray:
    """P(k) proportional to the total kernel mass at size k, i.e. 1/(k(M-k))."""
    k = np.arange(1, num_units, dtype=np.float64)
    p = 1.0 / (k * (num_units - k))
    return p / p.sum()


def enumerate_coalitions(num_units: int) -> np.ndarray:
    """All 2^M - 2 non-trivial masks, ordered by subset size then index order."""
    rows = []
    for k in range(1, num_units):
        for subset in combinations(range(num_units), k):
            row = np.zeros(num_units, dtype=np.uint8)
            row[list(subset)] = 1
            rows.append(row)
    return np.array(rows, dtype=np.uint8).reshape(len(rows), num_units)


def sample_coalitions(num_units: int, cfg: ShapConfig) -> tuple[np.ndarray, np.ndarray]:
    """Coalition masks plus their solve weights for a budget.

    Budgets covering the whole non-trivial lattice enumerate it exactly.
    Otherwise subset sizes are drawn from the kernel-mass distribution,
    members uniformly within a size, each draw paired with its complement,
    and repeat draws fold into the mask's weight as a multiplicity; exactly
    cfg.budget unique masks are returned.
    """
    m, n = num_units, cfg.budget
    if m < 1:
        raise ValidationError(f"num_units must be >= 1, got {m}")
    if n < m + 2:
        raise ValidationError(f"budget below identifiability: n={n} < M+2={m + 2}")
    total = 2**m - 2
    if total <= n:
        masks = enumerate_coalitions(m)
        weights = np.array([kernel_weight(m, int(k)) for k in masks.sum(axis=1)])
        return masks, weights

    rng = np.random.default_rng(cfg.seed)
    size_p = _size_distribution(m)
    chosen: dict[bytes, tuple[np.ndarray, int]] = {}

    def add(mask: np.ndarray) -> None:
        key = mask.tobytes()
        if key in chosen:
            row, mult = chosen[key]
            chosen[key] = (row, mult + 1)
        elif len(chosen) < n:
            chosen[key] = (mask, 1)

    max_draws = max(200 * n, 100_000)
    draws = 0
    while len(chosen) < n and draws < max_draws:
        k = int(rng.choice(np.arange(1, m), p=size_p))
        subset = rng.choice(m, size=k, replace=False)
        mask = np.zeros(m, dtype=np.uint8)
        mask[subset] = 1
        add(mask)
        add(1 - mask)
        draws += 1
    if len(chosen) < n:
        # Rejection stalled, which only happens when the budget is close
        # to the lattice size; top up deterministically from the
        # enumeration order. Guard against enumerating a huge lattice.
        if total > (1 << 22):
            raise NumericalError(
                f"coalition sampling stalled at {len(chosen)}/{n} unique masks"
            )
        for row in enumerate_coalitions(m):
            if len(chosen) >= n:
                break
            key = row.tobytes()
            if key not in chosen:
                chosen[key] = (row, 1)

    masks = np.array([row for row, _ in chosen.values()], dtype=np.uint8)
    mults = np.array([mult for _, mult in chosen.values()], dtype=np.float64)
    weights = np.array([kernel_weight(m, int(k)) for k in masks.sum(axis=1)]) * mults
    return masks, weights


def evaluate_coalitions(
    masks: np.ndarray,
    evaluator: Evaluator,
    weights: np.ndarray | None = None,
    workers: int = 1,
) -> CoalitionSample:
    """Evaluate v(m) per mask plus the v(full) and v(empty) anchors.

    workers > 1 maps evaluations over a thread pool; results land by mask
    index, so the sample (and everything solved from it) stays
    deterministic regardless of completion order.
    """
    masks = np.ascontiguousarray(masks, dtype=np.uint8)
    m = masks.shape[1]
    if weights is None:
        weights = np.array([kernel_weight(m, int(k)) for k in masks.sum(axis=1)])
    values = np.empty(len(masks), dtype=np.float64)

    def run_one(i: int) -> float:
        try:
            return float(evaluator(masks[i]))
        except Exception as e:
            kind = type(e) if isinstance(e, VoxshapError) else VoxshapError
            raise kind(f"coalition evaluation failed at mask index {i}: {e}") from e

    if workers > 1 and len(masks):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            for i, value in enumerate(pool.map(run_one, range(len(masks)))):
                values[i] = value
    else:
        for i in range(len(masks)):
            values[i] = run_one(i)
    v_full = float(evaluator(np.ones(m, dtype=np.uint8)))
    v_empty = float(evaluator(np.zeros(m, dtype=np.uint8)))
    return CoalitionSample(masks=masks, weights=weights, values=values, v_empty=v_empty, v_full=v_full)


def _diagnose_rank(masks: np.ndarray) -> str:
    m = masks.shape[1]
    dead = [j + 1 for j in range(m) if len(np.unique(masks[:, j])) < 2]
    dupes = [
        (i + 1, j + 1)
        for i in range(m)
        for j in range(i + 1, m)
        if np.array_equal(masks[:, i], masks[:, j])
    ]
    parts = []
    if dead:
        parts.append(f"dead units (constant in sample): {dead}")
    if dupes:
        parts.append(f"duplicate unit columns: {dupes}")
    if not parts:
        # complement pairs contribute collinear reduced rows, so the budget
        # must cover roughly 2(M-1) coalitions to span M-1 directions
        parts.append(
            f"too few independent coalition directions for {m} units "
            f"({len(masks)} masks, complement pairs are collinear); increase the budget"
        )
    return "; ".join(parts)


def _fit_constrained(
    masks: np.ndarray,
    values: np.ndarray,
    weights: np.ndarray,
    v_empty: float,
    v_full: float,
    ridge: float,
) -> tuple[np.ndarray, float]:
    """Weighted least squares with the efficiency constraint eliminated.

    Substituting phi_M = (v_full - v_empty) - sum(phi_1..M-1) turns the
    constrained problem into an ordinary WLS on mask-column differences.
    Returns (phi, condition number of the weighted reduced design).
    """
    m = masks.shape[1]
    delta = v_full - v_empty
    if m == 1:
        return np.array([delta]), 1.0
    x = masks.astype(np.float64)
    a = x[:, : m - 1] - x[:, m - 1 :]
    y = values - v_empty - x[:, m - 1] * delta
    # WLS is invariant to uniform weight scaling; normalizing to mean 1
    # keeps the (absolute) ridge term negligible relative to the data.
    weights = weights * (len(weights) / weights.sum())
    sw = np.sqrt(weights)
    aw = a * sw[:, None]
    yw = y * sw
    if np.linalg.matrix_rank(aw) < m - 1:
        raise NumericalError(f"cannot identify attributions: {_diagnose_rank(masks)}")
    cond = float(np.linalg.cond(aw))
    lhs = aw.T @ aw + ridge * np.eye(m - 1)
    beta = np.linalg.solve(lhs, aw.T @ yw)
    phi = np.empty(m, dtype=np.float64)
    phi[: m - 1] = beta
    phi[m - 1] = delta - beta.sum()
    return phi, cond


def solve(
    sample: CoalitionSample,
    num_units: int,
    ridge: float = 1e-8,
    holdout: float = 0.1,
    seed: int = 0,
) -> Attribution:
    """Fit the kernel-weighted surrogate and report solver diagnostics.

    The returned coefficients are fit on the full sample (so enumeration
    reproduces exact Shapley values); the held-out MAE/R2 come from a
    separate refit on the complementary split and measure how well the
    surrogate generalizes to unseen coalitions.
    """
    m = num_units
    if sample.num_units != m:
        raise ValidationError(f"sample has {sample.num_units} units, expected {m}")
    n = len(sample.masks)
    phi, cond = _fit_constrained(
        sample.masks, sample.values, sample.weights, sample.v_empty, sample.v_full, ridge
    )
    fitted = sample.v_empty + sample.masks.astype(np.float64) @ phi
    residuals = np.abs(sample.values - fitted) if n else np.zeros(1)

    holdout_mae = holdout_r2 = None
    n_hold = int(math.floor(holdout * n))
    if n_hold > 0:
        if n - n_hold < m + 1:
            raise ValidationError(
                f"sample too small for holdout: {n - n_hold} training masks < M+1={m + 1}"
            )
        perm = np.random.default_rng(seed).permutation(n)
        hold, train = perm[:n_hold], perm[n_hold:]
        try:
            phi_tr, _ = _fit_constrained(
                sample.masks[train],
                sample.values[train],
                sample.weights[train],
                sample.v_empty,
                sample.v_full,
                ridge,
            )
        except NumericalError:
            phi_tr = None
        if phi_tr is not None:
            pred = sample.v_empty + sample.masks[hold].astype(np.float64) @ phi_tr
            err = sample.values[hold] - pred
            holdout_mae = float(np.abs(err).mean())
            ss_res = float((err**2).sum())
            ss_tot = float(((sample.values[hold] - sample.values[hold].mean()) ** 2).sum())
            holdout_r2 = 1.0 - ss_res / (ss_tot + 1e-30)

    diagnostics = SolveDiagnostics(
        residual_max=float(residuals.max()),
        residual_mean=float(residuals.mean()),
        cond=cond,
        holdout_mae=holdout_mae,
        holdout_r2=holdout_r2,
        n_coalitions=n,
        ridge=ridge,
    )
    return Attribution(phi=phi, phi0=sample.v_empty, v_full=sample.v_full, diagnostics=diagnostics)


def kernel_shap(evaluator: Evaluator, num_units: int, cfg: ShapConfig) -> Attribution:
    """sample -> evaluate -> solve, the standard estimation path."""
    masks, weights = sample_coalitions(num_units, cfg)
    sample = evaluate_coalitions(masks, evaluator, weights)
    return solve(sample, num_units, ridge=cfg.ridge, holdout=cfg.holdout, seed=cfg.seed)


def exact_shapley(evaluator: Evaluator, num_units: int) -> Attribution:
    """Exact Shapley values by full-subset marginal averaging; validation oracle.

    Evaluates all 2^M coalitions, so M is capped at 20.
    """
    m = num_units
    if m > _EXACT_MAX_UNITS:
        raise ValidationError(f"exact oracle needs 2^M evaluations; M={m} > {_EXACT_MAX_UNITS}")
    states = np.arange(2**m, dtype=np.int64)
    values = np.empty(2**m, dtype=np.float64)
    for s in states:
        mask = ((s >> np.arange(m)) & 1).astype(np.uint8)
        values[s] = evaluator(mask)
    sizes = np.bitwise_count(states.astype(np.uint64)).astype(np.int64)
    fact = [math.factorial(i) for i in range(m + 1)]
    size_w = np.array([fact[k] * fact[m - k - 1] / fact[m] for k in range(m)])
    phi = np.empty(m, dtype=np.float64)
    for j in range(m):
        without = (states & (1 << j)) == 0
        s_wo = states[without]
        phi[j] = float(np.sum(size_w[sizes[s_wo]] * (values[s_wo | (1 << j)] - values[s_wo])))
    return Attribution(phi=phi, phi0=float(values[0]), v_full=float(values[2**m - 1]))


@dataclass(frozen=True)
class BudgetDiagnostics:
    budget: int
    l1_change: float | None
    residual_max: float
    residual_mean: float
    cond: float
    holdout_mae: float | None
    holdout_r2: float | None


@dataclass(frozen=True)
class ConvergenceReport:
    budgets: tuple[int, ...]
    entries: tuple[BudgetDiagnostics, ...]
    attributions: tuple[Attribution, ...] = field(repr=False, default=())

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "entries": [
                {
                    "budget": e.budget,
                    "l1_change": e.l1_change,
                    "residual_max": e.residual_max,
                    "residual_mean": e.residual_mean,
                    "cond": e.cond,
                    "holdout_mae": e.holdout_mae,
                    "holdout_r2": e.holdout_r2,
                }
                for e in self.entries
            ],
        }


def convergence_report(
    evaluator: Evaluator,
    num_units: int,
    budgets: Sequence[int],
    cfg: ShapConfig,
) -> ConvergenceReport:
    """Surrogate stability across increasing budgets.

    Per budget (fresh seed-derived sample): relative l1 change of the
    coefficients versus the previous budget, in-sample local-accuracy
    residuals, the weighted design's condition number, and held-out
    MAE/R2.
    """
    budgets = [int(b) for b in budgets]
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValidationError(f"budgets must be strictly increasing, got {budgets}")
    seeds = np.random.SeedSequence(cfg.seed).generate_state(len(budgets))
    entries = []
    attributions = []
    prev_phi = None
    for budget, seed in zip(budgets, seeds):
        sub_cfg = ShapConfig(budget=budget, seed=int(seed), holdout=cfg.holdout, ridge=cfg.ridge)
        attr = kernel_shap(evaluator, num_units, sub_cfg)
        l1_change = None
        if prev_phi is not None:
            l1_change = float(
                np.abs(attr.phi - prev_phi).sum() / (np.abs(prev_phi).sum() + _L1_GUARD)
            )
        d = attr.diagnostics
        entries.append(
            BudgetDiagnostics(
                budget=budget,
                l1_change=l1_change,
                residual_max=d.residual_max,
                residual_mean=d.residual_mean,
                cond=d.cond,
                holdout_mae=d.holdout_mae,
                holdout_r2=d.holdout_r2,
            )
        )
        attributions.append(attr)
        prev_phi = attr.phi
    return ConvergenceReport(
        budgets=tuple(budgets), entries=tuple(entries), attributions=tuple(attributions)
    )

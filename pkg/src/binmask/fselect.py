"""Feature selection on top of smoothed masks.

Direct mode trains one input-feature mask for a given penalty and keeps
features whose smoothed mask value reaches 0.5. Exact-count mode searches
the penalty coefficient exponentially (double / halve, then bisect on the
log scale) until some cutoff in [0.2, 0.8] selects exactly the requested
number of features; the cutoff maximizing the margin to the nearest
smoothed-mask value on each side wins. Every candidate penalty costs one
training run, so the search budget is a run budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SplitSpec, duplicate_to_min_batches, normalize, split_dataset
from .errors import BinMaskError
from .mask import MaskState, mask_converged
from .masking import MaskSpec
from .report import ci95
from .train import ClassifierSpec, TrainConfig, TrainResult, train

CUTOFF_LO = 0.2
CUTOFF_HI = 0.8
DEFAULT_LAMBDA0 = 1e-3
DEFAULT_BUDGET = 12


@dataclass
class SelectionProtocol:
    """Everything one selection training run needs besides the data."""

    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100))
    alpha0: float = 0.02
    alpha1: float = 1.0
    eta0: float = 1e-3
    eta1: float = 1e-5
    warmup_fraction: float = 0.1
    gamma: float = 0.9
    test_fraction: float = 0.2
    min_batches: int = 30


@dataclass
class SelectionResult:
    selected: list[int]
    lambda_star: float
    cutoff: float
    v_smooth: np.ndarray
    converged: bool
    search_steps: int

    def to_json_dict(self) -> dict:
        return {
            "selected": [int(i) for i in self.selected],
            "lambda_star": self.lambda_star,
            "cutoff": self.cutoff,
            "v_smooth": [float(v) for v in self.v_smooth],
            "converged": self.converged,
            "search_steps": self.search_steps,
        }


class SearchError(BinMaskError):
    """Exact-count search exhausted its budget.

    ``attempts`` lists (penalty, closest attainable count) per training
    run; ``closest_count`` is the attainable count nearest the request.
    """

    def __init__(self, message: str, attempts, closest_count: int):
        super().__init__(message)
        self.attempts = attempts
        self.closest_count = closest_count


def selection_training_run(
    dataset: Dataset,
    protocol: SelectionProtocol,
    penalty: float,
    split_seed: int,
    init_seed: int,
) -> tuple[MaskState, TrainResult]:
    """Split, normalize, duplicate, then train an input-feature mask."""
    train_raw, _, test_raw = split_dataset(
        dataset, SplitSpec(test_fraction=protocol.test_fraction, seed=split_seed)
    )
    train_ds, [test_ds] = normalize(train_raw, [test_raw])
    train_ds = duplicate_to_min_batches(train_ds, protocol.train.batch_size, protocol.min_batches)
    rng = np.random.default_rng(init_seed)
    net = protocol.classifier.build(dataset.d, dataset.n_classes, rng)
    spec = MaskSpec.input_features(net)
    mask = MaskState(
        dataset.d,
        penalty=penalty,
        alpha0=protocol.alpha0,
        alpha1=protocol.alpha1,
        gamma=protocol.gamma,
        eta0=protocol.eta0,
        eta1=protocol.eta1,
        warmup_fraction=protocol.warmup_fraction,
    )
    result = train(net, train_ds, protocol.train, rng, mask=mask, mask_spec=spec, test_ds=test_ds)
    return mask, result


def select_by_lambda(
    dataset: Dataset, protocol: SelectionProtocol, penalty: float, seed: int = 0
) -> SelectionResult:
    """Train once with the given penalty and keep features with smoothed mask >= 0.5."""
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    mask, _ = selection_training_run(dataset, protocol, penalty, seed, seed + 10000)
    v = mask.v_smooth.copy()
    selected = np.flatnonzero(v >= 0.5)
    return SelectionResult(
        selected=[int(i) for i in selected],
        lambda_star=penalty,
        cutoff=0.5,
        v_smooth=v,
        converged=mask_converged(v),
        search_steps=1,
    )


def exact_cutoff(v: np.ndarray, k: int, lo: float = CUTOFF_LO, hi: float = CUTOFF_HI) -> float | None:
    """Cutoff c in [lo, hi] with exactly k entries >= c, or None.

    Among feasible cutoffs, picks the one maximizing the margin to the
    nearest smoothed-mask value on each side (the midpoint of the gap,
    clamped into [lo, hi]).
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.size
    if not 1 <= k <= d:
        return None
    vs = np.sort(v)[::-1]
    upper = vs[k - 1]                     # c must satisfy c <= upper
    lower = vs[k] if k < d else None      # and c > lower
    if lower is not None and lower >= upper:
        return None
    mid = 0.5 * (upper + (lower if lower is not None else lo))
    c = min(max(mid, lo), hi)
    if int(np.count_nonzero(v >= c)) != k:
        return None
    return float(c)


def attainable_counts(v: np.ndarray, lo: float = CUTOFF_LO, hi: float = CUTOFF_HI) -> set[int]:
    """All selection sizes reachable with a cutoff in [lo, hi]."""
    v = np.asarray(v, dtype=np.float64)
    cuts = [lo, hi] + [float(x) for x in v[(v >= lo) & (v <= hi)]]
    return {int(np.count_nonzero(v >= c)) for c in cuts}


def search_lambda(
    eval_smoothed_mask,
    k: int,
    lambda0: float = DEFAULT_LAMBDA0,
    budget: int = DEFAULT_BUDGET,
):
    """Exponential search for a penalty whose smoothed mask can select exactly k.

    ``eval_smoothed_mask(penalty, run_index)`` must return the smoothed
    mask vector for that penalty; it is called once per candidate. Returns
    (penalty, cutoff, smoothed mask, runs used). Doubles the penalty while
    even the harshest cutoff keeps more than k features, halves it while
    the most lenient cutoff keeps fewer, and bisects on the log scale once
    both sides are bracketed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    lam = float(lambda0)
    if lam <= 0:
        raise ValueError("lambda0 must be > 0")
    too_small = None  # largest penalty that kept too many features
    too_big = None    # smallest penalty that kept too few
    attempts = []
    for run in range(budget):
        v = np.asarray(eval_smoothed_mask(lam, run), dtype=np.float64)
        cut = exact_cutoff(v, k)
        if cut is not None:
            return lam, cut, v, run + 1
        counts = attainable_counts(v)
        closest = min(counts, key=lambda c: (abs(c - k), c))
        attempts.append((lam, closest))
        c_min = int(np.count_nonzero(v >= CUTOFF_HI))
        c_max = int(np.count_nonzero(v >= CUTOFF_LO))
        if c_min > k:
            too_small = lam if too_small is None else max(too_small, lam)
        elif c_max < k:
            too_big = lam if too_big is None else min(too_big, lam)
        else:
            # counts straddle k but ties skip it; push toward sparser masks
            too_small = lam if too_small is None else max(too_small, lam)
        if too_small is not None and too_big is not None:
            lam = float(np.sqrt(too_small * too_big))
        elif too_big is None:
            lam = lam * 2.0
        else:
            lam = lam / 2.0
    best = min(attempts, key=lambda a: abs(a[1] - k))
    raise SearchError(
        f"no penalty/cutoff pair selected exactly {k} features within {budget} runs; "
        f"closest attainable count was {best[1]} at penalty {best[0]:g}",
        attempts=attempts,
        closest_count=best[1],
    )


def select_exact_k(
    dataset: Dataset,
    protocol: SelectionProtocol,
    k: int,
    seed: int = 0,
    lambda0: float = DEFAULT_LAMBDA0,
    budget: int = DEFAULT_BUDGET,
    on_run=None,
) -> SelectionResult:
    """Select exactly k features, or raise :class:`SearchError`.

    The data split is fixed by ``seed`` for every candidate penalty; each
    training run draws fresh initialization/batching seeds derived from
    (seed, run index). ``on_run(run_index, mask, train_result)`` is called
    after each training run when given.
    """
    if not 1 <= k <= dataset.d:
        raise ValueError(f"k must be in [1, {dataset.d}]")

    def eval_fn(penalty, run_index):
        init_seed = int(np.random.SeedSequence([seed, run_index]).generate_state(1)[0])
        mask, result = selection_training_run(dataset, protocol, penalty, seed, init_seed)
        if on_run is not None:
            on_run(run_index, mask, result)
        return mask.v_smooth

    lam, cut, v, steps = search_lambda(eval_fn, k, lambda0, budget)
    selected = np.flatnonzero(v >= cut)
    return SelectionResult(
        selected=[int(i) for i in selected],
        lambda_star=lam,
        cutoff=cut,
        v_smooth=v.copy(),
        converged=mask_converged(v),
        search_steps=steps,
    )


@dataclass
class RetrainEval:
    mean_accuracy: float
    ci95_halfwidth: float | None
    accuracies: list[float]


def retrain_eval(
    dataset: Dataset,
    selected,
    protocol: SelectionProtocol,
    trials: int,
    seed: int = 0,
) -> RetrainEval:
    """Retrain from scratch on the selected columns; mean test accuracy over trials.

    Trial i splits with seed+i and initializes with seed+10000+i.
    """
    selected = [int(i) for i in selected]
    if not selected:
        raise ValueError("selected feature set is empty")
    reduced = dataset.select_features(selected)
    accs = []
    for trial in range(trials):
        train_raw, _, test_raw = split_dataset(
            reduced, SplitSpec(test_fraction=protocol.test_fraction, seed=seed + trial)
        )
        train_ds, [test_ds] = normalize(train_raw, [test_raw])
        train_ds = duplicate_to_min_batches(train_ds, protocol.train.batch_size, protocol.min_batches)
        rng = np.random.default_rng(seed + 10000 + trial)
        net = protocol.classifier.build(reduced.d, dataset.n_classes, rng)
        result = train(net, train_ds, protocol.train, rng, test_ds=test_ds)
        accs.append(result.metrics[-1].test_accuracy)
    if len(accs) >= 2:
        mean, half = ci95(accs)
        return RetrainEval(mean, float(half), accs)
    return RetrainEval(float(accs[0]), None, accs)

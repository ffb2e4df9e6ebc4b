"""Stage-2 classifier training: effect-matching regularization plus the
reference baselines (plain ERM, counterfactual augmentation, two-stage
upweighting, invariant-risk penalty, and invariance-score detection).

All training is full-batch gradient descent, so every run is a deterministic
function of (config, data) and property tests can assert exact equalities.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import nets
from .metrics import crit_spurious_known, delta_prob, group_report, pick_best
from .synth import Example, LabeledDataset, make_counterfactual

OBJECTIVES = ("ERM", "AutoACER", "CAD", "JTT", "IRM")
DEFAULT_R_GRID = (1.0, 10.0, 100.0, 1000.0)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "ERM"
    R: float = 0.0
    effect_targets: dict[str, float] | None = None
    epochs: int = 2000
    lr: float = 1.0
    hidden: tuple[int, ...] = (64,)
    clip_norm: float | None = 1.0
    lr_decay: float = 0.0
    checkpoint_every: int = 50
    seed: int = 0
    jtt_lambda_up: float = 4.0
    jtt_first_epochs: int = 200
    irm_lambda: float = 100.0

    def validate(self, attributes: tuple[str, ...]) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.R < 0:
            raise ValueError("R must be nonnegative")
        for attr in (self.effect_targets or {}):
            if attr not in attributes:
                raise ValueError(f"effect target for unknown attribute {attr!r}")
        if self.jtt_lambda_up < 1:
            raise ValueError("jtt_lambda_up must be >= 1")


@dataclass
class TrainResult:
    config: TrainConfig
    params: list
    checkpoints: list[dict]
    notes: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return bool(self.checkpoints and self.checkpoints[-1].get("diverged"))

    def final(self) -> dict:
        return self.checkpoints[-1]


def _split_metrics(params, ds: LabeledDataset, tag: str) -> dict:
    X = ds.features()
    y = ds.labels()
    spur = ds.attr_values(ds.spurious_attr)
    p = nets.predict_prob(params, X)
    p_cf = nets.predict_prob(params, ds.cf_features(ds.spurious_attr))
    rep = group_report(y, spur, p)
    loss, _ = nets.bce_loss(params, X, y.astype(float))
    return {
        f"{tag}_loss": float(loss),
        f"{tag}_acc": float(np.mean((p >= 0.5).astype(int) == y)),
        f"{tag}_maj": rep.acc_majority, f"{tag}_min": rep.acc_minority,
        f"{tag}_avg": rep.acc_average, f"{tag}_worst": rep.acc_worst,
        f"{tag}_dprob": delta_prob(p, p_cf),
    }


def _make_eval(val_ds: LabeledDataset, test_ds: LabeledDataset | None):
    def evaluate(params):
        out = _split_metrics(params, val_ds, "val")
        if test_ds is not None:
            out.update(_split_metrics(params, test_ds, "test"))
        return out
    return evaluate


def train(config: TrainConfig, train_ds: LabeledDataset, val_ds: LabeledDataset,
          test_ds: LabeledDataset | None = None) -> TrainResult:
    """Composite-objective training. Only AutoACER applies the effect-match
    penalty; every other objective runs the plain task loss here (their extra
    machinery lives in the dedicated entry points below)."""
    config.validate(train_ds.attributes)
    X = train_ds.features()
    y = train_ds.labels().astype(float)
    targets = dict(config.effect_targets or {})
    strength = config.R if config.objective == "AutoACER" else 0.0
    cf = {a: train_ds.cf_features(a) for a in targets}
    vals = {a: train_ds.attr_values(a) for a in targets}
    params0 = nets.init_params(X.shape[1], config.hidden, 1, config.seed)
    params, cks = nets.gd_minimize(
        lambda p: nets.composite_loss(p, X, y, cf, vals, targets, strength),
        params0, config.epochs, config.lr, config.checkpoint_every,
        _make_eval(val_ds, test_ds), clip_norm=config.clip_norm,
        lr_decay=config.lr_decay)
    return TrainResult(config, params, cks)


def augment_with_counterfactuals(ds: LabeledDataset, attrs) -> LabeledDataset:
    """Originals plus, per attribute, a same-label counterfactual copy of
    every example."""
    extra = [make_counterfactual(ds.renderer, e, a, ds.spurious_attr)
             for a in attrs for e in ds.examples]
    kept = list(ds.examples) + extra
    realized = float(np.mean([e.group == "maj" for e in kept]))
    return LabeledDataset(kept, ds.split, ds.kappa_requested, realized,
                          ds.spurious_attr, ds.renderer, ds.dgp)


def train_cad(config: TrainConfig, train_ds: LabeledDataset, val_ds: LabeledDataset,
              invariant_set, test_ds: LabeledDataset | None = None) -> TrainResult:
    """Counterfactual data augmentation: ERM on the augmented set. An empty
    invariant set degenerates to plain ERM."""
    if len(train_ds) == 0:
        raise ValueError("empty training set")
    invariant_set = tuple(invariant_set)
    for a in invariant_set:
        if a not in train_ds.attributes:
            raise ValueError(f"unknown attribute {a!r}")
    augmented = augment_with_counterfactuals(train_ds, invariant_set) \
        if invariant_set else train_ds
    cfg = replace(config, objective="CAD", R=0.0, effect_targets=None)
    res = train(replace(cfg, objective="ERM"), augmented, val_ds, test_ds)
    res.config = cfg
    res.notes["invariant_set"] = invariant_set
    res.notes["augmented_n"] = len(augmented)
    return res


def train_jtt(config: TrainConfig, train_ds: LabeledDataset, val_ds: LabeledDataset,
              test_ds: LabeledDataset | None = None) -> TrainResult:
    """Two-stage upweighting: a short first-stage ERM flags its training
    errors, then a fresh model trains with those examples duplicated
    jtt_lambda_up times (as exact example weights)."""
    config.validate(train_ds.attributes)
    X = train_ds.features()
    y = train_ds.labels().astype(float)
    stage1 = train(replace(config, objective="ERM", epochs=config.jtt_first_epochs,
                           effect_targets=None, R=0.0),
                   train_ds, val_ds)
    p1 = nets.predict_prob(stage1.params, X)
    wrong = ((p1 >= 0.5).astype(float) != y)
    weights = 1.0 + (config.jtt_lambda_up - 1.0) * wrong.astype(float)
    params0 = nets.init_params(X.shape[1], config.hidden, 1, config.seed)
    params, cks = nets.gd_minimize(
        lambda p: nets.bce_loss(p, X, y, weights=weights),
        params0, config.epochs, config.lr, config.checkpoint_every,
        _make_eval(val_ds, test_ds), clip_norm=config.clip_norm,
        lr_decay=config.lr_decay)
    res = TrainResult(replace(config, objective="JTT"), params, cks)
    res.notes["n_upweighted"] = int(wrong.sum())
    if not wrong.any():
        res.notes["stage1_all_correct"] = True  # stage 2 is then plain ERM
    return res


def train_irm(config: TrainConfig, environments: list[LabeledDataset],
              val_ds: LabeledDataset, test_ds: LabeledDataset | None = None) -> TrainResult:
    """IRMv1 with the squared dummy-scale logit gradient as the penalty,
    averaged over environments alongside the per-environment task losses."""
    if len(environments) < 2:
        raise ValueError("IRM needs at least two environments")
    config.validate(environments[0].attributes)
    envs = [(ds.features(), ds.labels().astype(float)) for ds in environments]
    params0 = nets.init_params(envs[0][0].shape[1], config.hidden, 1, config.seed)
    params, cks = nets.gd_minimize(
        lambda p: nets.irm_loss(p, envs, lam=config.irm_lambda),
        params0, config.epochs, config.lr, config.checkpoint_every,
        _make_eval(val_ds, test_ds), clip_norm=config.clip_norm,
        lr_decay=config.lr_decay)
    res = TrainResult(replace(config, objective="IRM"), params, cks)
    res.notes["n_environments"] = len(environments)
    return res


def sweep_autoacer(base: TrainConfig, train_ds: LabeledDataset, val_ds: LabeledDataset,
                   targets: dict[str, float], r_grid=DEFAULT_R_GRID,
                   test_ds: LabeledDataset | None = None) -> list[TrainResult]:
    return [train(replace(base, objective="AutoACER", R=r, effect_targets=dict(targets)),
                  train_ds, val_ds, test_ds) for r in r_grid]


def selection_entries(results: list[TrainResult], criterion: str = "accuracy") -> list[dict]:
    """One candidate per (run, checkpoint); diverged tails are excluded so
    selection sees the full grid minus failures."""
    if criterion not in ("accuracy", "spurious_known"):
        raise ValueError(f"unknown selection criterion {criterion!r}")
    entries = []
    for res in results:
        for ck in res.checkpoints:
            if ck.get("diverged"):
                continue
            if criterion == "accuracy":
                score = ck["val_acc"]
            else:
                score = crit_spurious_known(ck["val_maj"], ck["val_min"], ck["val_dprob"])
            entries.append({"score": score, "R": res.config.R, "epoch": ck["epoch"],
                            "result": res, "ck": ck})
    if not entries:
        raise ValueError("no usable checkpoints across runs")
    return entries


def select_best(results: list[TrainResult], criterion: str = "accuracy"):
    best = pick_best(selection_entries(results, criterion), "score")
    return best["result"], best["ck"]


# ---------------------------------------------------------------------------
# invariance-score spuriousness detection

_RANDOM_LABEL_SALT = 7331


def _with_labels(ds: LabeledDataset, labels) -> LabeledDataset:
    exs = [Example(e.features, int(l), e.attributes, e.noise_seed, e.group,
                   e.counterfactuals)
           for e, l in zip(ds.examples, labels)]
    return LabeledDataset(exs, ds.split, ds.kappa_requested, ds.kappa_realized,
                          ds.spurious_attr, ds.renderer, ds.dgp)


def default_detection_config(seed: int = 0) -> TrainConfig:
    """Long decayed schedule on a narrow net: the score gap between candidate
    subsets lives in how fast each invariant model class fits, so the budget
    is pinned where the task/random-label races separate cleanly."""
    return TrainConfig(objective="AutoACER", R=100.0, epochs=3000,
                       lr_decay=0.0015, hidden=(32,), checkpoint_every=1000,
                       seed=seed)


def mouli_score(train_ds: LabeledDataset, val_ds: LabeledDataset, subset,
                config: TrainConfig | None = None, n_random: int = 5) -> float:
    """Invariance score of an attribute subset: train-task loss of a model
    regularized to be invariant to the subset, minus the mean train loss of
    matched models fitting seeded random labels under the same invariance.

    The random-label runs measure how expressive the invariant model class
    still is; subtracting them leaves the part of the task loss that the
    imposed invariance itself causes. Lower score = subset looks spurious.
    """
    config = config or default_detection_config()
    subset = tuple(subset)
    targets = {a: 0.0 for a in subset}
    cfg = replace(config, objective="AutoACER" if subset else "ERM",
                  effect_targets=targets or None)
    X = train_ds.features()
    task = train(cfg, train_ds, val_ds)
    task_loss, _ = nets.bce_loss(task.params, X, train_ds.labels().astype(float))
    rand_losses = []
    for i in range(n_random):
        rng = np.random.default_rng(np.random.SeedSequence(
            [config.seed, _RANDOM_LABEL_SALT, i]))
        y_rand = rng.integers(0, 2, size=len(train_ds))
        rand = train(cfg, _with_labels(train_ds, y_rand), val_ds)
        loss_i, _ = nets.bce_loss(rand.params, X, y_rand.astype(float))
        rand_losses.append(float(loss_i))
    return float(task_loss) - float(np.mean(rand_losses))


def mouli_detect(train_ds: LabeledDataset, val_ds: LabeledDataset, attributes=None,
                 config: TrainConfig | None = None, n_random: int = 5):
    """Score every attribute subset and return the argmin; ties go to the
    smaller subset (then lexicographic order, for determinism)."""
    attributes = tuple(attributes or train_ds.attributes)
    best_subset, best_score = None, None
    for k in range(len(attributes) + 1):
        for subset in itertools.combinations(attributes, k):
            s = mouli_score(train_ds, val_ds, subset, config, n_random)
            if best_score is None or s < best_score:
                best_subset, best_score = subset, s
    return best_subset

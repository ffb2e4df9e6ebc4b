"""Stage-1 treatment-effect estimators on rendered datasets.

Estimators fit networks on [features, attribute] inputs with full-batch
gradient descent and read the effect off toggled forward passes:

  Direct:        mean_X g(X,1) - g(X,0) from an outcome regressor
  Riesz:         the same plug-in read from the outcome head of a joint model
                 that also learns a representer head alpha
  DebiasedRiesz: plug-in + mean alpha(X,A) (Y - g(X,A)) bias correction

Estimates are clipped to [-1, 1] and snapped to a declared grid before use as
training targets.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .metrics import pick_best
from .synth import LabeledDataset

SNAP_GRID_COARSE = (-1.0, -0.5, -0.1, 0.0, 0.1, 0.3, 0.5, 1.0)
SNAP_GRID_FINE = (-1.0, -0.7, -0.5, -0.3, -0.1, 0.0, 0.1, 0.3, 0.5, 0.7, 1.0)
DEFAULT_R2_GRID = (0.0, 0.1, 1.0, 10.0)

ESTIMATORS = ("Direct", "Riesz", "DebiasedRiesz")
SELECTIONS = ("val_loss", "val_acc")


@dataclass(frozen=True)
class FitConfig:
    hidden: tuple[int, ...] = ()
    epochs: int = 400
    lr: float = 0.1
    checkpoint_every: int = 10
    clip_norm: float | None = 1.0
    r2: float = 0.0
    r1: float = 1.0  # weight of the representer objective (joint fit only)


def default_fit_config(dataset: LabeledDataset) -> FitConfig:
    """Linear regressor for bag-of-words features; one tanh layer for glyph
    images, whose label structure a linear map cannot express."""
    if getattr(dataset.renderer, "kind", "") == "glyph_image":
        return FitConfig(hidden=(32,))
    return FitConfig()


@dataclass
class FitResult:
    kind: str  # "regression" | "riesz"
    attribute: str
    seed: int
    config: FitConfig
    checkpoints: list[dict]
    params: list


@dataclass(frozen=True)
class EffectEstimate:
    attribute: str
    estimator: str  # one of ESTIMATORS
    selection: str  # one of SELECTIONS
    raw: float
    snapped: float
    seed: int
    epoch: int
    r2: float = 0.0


def _with_bit(X: np.ndarray, a) -> np.ndarray:
    col = np.full((X.shape[0], 1), float(a)) if np.isscalar(a) else np.asarray(a, float)[:, None]
    return np.concatenate([X, col], axis=1)


def direct_effect(params, X: np.ndarray) -> float:
    """mean g(X,1) - g(X,0) with the attribute input toggled, X held fixed."""
    p1 = nets.sigmoid(nets.forward(params, _with_bit(X, 1.0))[0][:, 0])
    p0 = nets.sigmoid(nets.forward(params, _with_bit(X, 0.0))[0][:, 0])
    return float(np.mean(p1 - p0))


def debiased_effect(params, X: np.ndarray, a: np.ndarray, y: np.ndarray) -> float:
    """Plug-in effect plus the representer correction alpha (Y - g)."""
    out_f = nets.forward(params, _with_bit(X, a))[0]
    g_f = nets.sigmoid(out_f[:, 0])
    alpha_f = out_f[:, 1]
    plug = direct_effect(params, X)
    return plug + float(np.mean(alpha_f * (y - g_f)))


def representer_oracle(a: np.ndarray, propensity: np.ndarray) -> np.ndarray:
    """Analytic representer for the toggle functional: A/e(X) - (1-A)/(1-e(X))."""
    a = np.asarray(a, float)
    e = np.asarray(propensity, float)
    return a / e - (1.0 - a) / (1.0 - e)


def _eval_sets(train: LabeledDataset, val: LabeledDataset, attr: str):
    Xt = train.features()
    at = train.attr_values(attr).astype(float)
    yt = train.labels().astype(float)
    Xv = val.features()
    av = val.attr_values(attr).astype(float)
    yv = val.labels().astype(float)
    return Xt, at, yt, Xv, av, yv


def fit_regression(train: LabeledDataset, val: LabeledDataset, attr: str,
                   config: FitConfig = FitConfig(), seed: int = 0) -> FitResult:
    """Outcome regression g(X, a) by sigmoid-squashed squared error."""
    Xt, at, yt, Xv, av, yv = _eval_sets(train, val, attr)
    Zt = _with_bit(Xt, at)
    Zv = _with_bit(Xv, av)
    params0 = nets.init_params(Zt.shape[1], config.hidden, 1, seed)

    def evaluate(params):
        pv = nets.sigmoid(nets.forward(params, Zv)[0][:, 0])
        return {
            "val_loss": float(np.mean((yv - pv) ** 2)),
            "val_acc": float(np.mean((pv >= 0.5).astype(float) == yv)),
            "effects": {"Direct": direct_effect(params, Xt)},
        }

    params, cks = nets.gd_minimize(
        lambda p: nets.squared_error_loss(p, Zt, yt, r2=config.r2),
        params0, config.epochs, config.lr, config.checkpoint_every, evaluate,
        clip_norm=config.clip_norm)
    return FitResult("regression", attr, seed, config, cks, params)


def fit_riesz(train: LabeledDataset, val: LabeledDataset, attr: str,
              config: FitConfig = FitConfig(), seed: int = 0) -> FitResult:
    """Joint outcome + representer fit; checkpoints carry both effect reads."""
    Xt, at, yt, Xv, av, yv = _eval_sets(train, val, attr)
    Zv = _with_bit(Xv, av)
    params0 = nets.init_params(Xt.shape[1] + 1, config.hidden, 2, seed)

    def evaluate(params):
        pv = nets.sigmoid(nets.forward(params, Zv)[0][:, 0])
        return {
            "val_loss": float(np.mean((yv - pv) ** 2)),
            "val_acc": float(np.mean((pv >= 0.5).astype(float) == yv)),
            "effects": {
                "Riesz": direct_effect(params, Xt),
                "DebiasedRiesz": debiased_effect(params, Xt, at, yt),
            },
        }

    params, cks = nets.gd_minimize(
        lambda p: nets.riesz_loss(p, Xt, at, yt, r1=config.r1, r2=config.r2),
        params0, config.epochs, config.lr, config.checkpoint_every, evaluate,
        clip_norm=config.clip_norm)
    return FitResult("riesz", attr, seed, config, cks, params)


def snap(value: float, grid=SNAP_GRID_FINE) -> float:
    """Clip to [-1, 1], then take the nearest grid point, ties toward zero.

    Distances are rounded to 9 decimals so that float dust (0.2 - 0.3 is not
    exactly -0.1) cannot sneak past the tie rule.
    """
    v = float(np.clip(value, -1.0, 1.0))
    return float(min(grid, key=lambda g: (round(abs(v - g), 9), abs(g))))


def select_and_snap(checkpoints: list[dict], criterion: str = "val_loss",
                    grid=SNAP_GRID_FINE, estimator: str = "Direct",
                    attribute: str = "", seed: int = 0) -> EffectEstimate:
    """Pick a checkpoint by validation loss or accuracy, then clip and snap
    that checkpoint's effect value.

    Checkpoints may come from several fits pooled together (the r2 sweep);
    ties prefer smaller r2, then earlier epoch.
    """
    if criterion not in SELECTIONS:
        raise ValueError(f"unknown selection criterion {criterion!r}")
    entries = [{"score": -c["val_loss"] if criterion == "val_loss" else c["val_acc"],
                "R": c.get("r2", 0.0), "epoch": c["epoch"], "ck": c}
               for c in checkpoints if not c.get("diverged")]
    if not entries:
        raise ValueError("no usable checkpoints to select from")
    best = pick_best(entries, "score")["ck"]
    raw = float(np.clip(best["effects"][estimator], -1.0, 1.0))
    return EffectEstimate(attribute, estimator, criterion, raw, snap(raw, grid),
                          seed, best["epoch"], best.get("r2", 0.0))


def select_from_fit(fit: FitResult, criterion: str = "val_loss",
                    grid=SNAP_GRID_FINE, estimator: str | None = None) -> EffectEstimate:
    if estimator is None:
        estimator = "Direct" if fit.kind == "regression" else "DebiasedRiesz"
    cks = [dict(c, r2=fit.config.r2) for c in fit.checkpoints]
    return select_and_snap(cks, criterion, grid, estimator, fit.attribute, fit.seed)


def estimate_all(train: LabeledDataset, val: LabeledDataset, attrs=None,
                 config: FitConfig | None = None, seed: int = 0,
                 grid=SNAP_GRID_FINE, estimators=ESTIMATORS,
                 selections=SELECTIONS, r2_grid=DEFAULT_R2_GRID) -> list[EffectEstimate]:
    """Every configured estimator x selection for every attribute.

    The regression fit is shared across Direct selections; the joint fit is
    swept over r2_grid and its checkpoints pooled, so Riesz selection may pick
    different regularization strengths under the two criteria.
    """
    if config is None:
        config = default_fit_config(train)
    attrs = tuple(attrs or train.attributes)
    out = []
    for attr in attrs:
        if "Direct" in estimators:
            fit = fit_regression(train, val, attr, config, seed)
            cks = [dict(c, r2=config.r2) for c in fit.checkpoints]
            for sel in selections:
                out.append(select_and_snap(cks, sel, grid, "Direct", attr, seed))
        joint = [e for e in ("Riesz", "DebiasedRiesz") if e in estimators]
        if joint:
            pooled = []
            for r2 in r2_grid:
                fit = fit_riesz(train, val, attr, replace(config, r2=r2), seed)
                pooled.extend(dict(c, r2=r2) for c in fit.checkpoints)
            for est in joint:
                for sel in selections:
                    out.append(select_and_snap(pooled, sel, grid, est, attr, seed))
    return out


def targets_from_estimates(estimates: list[EffectEstimate], estimator: str = "Direct",
                           selection: str = "val_loss") -> dict[str, float]:
    """Snapped per-attribute effect targets for the training regularizer."""
    picked = {}
    for e in estimates:
        if e.estimator == estimator and e.selection == selection:
            if e.attribute in picked:
                raise ValueError(f"duplicate estimate for attribute {e.attribute!r}")
            picked[e.attribute] = e.snapped
    if not picked:
        raise ValueError(f"no estimates for {estimator}/{selection}")
    return picked

"""Discrete structural causal models with exact enumeration.

Small acyclic models over categorical (mostly binary) variables. Joints,
interventions, and average causal effects are computed by exhaustive
enumeration, so results are exact up to float rounding. Everything here is
deliberately desk-scale: a handful of variables, no approximate inference.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12

SYNTEXT_Y_CPD = {
    # P(y=1 | causal, confound)
    (0, 0): 0.01,
    (0, 1): 0.70,
    (1, 0): 0.30,
    (1, 1): 0.99,
}


@dataclass(frozen=True)
class Variable:
    """One node: name, ordered parents, CPD indexed by parent values then own value."""

    name: str
    parents: tuple[str, ...]
    cpd: np.ndarray
    observed: bool = True

    @property
    def card(self) -> int:
        return self.cpd.shape[-1]


@dataclass(frozen=True)
class Distribution:
    """Exact joint over named variables; p has one axis per variable."""

    names: tuple[str, ...]
    p: np.ndarray

    def __post_init__(self):
        if self.p.ndim != len(self.names):
            raise ValueError("axis count must match variable count")
        if abs(float(self.p.sum()) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")

    @property
    def cards(self) -> tuple[int, ...]:
        return self.p.shape

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def marginal(self, keep: tuple[str, ...]) -> "Distribution":
        drop = tuple(i for i, n in enumerate(self.names) if n not in keep)
        q = self.p.sum(axis=drop) if drop else self.p
        kept = tuple(n for n in self.names if n in keep)
        return Distribution(kept, q)

    def prob(self, assignment: dict[str, int]) -> float:
        idx = tuple(assignment[n] for n in self.names)
        return float(self.p[idx])

    def expectation(self, name: str) -> float:
        m = self.marginal((name,))
        vals = np.arange(m.p.shape[0])
        return float((vals * m.p).sum())


@dataclass(frozen=True)
class Conditional:
    """Table of P(targets | given): one distribution slice per given-assignment."""

    given: tuple[str, ...]
    targets: tuple[str, ...]
    tables: dict[tuple[int, ...], np.ndarray]

    def table(self, assignment: dict[str, int]) -> np.ndarray:
        return self.tables[tuple(assignment[g] for g in self.given)]


def conditional_from_joint(dist: Distribution, targets: tuple[str, ...],
                           given: tuple[str, ...]) -> Conditional:
    """Exact P(targets | given), skipping given-assignments with zero mass."""
    sub = dist.marginal(tuple(given) + tuple(targets))
    g_axes = [sub.axis(g) for g in given]
    t_axes = [sub.axis(t) for t in targets]
    order = g_axes + t_axes
    arr = np.transpose(sub.p, order)
    g_cards = arr.shape[: len(given)]
    tables = {}
    for g_idx in np.ndindex(*g_cards):
        block = arr[g_idx]
        mass = float(block.sum())
        if mass <= 0.0:
            continue
        tables[g_idx] = block / mass
    return Conditional(tuple(given), tuple(targets), tables)


class Scm:
    """Acyclic discrete SCM. Variable order must be topological."""

    def __init__(self, variables: list[Variable]):
        self.order: list[str] = []
        self.vars: dict[str, Variable] = {}
        for v in variables:
            for par in v.parents:
                if par not in self.vars:
                    raise ValueError(f"parent {par!r} of {v.name!r} not declared earlier")
            expected = tuple(self.vars[p].card for p in v.parents) + (v.cpd.shape[-1],)
            if v.cpd.shape != expected:
                raise ValueError(f"CPD shape {v.cpd.shape} for {v.name!r}, expected {expected}")
            rows = v.cpd.reshape(-1, v.card)
            if np.abs(rows.sum(axis=1) - 1.0).max() > ROW_SUM_TOL:
                raise ValueError(f"CPD rows of {v.name!r} must sum to 1 within {ROW_SUM_TOL}")
            if rows.min() < 0.0:
                raise ValueError(f"CPD of {v.name!r} has negative entries")
            self.vars[v.name] = v
            self.order.append(v.name)

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(n for n in self.order if self.vars[n].observed)

    def joint(self) -> Distribution:
        cards = tuple(self.vars[n].card for n in self.order)
        pos = {n: i for i, n in enumerate(self.order)}
        p = np.zeros(cards)
        for idx in np.ndindex(*cards):
            prob = 1.0
            for i, name in enumerate(self.order):
                v = self.vars[name]
                pidx = tuple(idx[pos[q]] for q in v.parents)
                prob *= float(v.cpd[pidx + (idx[i],)])
            p[idx] = prob
        return Distribution(tuple(self.order), p)

    def intervene(self, name: str, value: int) -> "Scm":
        """do(name := value): point-mass CPD, parents cleared."""
        if name not in self.vars:
            raise KeyError(name)
        out = []
        for n in self.order:
            v = self.vars[n]
            if n == name:
                point = np.zeros(v.card)
                point[value] = 1.0
                out.append(Variable(n, (), point, v.observed))
            else:
                out.append(v)
        return Scm(out)

    def interventional(self, treatment: str, value: int) -> Distribution:
        return self.intervene(treatment, value).joint()

    def ace(self, treatment: str, outcome: str = "y") -> float:
        """E[outcome | do(treatment=1)] - E[outcome | do(treatment=0)]."""
        hi = self.interventional(treatment, 1).expectation(outcome)
        lo = self.interventional(treatment, 0).expectation(outcome)
        return hi - lo

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """n exact draws from the joint, returned as per-variable integer arrays."""
        dist = self.joint()
        flat = dist.p.reshape(-1)
        picks = rng.choice(flat.size, size=n, p=flat)
        idx = np.unravel_index(picks, dist.cards)
        return {name: idx[i].astype(np.int64) for i, name in enumerate(self.order)}


# ---------------------------------------------------------------------------
# identification estimands


def identify_dgp1(p_y_given_x: Conditional, p_x_do_a: Conditional) -> Conditional:
    """Front-door style adjustment: P(y | do(a)) = sum_x P(x | do(a)) P(y | x)."""
    targets = p_y_given_x.targets
    out = {}
    for a_idx, x_table in p_x_do_a.tables.items():
        acc = None
        for x_idx in np.ndindex(*x_table.shape):
            w = float(x_table[x_idx])
            if w == 0.0:
                continue
            term = w * p_y_given_x.tables[x_idx]
            acc = term if acc is None else acc + term
        out[a_idx] = acc
    return Conditional(p_x_do_a.given, targets, out)


def identify_dgp2(p_v: Distribution, p_y_given_v: Conditional, target: str) -> Conditional:
    """Back-door adjustment over the remaining attributes:
    P(y | do(target=t)) = sum_{v \\ target} P(v \\ target) P(y | v \\ target, target=t).
    """
    others = tuple(n for n in p_v.names if n != target)
    p_rest = p_v.marginal(others)
    t_axis = p_y_given_v.given.index(target)
    t_card = p_v.cards[p_v.axis(target)]
    out = {}
    for t_val in range(t_card):
        acc = None
        for rest_idx in np.ndindex(*p_rest.cards):
            w = float(p_rest.p[rest_idx])
            if w == 0.0:
                continue
            full = list(rest_idx)
            full.insert(t_axis, t_val)
            key = tuple(full)
            if key not in p_y_given_v.tables:
                raise ValueError(f"P(y | v) undefined at {key}; zero-mass context with positive adjustment weight")
            term = w * p_y_given_v.tables[key]
            acc = term if acc is None else acc + term
        out[(t_val,)] = acc
    return Conditional((target,), p_y_given_v.targets, out)


def ace_from_conditional(cond: Conditional) -> float:
    """E[y|do=1] - E[y|do=0] for a binary treatment and binary outcome table."""
    hi = cond.tables[(1,)]
    lo = cond.tables[(0,)]
    vals = np.arange(hi.shape[0])
    return float((vals * hi).sum() - (vals * lo).sum())


def conditioning_estimand(scm: Scm, treatment: str, adjust: tuple[str, ...],
                          outcome: str = "y") -> float:
    """sum_z P(z) [E(y | z, t=1) - E(y | z, t=0)]: what a conditional-outcome
    regression converges to. Unbiased only if `adjust` blocks every back door."""
    joint = scm.joint()
    p_z = joint.marginal(adjust)
    cond = conditional_from_joint(joint, (outcome,), tuple(adjust) + (treatment,))
    vals = None
    total = 0.0
    for z_idx in np.ndindex(*p_z.cards):
        w = float(p_z.p[z_idx])
        if w == 0.0:
            continue
        hi = cond.tables[z_idx + (1,)]
        lo = cond.tables[z_idx + (0,)]
        if vals is None:
            vals = np.arange(hi.shape[0])
        total += w * float((vals * hi).sum() - (vals * lo).sum())
    return total


def tv_invariance_score(scm: Scm, attr: str, context: tuple[str, ...],
                        outcome: str = "y") -> float:
    """max over contexts and attr values of TV(P(y | ctx), P(y | ctx, attr)).

    Zero iff adding `attr` on top of `context` never moves the outcome
    distribution, the exact-probability test for a spurious attribute.
    """
    joint = scm.joint()
    base = conditional_from_joint(joint, (outcome,), context)
    ext = conditional_from_joint(joint, (outcome,), tuple(context) + (attr,))
    a_card = joint.cards[joint.axis(attr)]
    worst = 0.0
    for ctx_idx, p_base in base.tables.items():
        for a in range(a_card):
            key = ctx_idx + (a,)
            if key not in ext.tables:
                continue
            tv = 0.5 * float(np.abs(ext.tables[key] - p_base).sum())
            worst = max(worst, tv)
    return worst


# ---------------------------------------------------------------------------
# canonical generating processes


def _bern(p1: float) -> np.ndarray:
    return np.array([1.0 - p1, p1])


def build_syntext(kappa: float, confound_observed: bool = True) -> Scm:
    """Two-word-topic sentiment toy: causal and confound are fair coins, the
    label mixes them through SYNTEXT_Y_CPD, and a spurious topic copies the
    confound with probability kappa. Hiding the confound yields the
    hidden-confounder variant."""
    _check_kappa(kappa)
    y_cpd = np.zeros((2, 2, 2))
    for (c, u), p1 in SYNTEXT_Y_CPD.items():
        y_cpd[c, u] = [1.0 - p1, p1]
    sp_cpd = np.array([[kappa, 1.0 - kappa], [1.0 - kappa, kappa]])
    return Scm([
        Variable("causal", (), _bern(0.5)),
        Variable("confound", (), _bern(0.5), observed=confound_observed),
        Variable("y", ("causal", "confound"), y_cpd),
        Variable("spurious", ("confound",), sp_cpd),
    ])


def build_mnist34_latent(kappa: float) -> Scm:
    """Latent digit/color bits with label = XOR(color, digit); a rotation bit
    copies the label with probability kappa, so it tracks (color, digit) only
    through the label."""
    _check_kappa(kappa)
    y_cpd = np.zeros((2, 2, 2))
    for c in (0, 1):
        for d in (0, 1):
            y_cpd[c, d, c ^ d] = 1.0
    rot_cpd = np.array([[kappa, 1.0 - kappa], [1.0 - kappa, kappa]])
    return Scm([
        Variable("color", (), _bern(0.5)),
        Variable("digit", (), _bern(0.5)),
        Variable("y", ("color", "digit"), y_cpd),
        Variable("rotation", ("y",), rot_cpd),
    ])


def _check_kappa(kappa: float) -> None:
    if not 0.5 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0.5, 1], got {kappa}")


def _rand_rows(rng: np.random.Generator, shape: tuple[int, ...], lo=0.05, hi=0.95) -> np.ndarray:
    """Random binary CPD bounded away from 0/1 so every context has mass."""
    p1 = rng.uniform(lo, hi, size=shape)
    return np.stack([1.0 - p1, p1], axis=-1)


def random_dgp1(rng: np.random.Generator, n_x: int = 2) -> Scm:
    """Treatment -> inputs -> label, with a hidden root confounding treatment
    and inputs. The label depends on the inputs only."""
    u = Variable("u", (), _bern(float(rng.uniform(0.2, 0.8))), observed=False)
    a = Variable("a", ("u",), _rand_rows(rng, (2,)))
    xs = [Variable(f"x{i}", ("u", "a"), _rand_rows(rng, (2, 2))) for i in range(n_x)]
    y = Variable("y", tuple(f"x{i}" for i in range(n_x)), _rand_rows(rng, (2,) * n_x))
    return Scm([u, a, *xs, y])


def random_dgp2(rng: np.random.Generator) -> Scm:
    """Hidden root correlating a causal attribute with a spurious one; the
    label depends on the causal attribute and an independent core input."""
    u = Variable("u", (), _bern(float(rng.uniform(0.2, 0.8))), observed=False)
    c = Variable("c", ("u",), _rand_rows(rng, (2,)))
    s = Variable("s", ("u",), _rand_rows(rng, (2,)))
    x = Variable("x", (), _bern(float(rng.uniform(0.2, 0.8))))
    y = Variable("y", ("c", "x"), _rand_rows(rng, (2, 2)))
    return Scm([u, c, s, x, y])


def random_dgp3(rng: np.random.Generator, positive: bool = True) -> Scm:
    """Hidden confounder drives both the treatment and the label; the
    treatment itself is causally inert. With positive=True both links point
    the same way, so plain conditioning inflates the (zero) effect."""
    u = Variable("u", (), _bern(float(rng.uniform(0.3, 0.7))), observed=False)
    lo_a, hi_a = sorted(rng.uniform(0.05, 0.95, size=2))
    if hi_a - lo_a < 0.1:
        lo_a, hi_a = max(0.05, lo_a - 0.07), min(0.95, hi_a + 0.07)
    a = Variable("a", ("u",), np.array([[1 - lo_a, lo_a], [1 - hi_a, hi_a]]))
    x = Variable("x", (), _bern(float(rng.uniform(0.2, 0.8))))
    y1 = rng.uniform(0.05, 0.95, size=(2, 2))
    if positive:
        y1.sort(axis=1)  # P(y=1 | x, u) increasing in u
        y1[:, 1] = np.minimum(y1[:, 1] + 0.1, 0.98)
    y = Variable("y", ("x", "u"), np.stack([1.0 - y1, y1], axis=-1))
    return Scm([u, a, x, y])


# ---------------------------------------------------------------------------
# declarative template


TEMPLATES = ("SynTextObsConf", "SynTextUnobsConf", "Mnist34Latent", "DGP1", "DGP2", "DGP3")


@dataclass(frozen=True)
class DgpSpec:
    """Declarative, serializable description of a generating process."""

    template: str
    kappa: float = 0.5
    cpd_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        _check_kappa(self.kappa)

    def build(self, seed: int = 0) -> Scm:
        if self.template == "SynTextObsConf":
            scm = build_syntext(self.kappa, confound_observed=True)
        elif self.template == "SynTextUnobsConf":
            scm = build_syntext(self.kappa, confound_observed=False)
        elif self.template == "Mnist34Latent":
            scm = build_mnist34_latent(self.kappa)
        elif self.template == "DGP1":
            scm = random_dgp1(np.random.default_rng(seed))
        elif self.template == "DGP2":
            scm = random_dgp2(np.random.default_rng(seed))
        else:
            scm = random_dgp3(np.random.default_rng(seed))
        if self.cpd_overrides:
            scm = _apply_overrides(scm, self.cpd_overrides)
        return scm

    def to_dict(self) -> dict:
        d = {"template": self.template, "kappa": self.kappa}
        if self.cpd_overrides:
            d["cpd_overrides"] = {k: np.asarray(v).tolist() for k, v in self.cpd_overrides.items()}
        return d

    @staticmethod
    def from_dict(d: dict) -> "DgpSpec":
        return DgpSpec(d["template"], float(d["kappa"]), d.get("cpd_overrides", {}))


def _apply_overrides(scm: Scm, overrides: dict) -> Scm:
    out = []
    for n in scm.order:
        v = scm.vars[n]
        if n in overrides:
            cpd = np.asarray(overrides[n], dtype=float)
            out.append(Variable(n, v.parents, cpd, v.observed))
        else:
            out.append(v)
    return Scm(out)

"""Numerical audit of the max-margin preference theorem on disentangled
latents.

The objects here are tiny linear-geometry problems: latent points split into
named causal/spurious blocks, unit-norm block classifiers, and the
regularized margin loss

    L(c) = -min_i y_i c(z_i) + R * (sum_k lam_ca_k ||w_ca_k||_p
                                    + sum_j lam_sp_j ||w_sp_j||_p).

The audit machinery solves max-margin classifiers exactly enough to compare
against brute-force oracles, computes the eta matrix and the two sufficient
conditions, derives the R threshold, and checks that the regularized loss
really prefers the causal-only classifier whenever the conditions say so.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

LAMBDA_CLAMP_EPS = 1e-3


class NonSeparableError(ValueError):
    """Raised when no unit-norm classifier attains a positive margin; carries
    the best margin found as the certificate."""

    def __init__(self, margin: float):
        super().__init__(f"data not separable on the chosen blocks "
                         f"(best margin {margin:.6f} <= 0)")
        self.margin = margin


@dataclass(frozen=True)
class DisentangledSet:
    Z: np.ndarray                   # (n, d_total), block columns in declared order
    y: np.ndarray                   # labels in {-1, +1}
    causal_dims: tuple[int, ...]    # d_k per causal block, K blocks
    spurious_dims: tuple[int, ...]  # d_j per spurious block, J blocks

    def __post_init__(self):
        if set(np.unique(self.y)) - {-1, 1}:
            raise ValueError("labels must be in {-1, +1}")
        if self.Z.shape[1] != sum(self.causal_dims) + sum(self.spurious_dims):
            raise ValueError("block dims must partition the coordinates")

    @property
    def K(self) -> int:
        return len(self.causal_dims)

    @property
    def J(self) -> int:
        return len(self.spurious_dims)

    def blocks(self) -> list[tuple[str, int, slice]]:
        """("ca", k, slice) then ("sp", j, slice), in coordinate order."""
        out, at = [], 0
        for k, d in enumerate(self.causal_dims):
            out.append(("ca", k, slice(at, at + d)))
            at += d
        for j, d in enumerate(self.spurious_dims):
            out.append(("sp", j, slice(at, at + d)))
            at += d
        return out

    def causal_coords(self) -> np.ndarray:
        return np.arange(sum(self.causal_dims))


@dataclass
class BlockLinearClassifier:
    w: np.ndarray
    norm_p: float = 2.0

    def scores(self, Z: np.ndarray) -> np.ndarray:
        return Z @ self.w

    def unit_norm_violation(self) -> float:
        return abs(float(self.w @ self.w) - 1.0)


def margin(clf: BlockLinearClassifier, data: DisentangledSet) -> float:
    return float(np.min(data.y * clf.scores(data.Z)))


def block_norms(clf: BlockLinearClassifier, data: DisentangledSet, kind: str,
                p: float | None = None) -> np.ndarray:
    p = clf.norm_p if p is None else p
    return np.array([np.linalg.norm(clf.w[sl], ord=p)
                     for knd, _, sl in data.blocks() if knd == kind])


def _solve_hard_margin(Za: np.ndarray, y: np.ndarray) -> np.ndarray:
    """min ||v||^2 s.t. y v.z >= 1, via subgradient warm start + SLSQP."""
    n, d = Za.shape
    v = np.zeros(d)
    # hinge warm start; step tuned for the unit-scale instances used here
    for t in range(1, 501):
        viol = y * (Za @ v) < 1.0
        g = v - 5.0 * (y[viol, None] * Za[viol]).sum(axis=0)
        v = v - (0.5 / np.sqrt(t)) * g
    res = optimize.minimize(
        lambda u: 0.5 * float(u @ u), v, jac=lambda u: u, method="SLSQP",
        constraints=[{"type": "ineq",
                      "fun": lambda u: y * (Za @ u) - 1.0,
                      "jac": lambda u: y[:, None] * Za}],
        options={"maxiter": 400, "ftol": 1e-14})
    return res.x


def max_margin(data: DisentangledSet, blocks: str = "all",
               norm_p: float = 2.0) -> BlockLinearClassifier:
    """Unit-norm classifier maximizing the worst margin over the chosen
    blocks ("all" or "causal"); coordinates outside them are pinned to 0."""
    if blocks == "all":
        active = np.arange(data.Z.shape[1])
    elif blocks == "causal":
        active = data.causal_coords()
    else:
        raise ValueError(f"unknown block choice {blocks!r}")
    Za = data.Z[:, active]
    v = _solve_hard_margin(Za, data.y)
    nv = float(np.linalg.norm(v))
    w = np.zeros(data.Z.shape[1])
    if nv > 0:
        w[active] = v / nv
    clf = BlockLinearClassifier(w, norm_p)
    m = margin(clf, data)
    if m <= 0:
        raise NonSeparableError(m)
    return clf


def unit_directions(d: int, n_grid: int = 720) -> np.ndarray:
    """Exhaustive unit vectors: exact for d=1, angle grid for d=2, spherical
    grid for d=3."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        t = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if d == 3:
        m = max(8, int(np.sqrt(n_grid)))
        t = np.linspace(0.0, np.pi, m)
        u = np.linspace(0.0, 2 * np.pi, 2 * m, endpoint=False)
        tt, uu = np.meshgrid(t, u)
        return np.stack([np.sin(tt) * np.cos(uu), np.sin(tt) * np.sin(uu),
                         np.cos(tt)], axis=-1).reshape(-1, 3)
    raise ValueError("direction grids support at most 3 dimensions")


def _best_direction(Za: np.ndarray, y: np.ndarray, dirs: np.ndarray):
    margins = np.min(y[None, :] * (dirs @ Za.T), axis=1)
    best = int(np.argmax(margins))
    return dirs[best], float(margins[best])


def max_margin_oracle(data: DisentangledSet, blocks: str = "all",
                      n_grid: int = 720, refine: int = 4) -> tuple[np.ndarray, float]:
    """Brute-force best direction over an angle grid, then zoomed re-grids
    around the winner; usable up to 3 active dimensions. Returns
    (full-width unit vector, margin)."""
    active = np.arange(data.Z.shape[1]) if blocks == "all" else data.causal_coords()
    d = len(active)
    if d > 3:
        raise ValueError(f"grid oracle only covers up to 3 active dims, got {d}")
    Za = data.Z[:, active]
    if d == 1:
        u, m = _best_direction(Za, data.y, unit_directions(1))
    elif d == 2:
        t = np.linspace(0.0, 2 * np.pi, n_grid, endpoint=False)
        step = t[1] - t[0]
        u, m, t0 = None, -np.inf, None
        for _ in range(refine + 1):
            dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
            cand, mc = _best_direction(Za, data.y, dirs)
            if mc > m:
                u, m = cand, mc
            t0 = float(np.arctan2(u[1], u[0]))
            t = np.linspace(t0 - step, t0 + step, 61)
            step /= 20.0
    else:
        m_side = max(72, int(np.sqrt(n_grid)))
        tt, pp = np.meshgrid(np.linspace(0.0, np.pi, m_side),
                             np.linspace(0.0, 2 * np.pi, 2 * m_side, endpoint=False))
        dirs = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp),
                         np.cos(tt)], axis=-1).reshape(-1, 3)
        margins = np.min(data.y[None, :] * (dirs @ Za.T), axis=1)
        # the margin surface is a min of linear pieces and can be multi-modal,
        # so zoom independently from several coarse winners
        top = np.argsort(margins)[-8:]
        u, m = dirs[int(top[-1])], float(margins[int(top[-1])])
        for idx in top:
            u_c, m_c, step = dirs[int(idx)], float(margins[int(idx)]), np.pi / m_side
            for _ in range(refine + 2):
                t0 = float(np.arccos(np.clip(u_c[2], -1.0, 1.0)))
                p0 = float(np.arctan2(u_c[1], u_c[0]))
                p_span = step * 2.0 / max(np.sin(t0), 0.2)
                lt, lp = np.meshgrid(np.linspace(t0 - 2 * step, t0 + 2 * step, 33),
                                     np.linspace(p0 - p_span, p0 + p_span, 33))
                local = np.stack([np.sin(lt) * np.cos(lp), np.sin(lt) * np.sin(lp),
                                  np.cos(lt)], axis=-1).reshape(-1, 3)
                cand, mc = _best_direction(Za, data.y, local)
                if mc > m_c:
                    u_c, m_c = cand, mc
                step /= 8.0
            if m_c > m:
                u, m = u_c, m_c
    w = np.zeros(data.Z.shape[1])
    w[active] = u
    return w, m


# ---------------------------------------------------------------------------
# theorem quantities

def compute_lambdas(effects, clamp_eps: float = LAMBDA_CLAMP_EPS) -> np.ndarray:
    """lambda = 1 / max(|TE|, eps); with |TE| <= 1 every lambda is >= 1."""
    effects = np.atleast_1d(np.asarray(effects, float))
    return 1.0 / np.maximum(np.abs(effects), clamp_eps)


def eta_matrix(c_des: BlockLinearClassifier, c_mm: BlockLinearClassifier,
               data: DisentangledSet, p: float = 2.0) -> np.ndarray:
    """eta[k, j] = (||w_des_ca_k|| - ||w_mm_ca_k||) / ||w_mm_sp_j||."""
    des_ca = block_norms(c_des, data, "ca", p)
    mm_ca = block_norms(c_mm, data, "ca", p)
    mm_sp = block_norms(c_mm, data, "sp", p)
    if np.any(mm_sp <= 0):
        raise ValueError("max-margin classifier puts no weight on a spurious "
                         "block; eta undefined")
    return (des_ca - mm_ca)[:, None] / mm_sp[None, :]


def mean_condition(lam_ca: np.ndarray, lam_sp: np.ndarray,
                   eta: np.ndarray) -> tuple[float, bool]:
    """mean over (k, j) of (lam_ca_k / lam_sp_j) * eta_kj, versus J/K."""
    K, J = eta.shape
    value = float(np.mean((lam_ca[:, None] / lam_sp[None, :]) * eta))
    return value, value < J / K


def strict_condition(lam_ca: np.ndarray, lam_sp: np.ndarray,
                     eta: np.ndarray) -> bool:
    """Per-pair version: lam_sp_j > (K/J) eta_kj lam_ca_k for every (k, j)."""
    K, J = eta.shape
    return bool(np.all(lam_sp[None, :] > (K / J) * eta * lam_ca[:, None]))


def penalty(clf: BlockLinearClassifier, data: DisentangledSet,
            lam_ca: np.ndarray, lam_sp: np.ndarray, p: float | None = None) -> float:
    ca = block_norms(clf, data, "ca", p)
    sp = block_norms(clf, data, "sp", p)
    return float(lam_ca @ ca + lam_sp @ sp)


def regularized_loss(clf: BlockLinearClassifier, data: DisentangledSet,
                     lam_ca: np.ndarray, lam_sp: np.ndarray, R: float,
                     p: float | None = None) -> float:
    return -margin(clf, data) + R * penalty(clf, data, lam_ca, lam_sp, p)


@dataclass
class TheoremInstance:
    data: DisentangledSet
    c_mm: BlockLinearClassifier
    c_des: BlockLinearClassifier
    lam_ca: np.ndarray
    lam_sp: np.ndarray
    eta: np.ndarray
    mean_value: float = field(init=False)
    mean_holds: bool = field(init=False)
    strict_holds: bool = field(init=False)

    def __post_init__(self):
        self.mean_value, self.mean_holds = mean_condition(self.lam_ca, self.lam_sp, self.eta)
        self.strict_holds = strict_condition(self.lam_ca, self.lam_sp, self.eta)


def analyze_instance(data: DisentangledSet, causal_effects, spurious_effects,
                     p: float = 2.0, clamp_eps: float = LAMBDA_CLAMP_EPS) -> TheoremInstance:
    c_mm = max_margin(data, "all", p)
    c_des = max_margin(data, "causal", p)
    return TheoremInstance(data, c_mm, c_des,
                           compute_lambdas(causal_effects, clamp_eps),
                           compute_lambdas(spurious_effects, clamp_eps),
                           eta_matrix(c_des, c_mm, data, p))


def r_threshold(inst: TheoremInstance) -> float:
    """Loss-preference crossover: for R above this, the causal-only
    classifier has strictly lower regularized loss. Denominator must be
    positive for a finite crossover to exist; this is what the mean
    condition guarantees."""
    num = margin(inst.c_mm, inst.data) - margin(inst.c_des, inst.data)
    den = penalty(inst.c_mm, inst.data, inst.lam_ca, inst.lam_sp) \
        - penalty(inst.c_des, inst.data, inst.lam_ca, inst.lam_sp)
    if den <= 0:
        raise ValueError(f"nonpositive penalty gap {den:.6f}: no finite "
                         "preference threshold (condition violated)")
    return num / den


def verify_preference(inst: TheoremInstance, R: float) -> bool:
    loss_des = regularized_loss(inst.c_des, inst.data, inst.lam_ca, inst.lam_sp, R)
    loss_mm = regularized_loss(inst.c_mm, inst.data, inst.lam_ca, inst.lam_sp, R)
    return loss_des < loss_mm


# ---------------------------------------------------------------------------
# claim 2: global optimum over the unit sphere for K = J = 1

def verify_global_optimum(data: DisentangledSet, lam_ca: float, lam_sp: float,
                          R: float, theta_step: float = 1e-3,
                          dir_grid: int = 720, tol: float = 2e-3) -> bool:
    """Grid-search all unit-norm block classifiers w = (theta*u_ca,
    sqrt(1-theta^2)*u_sp) and confirm none beats the causal-only max-margin
    classifier by more than grid tolerance. Requires K = J = 1 and
    lam_ca < lam_sp (the claim's hypothesis)."""
    if data.K != 1 or data.J != 1:
        raise ValueError("global-optimum search is specified for K = J = 1")
    if not lam_ca < lam_sp:
        raise ValueError("hypothesis requires lam_ca < lam_sp")
    lam_ca_v, lam_sp_v = np.array([lam_ca]), np.array([lam_sp])
    c_des = max_margin(data, "causal")
    best_des = regularized_loss(c_des, data, lam_ca_v, lam_sp_v, R)
    d_ca, d_sp = data.causal_dims[0], data.spurious_dims[0]
    dirs_ca = unit_directions(d_ca, dir_grid)
    dirs_sp = unit_directions(d_sp, dir_grid)
    thetas = np.arange(0.0, 1.0 + theta_step / 2, theta_step)
    Z_ca = data.Z[:, :d_ca]
    Z_sp = data.Z[:, d_ca:]
    s_ca = dirs_ca @ Z_ca.T  # (n_ca_dirs, n)
    s_sp = dirs_sp @ Z_sp.T
    y = data.y[None, :]
    best = np.inf
    for th in thetas:
        rho = np.sqrt(max(0.0, 1.0 - th * th))
        pen = R * (lam_ca * th + lam_sp * rho)
        # margins for every (ca dir, sp dir) pair at this split
        m = np.min(y * (th * s_ca[:, None, :] + rho * s_sp[None, :, :]), axis=2)
        best = min(best, float(pen - m.max()))
    return best >= best_des - tol


def eta_theta(theta: float) -> float:
    """The proof's single-pair eta as a function of the causal weight share;
    strictly decreasing on [0, 1)."""
    return float(np.sqrt((1.0 - theta) / (1.0 + theta)))


# ---------------------------------------------------------------------------
# side lemmas

def f_alpha(alpha: float, eta: float) -> float:
    """(1 - sqrt(1 + eta - eta alpha^2)) / (alpha - 1); radicand clamped at 0
    so the endpoint alpha_max does not produce sqrt(-epsilon)."""
    rad = max(0.0, 1.0 + eta - eta * alpha * alpha)
    return (1.0 - np.sqrt(rad)) / (alpha - 1.0)


def check_draft_lemma(eta: float, n_grid: int = 2000) -> dict:
    """f is increasing on (1, alpha_max], stays above eta, tends to eta at
    1+, and the square-root term hits exactly 0 at alpha_max."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    alpha_max = float(np.sqrt((1.0 + eta) / eta))
    alphas = np.linspace(1.0 + 1e-6, alpha_max, n_grid)
    vals = np.array([f_alpha(a, eta) for a in alphas])
    beta_end = np.sqrt(max(0.0, 1.0 + eta - eta * alpha_max ** 2))
    return {
        "alpha_max": alpha_max,
        "increasing": bool(np.all(np.diff(vals) > 0)),
        "above_eta": bool(np.all(vals > eta)),
        "limit_ok": bool(abs(vals[0] - eta) < 1e-4),
        "beta_endpoint_zero": bool(abs(beta_end) < 1e-12),
    }


def check_hm_am(values) -> dict:
    """Harmonic mean <= arithmetic mean for positive reals, equality iff all
    equal."""
    v = np.asarray(values, float)
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    hm = len(v) / float(np.sum(1.0 / v))
    am = float(np.mean(v))
    return {"hm": hm, "am": am, "holds": hm <= am + 1e-12,
            "equal": bool(np.isclose(hm, am, rtol=0, atol=1e-12))}


# ---------------------------------------------------------------------------
# randomized audit

def random_instance(rng: np.random.Generator, K: int | None = None,
                    J: int | None = None, max_dim: int = 3,
                    n_points: int = 24) -> tuple[DisentangledSet, np.ndarray, np.ndarray]:
    """A separable random instance plus drawn effect estimates.

    Causal blocks carry the label direction with a guaranteed margin;
    spurious blocks correlate with the label strongly enough (flip rate
    ~0.12) that the full max-margin solution leans on them.
    """
    K = int(rng.integers(1, 4)) if K is None else K
    J = int(rng.integers(1, 4)) if J is None else J
    ca_dims = tuple(int(rng.integers(1, max_dim + 1)) for _ in range(K))
    sp_dims = tuple(int(rng.integers(1, max_dim + 1)) for _ in range(J))
    y = np.where(np.arange(n_points) % 2 == 0, 1.0, -1.0)
    rng.shuffle(y)
    cols = []
    for d in ca_dims:
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        gap = rng.uniform(0.6, 1.4)
        noise = rng.normal(0.0, 0.12, size=(n_points, d))
        cols.append(y[:, None] * gap * u[None, :] + noise)
    for d in sp_dims:
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        s = np.where(rng.uniform(size=n_points) < 0.88, y, -y)
        gap = rng.uniform(1.2, 2.6)  # tempting: larger than the causal gaps
        noise = rng.normal(0.0, 0.12, size=(n_points, d))
        cols.append(s[:, None] * gap * u[None, :] + noise)
    data = DisentangledSet(np.concatenate(cols, axis=1), y, ca_dims, sp_dims)
    ca_te = rng.uniform(0.25, 1.0, size=K) * rng.choice([-1.0, 1.0], size=K)
    sp_te = rng.uniform(0.0, 0.25, size=J) * rng.choice([-1.0, 1.0], size=J)
    return data, ca_te, sp_te


def _is_degenerate(data: DisentangledSet, inst: TheoremInstance,
                   rng: np.random.Generator) -> bool:
    """Max-margin uniqueness probe: re-solve under a tiny data perturbation
    and compare directions."""
    Zp = data.Z + rng.normal(0.0, 1e-7, size=data.Z.shape)
    perturbed = DisentangledSet(Zp, data.y, data.causal_dims, data.spurious_dims)
    try:
        c2 = max_margin(perturbed, "all")
    except NonSeparableError:
        return True
    return float(np.linalg.norm(c2.w - inst.c_mm.w)) > 1e-3


def audit(n_instances: int = 100, seed: int = 0) -> list[dict]:
    """Randomized end-to-end check of the preference claim. Each record
    carries the condition values, the R threshold when defined, and the
    preference outcome at R slightly above the threshold."""
    rng = np.random.default_rng(seed)
    records = []
    attempt = 0
    while len(records) < n_instances:
        attempt += 1
        if attempt > 20 * n_instances:
            raise RuntimeError("instance generation kept degenerating")
        try:
            data, ca_te, sp_te = random_instance(rng)
            inst = analyze_instance(data, ca_te, sp_te)
        except (NonSeparableError, ValueError):
            continue
        if _is_degenerate(data, inst, rng):
            continue
        rec = {
            "instance": len(records), "K": data.K, "J": data.J,
            "mean_cond": inst.mean_value, "holds": inst.mean_holds,
            "strict": inst.strict_holds,
            "R_threshold": float("nan"), "preferred": False,
        }
        if inst.mean_holds:
            thr = r_threshold(inst)
            rec["R_threshold"] = thr
            R = max(0.0, thr) * 1.01 + 1e-9
            rec["preferred"] = verify_preference(inst, R)
        records.append(rec)
    return records


def count_counterexamples(records: list[dict]) -> int:
    return sum(1 for r in records if r["holds"] and not r["preferred"])

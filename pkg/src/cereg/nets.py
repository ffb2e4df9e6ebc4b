"""Tiny feed-forward nets with hand-derived gradients.

Full-batch deterministic gradient descent only. Everything is float64 and
every objective returns (loss, grads) with grads computed analytically, so
central finite differences can audit each one.

params layout: list of (W, b) pairs; hidden layers use tanh, the final layer
is linear. Multi-output heads are columns of the final layer.
"""

from __future__ import annotations

import numpy as np

Params = list[tuple[np.ndarray, np.ndarray]]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def init_params(in_dim: int, hidden: tuple[int, ...], n_out: int, seed: int) -> Params:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    dims = [in_dim, *hidden, n_out]
    params = []
    for a, b in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b))
        params.append((W, np.zeros(b)))
    return params


def forward(params: Params, X: np.ndarray):
    """Returns (out, caches): caches hold layer inputs for backward."""
    acts = [X]
    a = X
    for W, b in params[:-1]:
        a = np.tanh(a @ W + b)
        acts.append(a)
    W, b = params[-1]
    out = a @ W + b
    return out, acts


def backward(params: Params, acts: list[np.ndarray], dout: np.ndarray) -> Params:
    """Gradient of sum(dout * out) w.r.t. params."""
    grads = [None] * len(params)
    W, _ = params[-1]
    grads[-1] = (acts[-1].T @ dout, dout.sum(axis=0))
    da = dout @ W.T
    for i in range(len(params) - 2, -1, -1):
        dz = da * (1.0 - acts[i + 1] ** 2)  # tanh'
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        da = dz @ params[i][0].T
    return grads


def zeros_like_params(params: Params) -> Params:
    return [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]


def add_grads(acc: Params, extra: Params, scale: float = 1.0) -> None:
    for (aW, ab), (gW, gb) in zip(acc, extra):
        aW += scale * gW
        ab += scale * gb


def l2_penalty(params: Params) -> tuple[float, Params]:
    """Sum of squared parameters (weights and biases) with gradient."""
    val = 0.0
    grads = []
    for W, b in params:
        val += float((W ** 2).sum() + (b ** 2).sum())
        grads.append((2.0 * W, 2.0 * b))
    return val, grads


def copy_params(params: Params) -> Params:
    return [(W.copy(), b.copy()) for W, b in params]


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])


def unflatten(vec: np.ndarray, like: Params) -> Params:
    out = []
    i = 0
    for W, b in like:
        w = vec[i:i + W.size].reshape(W.shape); i += W.size
        bb = vec[i:i + b.size].reshape(b.shape); i += b.size
        out.append((w, bb))
    return out


# ---------------------------------------------------------------------------
# objectives (each returns loss value and full parameter gradient)


def squared_error_loss(params: Params, X: np.ndarray, y: np.ndarray, r2: float = 0.0):
    """mean (y - sigmoid(out))^2 + r2 * L2."""
    n = X.shape[0]
    out, acts = forward(params, X)
    p = sigmoid(out[:, 0])
    loss = float(np.mean((y - p) ** 2))
    dz = (2.0 / n) * (p - y) * p * (1.0 - p)
    dout = np.zeros_like(out)
    dout[:, 0] = dz
    grads = backward(params, acts, dout)
    if r2:
        pen, pgrads = l2_penalty(params)
        loss += r2 * pen
        add_grads(grads, pgrads, r2)
    return loss, grads


def bce_loss(params: Params, X: np.ndarray, y: np.ndarray,
             weights: np.ndarray | None = None, r2: float = 0.0):
    """Mean binary cross-entropy on the logit; optional per-example weights
    (duplicating an example k times equals weight k)."""
    out, acts = forward(params, X)
    z = out[:, 0]
    per = softplus(z) - y * z
    if weights is None:
        loss = float(per.mean())
        dz = (sigmoid(z) - y) / X.shape[0]
    else:
        tot = float(weights.sum())
        loss = float((weights * per).sum() / tot)
        dz = weights * (sigmoid(z) - y) / tot
    dout = np.zeros_like(out)
    dout[:, 0] = dz
    grads = backward(params, acts, dout)
    if r2:
        pen, pgrads = l2_penalty(params)
        loss += r2 * pen
        add_grads(grads, pgrads, r2)
    return loss, grads


def riesz_loss(params: Params, X: np.ndarray, a: np.ndarray, y: np.ndarray,
               r1: float = 1.0, r2: float = 0.0):
    """Joint outcome/representer objective on inputs [X, a].

    Head 0 is the outcome regressor g (sigmoid-squashed squared error); head 1
    is the representer alpha trained by
        mean(alpha(X, a)^2 - 2 * (alpha(X, 1) - alpha(X, 0))),
    whose population minimizer is the inverse-propensity weight function.
    """
    n = X.shape[0]
    Zf = np.concatenate([X, a[:, None]], axis=1)
    Z1 = np.concatenate([X, np.ones((n, 1))], axis=1)
    Z0 = np.concatenate([X, np.zeros((n, 1))], axis=1)
    out_f, acts_f = forward(params, Zf)
    out_1, acts_1 = forward(params, Z1)
    out_0, acts_0 = forward(params, Z0)
    p = sigmoid(out_f[:, 0])
    reg = float(np.mean((y - p) ** 2))
    alpha_f, alpha_1, alpha_0 = out_f[:, 1], out_1[:, 1], out_0[:, 1]
    rr = float(np.mean(alpha_f ** 2 - 2.0 * (alpha_1 - alpha_0)))
    loss = reg + r1 * rr

    dout_f = np.zeros_like(out_f)
    dout_f[:, 0] = (2.0 / n) * (p - y) * p * (1.0 - p)
    dout_f[:, 1] = r1 * (2.0 / n) * alpha_f
    grads = backward(params, acts_f, dout_f)
    dout_1 = np.zeros_like(out_1)
    dout_1[:, 1] = -r1 * (2.0 / n)
    add_grads(grads, backward(params, acts_1, dout_1))
    dout_0 = np.zeros_like(out_0)
    dout_0[:, 1] = r1 * (2.0 / n)
    add_grads(grads, backward(params, acts_0, dout_0))
    if r2:
        pen, pgrads = l2_penalty(params)
        loss += r2 * pen
        add_grads(grads, pgrads, r2)
    return loss, grads


def effect_match_loss(params: Params, X: np.ndarray, cf: dict[str, np.ndarray],
                      attr_values: dict[str, np.ndarray], targets: dict[str, float]):
    """sum over attributes of mean((signed prediction gap - target)^2).

    The gap is prob(rendering with attr=1) - prob(rendering with attr=0), so
    the factual/counterfactual difference is sign-corrected by the factual
    attribute value.
    """
    n = X.shape[0]
    out_f, acts_f = forward(params, X)
    p_f = sigmoid(out_f[:, 0])
    loss = 0.0
    dz_f = np.zeros(n)
    cf_grads = zeros_like_params(params)
    for attr, te in targets.items():
        out_c, acts_c = forward(params, cf[attr])
        p_c = sigmoid(out_c[:, 0])
        sign = np.where(attr_values[attr] == 1, 1.0, -1.0)
        gap = sign * (p_f - p_c)
        resid = gap - te
        loss += float(np.mean(resid ** 2))
        dz_f += (2.0 / n) * resid * sign * p_f * (1.0 - p_f)
        dout_c = np.zeros_like(out_c)
        dout_c[:, 0] = -(2.0 / n) * resid * sign * p_c * (1.0 - p_c)
        add_grads(cf_grads, backward(params, acts_c, dout_c))
    dout_f = np.zeros_like(out_f)
    dout_f[:, 0] = dz_f
    grads = backward(params, acts_f, dout_f)
    add_grads(grads, cf_grads)
    return loss, grads


def composite_loss(params: Params, X: np.ndarray, y: np.ndarray,
                   cf: dict[str, np.ndarray], attr_values: dict[str, np.ndarray],
                   targets: dict[str, float], reg_strength: float,
                   weights: np.ndarray | None = None, r2: float = 0.0):
    """Task cross-entropy plus reg_strength times the effect-match penalty.

    With reg_strength == 0 or no targets the penalty branch is skipped
    entirely, so the update sequence is bit-identical to plain ERM.
    """
    loss, grads = bce_loss(params, X, y, weights=weights, r2=r2)
    if reg_strength and targets:
        reg, rgrads = effect_match_loss(params, X, cf, attr_values, targets)
        loss += reg_strength * reg
        add_grads(grads, rgrads, reg_strength)
    return loss, grads


def env_logit_grad_stat(z: np.ndarray, y: np.ndarray) -> float:
    """d/dw of mean CE(w * z, y) at w=1: mean((sigmoid(z) - y) * z)."""
    return float(np.mean((sigmoid(z) - y) * z))


def irm_penalty(params: Params, envs: list[tuple[np.ndarray, np.ndarray]]) -> float:
    """Sum over environments of the squared dummy-scale gradient."""
    total = 0.0
    for X, y in envs:
        z = forward(params, X)[0][:, 0]
        total += env_logit_grad_stat(z, y) ** 2
    return total


def irm_loss(params: Params, envs: list[tuple[np.ndarray, np.ndarray]], lam: float):
    """mean over environments of [CE_e + lam * (d/dw CE_e at w=1)^2].

    Averaging (not summing) over environments keeps the lam=0 trajectory
    identical to pooled ERM when the environments coincide.
    """
    m = len(envs)
    loss = 0.0
    grads = zeros_like_params(params)
    for X, y in envs:
        n = X.shape[0]
        out, acts = forward(params, X)
        z = out[:, 0]
        s = sigmoid(z)
        ce = float(np.mean(softplus(z) - y * z))
        g = float(np.mean((s - y) * z))
        loss += (ce + lam * g * g) / m
        # dCE/dz = (s - y)/n ; dg/dz_i = (s'(z_i) z_i + s(z_i) - y_i)/n
        dz = (s - y) / n
        dz = dz + lam * 2.0 * g * (s * (1.0 - s) * z + s - y) / n
        dout = np.zeros_like(out)
        dout[:, 0] = dz / m
        add_grads(grads, backward(params, acts, dout))
    return loss, grads


# ---------------------------------------------------------------------------
# optimization and checking


def gd_minimize(loss_fn, params: Params, epochs: int, lr: float,
                checkpoint_every: int = 10, eval_fn=None,
                clip_norm: float | None = None, lr_decay: float = 0.0):
    """Full-batch gradient descent with an optional 1/(1+decay*t) step decay.

    clip_norm rescales the whole gradient when its global L2 norm exceeds the
    bound, which keeps heavily regularized objectives on a stable trajectory
    at the shared step size. A non-finite loss stops the run; the checkpoints
    gathered so far are kept and the last entry is flagged diverged.

    Returns (final params, checkpoints): each checkpoint is a dict with the
    epoch, a parameter snapshot, and whatever eval_fn reports.
    """
    params = copy_params(params)
    checkpoints = []

    def record(epoch):
        entry = {"epoch": epoch, "params": copy_params(params)}
        if eval_fn is not None:
            entry.update(eval_fn(params))
        checkpoints.append(entry)

    for epoch in range(1, epochs + 1):
        loss, grads = loss_fn(params)
        if not np.isfinite(loss):
            if checkpoints:
                checkpoints[-1]["diverged"] = True
            break
        if clip_norm is not None:
            gnorm = float(np.sqrt(sum(float(np.sum(gW * gW)) + float(np.sum(gb * gb))
                                      for gW, gb in grads)))
            if gnorm > clip_norm:
                scale = clip_norm / gnorm
                grads = [(gW * scale, gb * scale) for gW, gb in grads]
        step = lr / (1.0 + lr_decay * (epoch - 1))
        for (W, b), (gW, gb) in zip(params, grads):
            W -= step * gW
            b -= step * gb
        if epoch % checkpoint_every == 0 or epoch == epochs:
            record(epoch)
    return params, checkpoints


def finite_difference_check(loss_fn, params: Params, h: float = 1e-5) -> float:
    """Global relative error between analytic and central-difference gradients."""
    _, grads = loss_fn(params)
    g = flatten(grads)
    x0 = flatten(params)
    num = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy(); xp[i] += h
        xm = x0.copy(); xm[i] -= h
        fp = loss_fn(unflatten(xp, params))[0]
        fm = loss_fn(unflatten(xm, params))[0]
        num[i] = (fp - fm) / (2.0 * h)
    denom = np.linalg.norm(g) + np.linalg.norm(num)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(g - num) / denom)


def accuracy(params: Params, X: np.ndarray, y: np.ndarray) -> float:
    p = sigmoid(forward(params, X)[0][:, 0])
    return float(np.mean((p >= 0.5).astype(int) == y))


def predict_prob(params: Params, X: np.ndarray) -> np.ndarray:
    return sigmoid(forward(params, X)[0][:, 0])

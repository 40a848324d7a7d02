"""Empirical-risk minimization with mini-batch Adam and analytic gradients."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels, basis
from .data import Dataset, fit_quantile_transform
from .errors import ConfigError, DataError, NumericError
from .model import MONOTONE, AnovaTpnnModel, set_monotone

log = logging.getLogger(__name__)

LOSSES = ("squared", "logistic")
VALIDATION = ("none", "select-best-epoch")
CLIP_NORM = 10.0


@dataclass
class FitConfig:
    loss: str = "squared"
    learning_rate: float = 5e-3
    batch_size: int = 4096
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation: str = "select-best-epoch"
    monotone: dict = field(default_factory=dict)
    clip_norm: float = CLIP_NORM

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.validation not in VALIDATION:
            raise ConfigError(f"validation must be one of {VALIDATION}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        for key, direction in self.monotone.items():
            if direction not in MONOTONE:
                raise ConfigError(f"monotone direction for {key!r} must be one of {sorted(MONOTONE)}")


@dataclass
class FitReport:
    train_loss: list
    val_loss: list
    selected_epoch: int
    snapshot_id: str
    wall_clock_seconds: float
    epochs: int

    def to_dict(self, timestamp: bool = True) -> dict:
        d = asdict(self)
        if not timestamp:
            d.pop("wall_clock_seconds")
        return d

    def to_json(self, timestamp: bool = True) -> str:
        return json.dumps(self.to_dict(timestamp), indent=1) + "\n"


class Adam:
    """Adam over a dict of arrays, updated in place."""

    def __init__(self, lr=5e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            p -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def compute_loss(f, y, loss: str) -> float:
    # overflow surfaces as a non-finite loss, checked by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        if loss == "squared":
            return float(np.mean((y - f) ** 2))
        return float(np.mean(basis.softplus(f) - y * f))


def _dloss(f, y, loss: str, n_total: int):
    if loss == "squared":
        return -2.0 * (y - f) / n_total
    return (expit(f) - y) / n_total


def _block_constants(model):
    pre = {}
    for r in sorted(model.blocks):
        blk = model.blocks[r]
        b, rho = blk.full_theta()
        gamma, (eta, de_db, de_dg) = model.block_eta(blk, grad=True)
        pre[r] = (np.ascontiguousarray(b), gamma, eta, de_db, de_dg, blk.effective_beta())
    return pre


def _finish_grads(model, pre, acc, grads):
    for r, blk in model.blocks.items():
        b, gamma, eta, de_db, de_dg, beta = pre[r]
        d_beta, T0, T1, T2 = acc[r]
        d_b = T1 / gamma + T0 * de_db / eta
        d_gamma = T2 / gamma + T0 * de_dg / eta
        _, rho = blk.full_theta()
        d_rho = d_gamma * expit(rho)
        if blk.shared:
            d_b = d_b.sum(axis=(0, 2))
            d_rho = d_rho.sum(axis=(0, 2))
        code = blk.monotone[:, None]
        if np.any(code):
            sig = expit(blk.beta)
            d_beta = np.where(code == 0, d_beta, np.where(code > 0, -sig, sig) * d_beta)
        grads[f"beta{r}"] = d_beta
        grads[f"b{r}"] = d_b
        grads[f"rho{r}"] = d_rho
    return grads


def _loss_sum(f, y, loss):
    if loss == "squared":
        return float(np.sum((y - f) ** 2))
    return float(np.sum(basis.softplus(f) - y * f))


def loss_and_grad(model: AnovaTpnnModel, U, y, loss: str = "squared"):
    """Mean loss over a batch of transformed rows and its gradient.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.params()``.
    """
    U = np.ascontiguousarray(U, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = U.shape[0]
    if n == 0:
        raise DataError("empty batch")
    pre = _block_constants(model)
    f = np.full(n, model.beta0)
    sig = {}
    for r, blk in model.blocks.items():
        b, gamma, eta, _, _, beta = pre[r]
        sig[r] = np.empty((n,) + b.shape)
        _kernels.block_forward(U, blk.feats, b, 1.0 / gamma, 1.0 / eta, beta, f, sig[r])
    g = _dloss(f, y, loss, n)
    grads = {"beta0": np.array([g.sum()])}
    acc = {}
    for r, blk in model.blocks.items():
        b, gamma, eta, _, _, beta = pre[r]
        d_beta = np.zeros_like(beta)
        T = [np.zeros_like(b) for _ in range(3)]
        _kernels.block_backward(
            U, blk.feats, b, 1.0 / gamma, 1.0 / eta, beta, g, sig[r], d_beta, *T
        )
        acc[r] = (d_beta, *T)
    return _loss_sum(f, y, loss) / n, _finish_grads(model, pre, acc, grads)


def loss_and_grad_reference(model: AnovaTpnnModel, U, y, loss: str = "squared"):
    """Array-expression version of :func:`loss_and_grad` used to cross-check it."""
    U = np.asarray(U, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = U.shape[0]
    if n == 0:
        raise DataError("empty batch")
    pre = _block_constants(model)
    f = np.full(n, model.beta0)
    cache = {}
    for r, blk in model.blocks.items():
        b, gamma, eta, _, _, beta = pre[r]
        z = (U[:, blk.feats][:, :, None, :] - b) / gamma
        s = expit(z)
        phi = 1.0 - s / eta
        Phi = np.prod(phi, axis=-1)
        f += np.einsum("nck,ck->n", Phi, beta)
        cache[r] = (z, s, phi, Phi)
    g = _dloss(f, y, loss, n)
    grads = {"beta0": np.array([g.sum()])}
    acc = {}
    for r, blk in model.blocks.items():
        b, gamma, eta, _, _, beta = pre[r]
        z, s, phi, Phi = cache[r]
        G = g[:, None, None] * beta[None]
        if r == 1:
            other = 1.0
        else:
            other = np.stack(
                [np.prod(np.delete(phi, j, axis=-1), axis=-1) for j in range(r)], axis=-1
            )
        A = (G[..., None] * other) * (s / eta)
        om = A * (1.0 - s)
        acc[r] = (np.einsum("nck,n->ck", Phi, g), A.sum(0), om.sum(0), (om * z).sum(0))
    return _loss_sum(f, y, loss) / n, _finish_grads(model, pre, acc, grads)


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _snapshot_id(params: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()[:16]


def _monotone_key(key):
    if isinstance(key, (int, np.integer)):
        return (int(key),)
    return tuple(int(v) for v in key)


def enforce_monotone(model: AnovaTpnnModel, feature, direction: str):
    """Apply a monotonicity directive to the main effect of ``feature``."""
    set_monotone(model, _monotone_key(feature), direction)


def _initial_intercept(y, link):
    if link == "logit":
        rate = float(np.clip(np.mean(y), 1e-6, 1 - 1e-6))
        return math.log(rate / (1.0 - rate))
    return float(np.mean(y))


def train(
    model: AnovaTpnnModel,
    train: Dataset,
    val: Dataset | None = None,
    cfg: FitConfig | None = None,
    fit_transform: bool = True,
    init_intercept: bool = True,
):
    """Fit ``model`` on ``train``; returns ``(fitted_model, FitReport)``.

    The input model is not modified. When the model has no rank transform
    and ``fit_transform`` is set, one is fitted on the training features.
    With ``cfg.validation == "select-best-epoch"`` and a validation set, the
    returned parameters are those of the epoch with the lowest validation
    loss.
    """
    cfg = cfg or FitConfig()
    start = time.perf_counter()
    if train.p != model.n_features:
        raise DataError(f"model expects {model.n_features} features, data has {train.p}")
    if val is not None and val.p != model.n_features:
        raise DataError(f"model expects {model.n_features} features, validation has {val.p}")
    if cfg.loss == "logistic":
        if model.link != "logit":
            raise ConfigError("logistic loss requires the logit link")
        train.check_binary()
    model = copy.deepcopy(model)
    for key, direction in cfg.monotone.items():
        enforce_monotone(model, key, direction)
    if model.transformer is None and fit_transform:
        model.transformer = fit_quantile_transform(train.features)
    if init_intercept:
        model.beta0 = _initial_intercept(train.target, model.link)
    U = model.transform(train.features)
    y = train.target
    Uv = model.transform(val.features) if val is not None else None

    f0 = model.forward_t(U)
    if not math.isfinite(compute_loss(f0, y, cfg.loss)):
        raise NumericError("non-finite loss at initialization")

    params = model.params()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    select = cfg.validation == "select-best-epoch" and val is not None
    best, best_loss, best_epoch = None, math.inf, 0
    train_hist, val_hist = [], []
    n = U.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        batch_losses, weights = [], []
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            loss, grads = loss_and_grad(model, U[idx], y[idx], cfg.loss)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss in epoch {epoch}")
            clip_gradients(grads, cfg.clip_norm)
            opt.step(params, grads)
            model.beta0 = float(params["beta0"][0])
            batch_losses.append(loss)
            weights.append(idx.size)
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        train_hist.append(float(np.average(batch_losses, weights=weights)))
        if Uv is not None:
            vl = compute_loss(model.forward_t(Uv), val.target, cfg.loss)
            val_hist.append(vl)
            if select and vl < best_loss:
                best_loss, best_epoch, best = vl, epoch, model.copy_params()
            log.info("epoch=%d train_loss=%.6g val_loss=%.6g", epoch, train_hist[-1], vl)
        else:
            log.info("epoch=%d train_loss=%.6g", epoch, train_hist[-1])
    if select and best is not None:
        model.set_params(best)
        selected = best_epoch
    else:
        selected = cfg.max_epochs
    params = model.params()
    report = FitReport(
        train_loss=train_hist,
        val_loss=val_hist,
        selected_epoch=selected,
        snapshot_id=_snapshot_id(params),
        wall_clock_seconds=time.perf_counter() - start,
        epochs=cfg.max_epochs,
    )
    return model, report

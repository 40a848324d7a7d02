"""Component-wise interpretation: SHAP, importance, stability, purification, AUROC."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import rankdata

from .errors import ConfigError, DataError
from .model import AnovaTpnnModel

DEFAULT_GRID = 201
_MAX_POINTS = 1 << 20


def _key(S) -> str:
    return ",".join(str(j + 1) for j in S)


# ---------------------------------------------------------------------------
# ANOVA-SHAP


@dataclass
class Attribution:
    shap: np.ndarray
    contributions: dict
    beta0: float
    prediction: float

    def to_dict(self) -> dict:
        return {
            "shap": [float(v) for v in self.shap],
            "components": {_key(S): float(v) for S, v in self.contributions.items()},
            "beta0": self.beta0,
            "prediction": self.prediction,
            "sum": float(np.sum(self.shap)),
            "prediction_minus_beta0": self.prediction - self.beta0,
        }


def shap_weights(model: AnovaTpnnModel) -> np.ndarray:
    """``(n_components, p)`` matrix spreading each component evenly over its features."""
    sets = model.component_sets
    W = np.zeros((len(sets), model.n_features))
    for c, S in enumerate(sets):
        W[c, list(S)] = 1.0 / len(S)
    return W


def anova_shap_matrix(model: AnovaTpnnModel, X_raw):
    """SHAP values ``(n, p)`` and component contributions ``(n, C)`` for many rows."""
    M = model.component_matrix(X_raw)
    return M @ shap_weights(model), M


def anova_shap(model: AnovaTpnnModel, x_raw) -> Attribution:
    """SHAP attribution of one row from the sum-to-zero decomposition.

    Each component's value is split evenly among the features it involves.
    """
    x = np.asarray(x_raw, dtype=np.float64).reshape(1, -1)
    shap, M = anova_shap_matrix(model, x)
    contrib = dict(zip(model.component_sets, M[0].tolist()))
    pred = float(model.beta0 + M[0].sum())
    return Attribution(shap[0], contrib, float(model.beta0), pred)


# ---------------------------------------------------------------------------
# importance


@dataclass
class ImportanceTable:
    components: list
    labels: list
    raw: np.ndarray
    normalized: np.ndarray

    def as_dict(self) -> dict:
        return dict(zip(self.components, self.raw.tolist()))

    def to_dict(self) -> dict:
        return {
            "components": [
                {"S": [j + 1 for j in S], "label": lab, "raw": float(r), "normalized": float(z)}
                for S, lab, r, z in zip(self.components, self.labels, self.raw, self.normalized)
            ]
        }

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "raw", "normalized"])
            for lab, r, z in zip(self.labels, self.raw, self.normalized):
                w.writerow([lab, repr(float(r)), repr(float(z))])


def importance_scores(model: AnovaTpnnModel, X_ref) -> ImportanceTable:
    """Mean absolute value of every component over reference rows."""
    X_ref = np.asarray(X_ref, dtype=np.float64)
    if X_ref.ndim != 2 or X_ref.shape[0] == 0:
        raise DataError("importance needs a non-empty reference set")
    raw = np.abs(model.component_matrix(X_ref)).mean(axis=0)
    top = raw.max()
    normalized = raw / top if top > 0 else np.zeros_like(raw)
    sets = model.component_sets
    return ImportanceTable(sets, [model.label(S) for S in sets], raw, normalized)


def selection_auroc(scores, truth) -> float:
    """Rank AUROC of importance scores against signal labels, ties counted 1/2.

    ``scores`` is an :class:`ImportanceTable` or a mapping ``S -> score``.
    """
    if isinstance(scores, ImportanceTable):
        scores = scores.as_dict()
    truth = {tuple(S) for S in truth}
    keys = list(scores)
    vals = np.array([scores[S] for S in keys], dtype=np.float64)
    labels = np.array([tuple(S) in truth for S in keys])
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("AUROC needs both signal and null components")
    ranks = rankdata(vals)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    per_component: dict
    overall: float
    overall_cardinality: float
    runs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_component": {_key(S): v for S, v in self.per_component.items()},
            "overall": self.overall,
            "overall_cardinality": self.overall_cardinality,
            "runs": self.runs,
        }


def stability_from_values(values, sets, tol: float = 1e-24):
    """Stability scores from stacked component values ``(m, n, C)``."""
    V = np.asarray(values, dtype=np.float64)
    if V.ndim != 3 or V.shape[0] < 2:
        raise ConfigError("stability needs values from at least 2 runs")
    # deviations taken relative to the first run so identical runs give exactly 0
    D = V - V[0]
    num = ((D - D.mean(axis=0)) ** 2).sum(axis=0)
    den = (V**2).sum(axis=0)
    keep = den >= tol
    ratio = np.where(keep, num / np.where(keep, den, 1.0), 0.0)
    counts = keep.sum(axis=0)
    sc = np.where(counts > 0, ratio.sum(axis=0) / np.maximum(counts, 1), 0.0)
    per = {S: float(v) for S, v in zip(sets, sc)}
    overall = float(np.mean(sc))
    card = float(sum(v / len(S) for S, v in per.items()))
    return per, overall, card


def stability_score(runs, eval_rows, metadata=None) -> StabilityReport:
    """Across-run stability of each component at fixed evaluation rows.

    Points where every run's component value is (numerically) zero are
    skipped. ``overall`` is the mean over components; ``overall_cardinality``
    sums each score divided by its component's cardinality.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ConfigError("stability needs at least 2 fitted models")
    eval_rows = np.asarray(eval_rows, dtype=np.float64)
    if eval_rows.ndim != 2 or eval_rows.shape[0] == 0:
        raise DataError("stability needs non-empty evaluation rows")
    sets = runs[0].component_sets
    for m in runs[1:]:
        if m.component_sets != sets:
            raise ConfigError("runs do not share the same component structure")
    V = np.stack([m.component_matrix(eval_rows) for m in runs])
    per, overall, card = stability_from_values(V, sets)
    return StabilityReport(per, overall, card, list(metadata or []))


# ---------------------------------------------------------------------------
# purification


@dataclass
class Decomposition:
    """``beta0 + sum_S f_S(x_S)`` with each ``f_S`` a callable on ``(n, |S|)`` arrays."""

    beta0: float
    components: dict

    @property
    def order(self) -> int:
        return max((len(S) for S in self.components), default=0)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(X.shape[0], self.beta0)
        for S, f in self.components.items():
            out = out + f(X[:, list(S)])
        return out

    def evaluate(self, S, X_S) -> np.ndarray:
        return self.components[tuple(S)](np.asarray(X_S, dtype=np.float64).reshape(-1, len(S)))


def model_decomposition(model: AnovaTpnnModel) -> Decomposition:
    """The model's components as callables on rank-transformed coordinates."""

    def make(S):
        return lambda XS: model.component_t(S, XS)

    return Decomposition(float(model.beta0), {S: make(S) for S in model.component_sets})


def tabulated_component(axes, values) -> Callable:
    """Piecewise-linear interpolant of a component tabulated on a tensor grid."""
    axes = [np.asarray(a, dtype=np.float64) for a in axes]
    values = np.asarray(values, dtype=np.float64)
    if values.shape != tuple(a.size for a in axes):
        raise DataError("tabulated values do not match grid axes")
    if len(axes) == 1:
        return lambda XS: np.interp(np.asarray(XS)[:, 0], axes[0], values)
    interp = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)
    return lambda XS: interp(np.asarray(XS, dtype=np.float64))


class Quadrature:
    """Per-axis nodes and weights of a product reference measure.

    ``Quadrature.grid(G)`` is a ``G``-point rule for the uniform measure on
    [0, 1] (Gauss-Legendre by default, or midpoint); ``Quadrature.rows(X)``
    uses each column of ``X`` as an equally weighted empirical marginal.
    """

    def __init__(self, rule):
        self._rule = rule

    @classmethod
    def grid(cls, points: int = DEFAULT_GRID, kind: str = "gauss"):
        if points < 1:
            raise DataError("empty quadrature")
        if kind == "gauss":
            x, w = np.polynomial.legendre.leggauss(points)
            nodes, weights = (x + 1.0) / 2.0, w / 2.0
        elif kind == "midpoint":
            nodes = (np.arange(points) + 0.5) / points
            weights = np.full(points, 1.0 / points)
        else:
            raise ConfigError(f"unknown quadrature kind {kind!r}")
        return cls(lambda j: (nodes, weights))

    @classmethod
    def rows(cls, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataError("empty quadrature")
        w = np.full(X.shape[0], 1.0 / X.shape[0])
        return cls(lambda j: (X[:, j], w))

    def axis(self, j):
        return self._rule(j)

    def mean(self, f, S) -> float:
        """Integral of ``f_S`` over the product measure on its axes."""
        rules = [self.axis(j) for j in S]
        mesh = np.meshgrid(*[n for n, _ in rules], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = f(pts).reshape(mesh[0].shape)
        for _, w in reversed(rules):
            vals = vals @ w
        return float(vals)


def _as_quadrature(quadrature):
    if isinstance(quadrature, Quadrature):
        return quadrature
    if np.ndim(quadrature) == 0:
        return Quadrature.grid(int(quadrature))
    return Quadrature.rows(quadrature)


def _axis_mean(f, axis, nodes, weights):
    """Function of the other coordinate: mean of a pair component over ``axis``."""
    G = nodes.size

    def mean_fn(v):
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        out = np.empty(v.size)
        step = max(1, _MAX_POINTS // G)
        for lo in range(0, v.size, step):
            chunk = v[lo : lo + step]
            pts = np.empty((chunk.size * G, 2))
            pts[:, axis] = np.tile(nodes, chunk.size)
            pts[:, 1 - axis] = np.repeat(chunk, G)
            out[lo : lo + step] = f(pts).reshape(chunk.size, G) @ weights
        return out

    return mean_fn


def purify(components, beta0: float = 0.0, quadrature=DEFAULT_GRID) -> Decomposition:
    """Rewrite an additive decomposition so every component integrates to zero.

    Parameters
    ----------
    components : dict or Decomposition
        Mapping from feature-index tuple ``S`` to a callable evaluating
        ``f_S`` on an ``(n, |S|)`` array. Orders up to 2 are supported.
    beta0 : float
        Intercept (ignored when a :class:`Decomposition` is passed).
    quadrature : int, array or Quadrature
        Grid size for the uniform measure on [0, 1], or data rows whose
        columns define empirical marginals.

    Pair components lose both single-axis conditional means, which move
    into the main effects (created when absent), and the double mean moves
    into the intercept. Main effects are then centered the same way. The
    total function is unchanged.
    """
    if isinstance(components, Decomposition):
        beta0, components = components.beta0, components.components
    comps = {tuple(int(v) for v in S): f for S, f in components.items()}
    if any(len(S) > 2 for S in comps):
        raise ConfigError("purification supports components of order at most 2")
    quad = _as_quadrature(quadrature)
    b0 = float(beta0)
    out = {}
    pushed = {}
    for S in sorted((S for S in comps if len(S) == 2)):
        f = comps[S]
        (na, wa), (nb, wb) = quad.axis(S[0]), quad.axis(S[1])
        full = quad.mean(f, S)
        over_a = _axis_mean(f, 0, na, wa)  # function of x_b
        over_b = _axis_mean(f, 1, nb, wb)  # function of x_a

        def pure(XS, f=f, over_a=over_a, over_b=over_b, full=full):
            return f(XS) - over_b(XS[:, 0]) - over_a(XS[:, 1]) + full

        out[S] = pure
        pushed.setdefault(S[0], []).append((over_b, full))
        pushed.setdefault(S[1], []).append((over_a, full))
        b0 += full
    mains = sorted({S[0] for S in comps if len(S) == 1} | set(pushed))
    for j in mains:
        f_j = comps.get((j,))
        extra = tuple(pushed.get(j, ()))

        def g(XS, f_j=f_j, extra=extra):
            XS = np.asarray(XS, dtype=np.float64).reshape(-1, 1)
            val = f_j(XS) if f_j is not None else np.zeros(XS.shape[0])
            for fn, full in extra:
                val = val + (fn(XS[:, 0]) - full)
            return val

        nodes, w = quad.axis(j)
        mean_j = float(g(nodes[:, None]) @ w)
        out[(j,)] = lambda XS, g=g, mean_j=mean_j: g(XS) - mean_j
        b0 += mean_j
    ordered = dict(sorted(out.items(), key=lambda kv: (len(kv[0]), kv[0])))
    return Decomposition(b0, ordered)


def axis_conditional_means(decomp: Decomposition, quadrature=DEFAULT_GRID) -> dict:
    """Largest absolute single-axis conditional mean of every component.

    Conditional means are taken with the quadrature rule at the quadrature
    nodes of the remaining axis; zero for components satisfying the
    sum-to-zero condition.
    """
    quad = _as_quadrature(quadrature)
    out = {}
    for S, f in decomp.components.items():
        if len(S) == 1:
            nodes, w = quad.axis(S[0])
            out[S] = abs(float(f(nodes[:, None]) @ w))
        else:
            (na, wa), (nb, wb) = quad.axis(S[0]), quad.axis(S[1])
            A, B = np.meshgrid(na, nb, indexing="ij")
            F = f(np.stack([A.ravel(), B.ravel()], axis=1)).reshape(A.shape)
            out[S] = float(max(np.max(np.abs(wa @ F)), np.max(np.abs(F @ wb))))
    return out


def to_json(obj) -> str:
    return json.dumps(obj.to_dict(), indent=1) + "\n"

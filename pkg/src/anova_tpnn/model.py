"""ANOVA-TPNN and NBM-TPNN models.

Components of equal cardinality ``r`` are stored together in a
:class:`Block` so evaluation is a handful of array operations:

* ``feats``  ``(C, r)`` 0-based feature indices of each component,
* ``beta``   ``(C, K)`` coefficients, or the unconstrained ``w`` of a
  monotone main effect,
* ``b, rho`` ``(C, K, r)`` basis parameters; in ``nbm-shared`` mode a single
  ``(K,)`` bank shared by every component and coordinate of the block.

Feature indices are 0-based in the Python API and 1-based in model files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import basis
from .basis import BasisParam, gamma_from_rho, softplus
from .data import QuantileTransformer, apply_transform
from .errors import ConfigError, DataError

SCHEMA_VERSION = 1
MODES = ("independent", "nbm-shared")
LINKS = ("identity", "logit")
MEASURES = ("uniform", "empirical")
MONOTONE = {"none": 0, "increasing": 1, "decreasing": -1}
_MONO_NAMES = {0: "none", 1: "inc", -1: "dec"}
_MONO_CODES = {"none": 0, "inc": 1, "dec": -1, "increasing": 1, "decreasing": -1}
INIT_GAMMA = 0.1
CHUNK_ROWS = 2048


@dataclass
class Block:
    order: int
    K: int
    feats: np.ndarray
    beta: np.ndarray
    b: np.ndarray
    rho: np.ndarray
    monotone: np.ndarray
    shared: bool = False

    @property
    def n_components(self) -> int:
        return self.feats.shape[0]

    def effective_beta(self) -> np.ndarray:
        """Coefficients after the sign-restricting reparameterization."""
        if not np.any(self.monotone):
            return self.beta
        sp = softplus(self.beta)
        code = self.monotone[:, None]
        return np.where(code == 0, self.beta, np.where(code > 0, -sp, sp))

    def full_theta(self):
        """``b`` and ``rho`` broadcast to ``(C, K, r)``."""
        if not self.shared:
            return self.b, self.rho
        shape = (self.n_components, self.K, self.order)
        return (
            np.broadcast_to(self.b[None, :, None], shape),
            np.broadcast_to(self.rho[None, :, None], shape),
        )


@dataclass(frozen=True)
class Component:
    """Read-only view of one component ``f_S``."""

    S: tuple
    K: int
    betas: np.ndarray
    thetas: tuple
    monotone: str


@dataclass
class AnovaTpnnModel:
    n_features: int
    order: int
    blocks: dict
    beta0: float = 0.0
    mode: str = "independent"
    link: str = "identity"
    transformer: QuantileTransformer | None = None
    measure: str = "uniform"
    marginals: np.ndarray | None = None
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.feature_names:
            self.feature_names = [f"x{j + 1}" for j in range(self.n_features)]
        self._reindex()

    def _reindex(self):
        self._index = {}
        for r in sorted(self.blocks):
            for i, row in enumerate(self.blocks[r].feats):
                self._index[tuple(int(v) for v in row)] = (r, i)

    # -- structure ---------------------------------------------------------

    @property
    def component_sets(self) -> list:
        return list(self._index)

    @property
    def components(self) -> list:
        out = []
        for S, (r, i) in self._index.items():
            blk = self.blocks[r]
            b, rho = blk.full_theta()
            thetas = tuple(
                tuple(BasisParam(float(b[i, k, j]), float(rho[i, k, j])) for j in range(r))
                for k in range(blk.K)
            )
            code = int(blk.monotone[i])
            out.append(
                Component(S, blk.K, blk.effective_beta()[i].copy(), thetas, _MONO_NAMES[code])
            )
        return out

    def has_component(self, S) -> bool:
        return tuple(S) in self._index

    def locate(self, S):
        S = tuple(int(v) for v in S)
        try:
            return self._index[S]
        except KeyError:
            raise ConfigError(f"model has no component {label(S)}") from None

    def label(self, S) -> str:
        return ":".join(self.feature_names[j] for j in S)

    def params(self) -> dict:
        """Live references to every learnable array, keyed by name."""
        out = {"beta0": np.array([self.beta0])}
        for r in sorted(self.blocks):
            blk = self.blocks[r]
            out[f"beta{r}"] = blk.beta
            out[f"b{r}"] = blk.b
            out[f"rho{r}"] = blk.rho
        return out

    def set_params(self, params: dict):
        self.beta0 = float(params["beta0"][0])
        for r, blk in self.blocks.items():
            blk.beta[...] = params[f"beta{r}"]
            blk.b[...] = params[f"b{r}"]
            blk.rho[...] = params[f"rho{r}"]

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params().items()}

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())

    # -- evaluation --------------------------------------------------------

    def transform(self, X_raw) -> np.ndarray:
        X = np.asarray(X_raw, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        if self.transformer is None:
            return X
        return apply_transform(self.transformer, X)

    def block_eta(self, blk: Block, grad: bool = False):
        b, rho = blk.full_theta()
        gamma = gamma_from_rho(rho)
        if self.measure == "uniform":
            res = basis.eta_uniform(b, gamma, grad=grad)
        else:
            samples = self.marginals[blk.feats][:, None, :, :]
            res = basis.eta_empirical(b, gamma, samples, grad=grad)
        return gamma, res

    def block_basis(self, U, blk: Block):
        """Tensor-product basis values ``(n, C, K)`` of a block at transformed rows."""
        b, rho = blk.full_theta()
        gamma, eta = self.block_eta(blk)
        xs = U[:, blk.feats][:, :, None, :]
        return np.prod(basis.phi_values(xs, b, gamma, eta), axis=-1)

    def component_matrix_t(self, U) -> np.ndarray:
        """Per-component values ``(n, n_components)`` at transformed rows.

        Columns follow :attr:`component_sets`.
        """
        U = np.asarray(U, dtype=np.float64)
        out = np.empty((U.shape[0], len(self._index)))
        col = 0
        for r in sorted(self.blocks):
            blk = self.blocks[r]
            beta = blk.effective_beta()
            for lo in range(0, U.shape[0], CHUNK_ROWS):
                phi = self.block_basis(U[lo : lo + CHUNK_ROWS], blk)
                out[lo : lo + CHUNK_ROWS, col : col + blk.n_components] = np.einsum(
                    "nck,ck->nc", phi, beta
                )
            col += blk.n_components
        return out

    def forward_t(self, U) -> np.ndarray:
        return self.beta0 + self.component_matrix_t(U).sum(axis=1)

    def component_matrix(self, X_raw) -> np.ndarray:
        return self.component_matrix_t(self.transform(X_raw))

    def forward(self, X_raw):
        """Link-scale prediction. A single row returns a float."""
        single = np.ndim(X_raw) == 1
        out = self.forward_t(self.transform(X_raw))
        return float(out[0]) if single else out

    def predict(self, X_raw):
        """Mean prediction: link-scale for identity, probability for logit."""
        f = self.forward(X_raw)
        return basis.sigmoid(f) if self.link == "logit" else f

    def eval_component(self, S, X_raw):
        single = np.ndim(X_raw) == 1
        r, i = self.locate(S)
        blk = self.blocks[r]
        U = self.transform(X_raw)
        phi = self.block_basis(U, _sub_block(blk, i))
        out = phi[:, 0, :] @ blk.effective_beta()[i]
        return float(out[0]) if single else out

    def component_t(self, S, U_S):
        """Evaluate ``f_S`` at transformed coordinates ``U_S`` of shape ``(n, |S|)``."""
        r, i = self.locate(S)
        blk = self.blocks[r]
        U_S = np.asarray(U_S, dtype=np.float64).reshape(-1, r)
        U = np.zeros((U_S.shape[0], self.n_features))
        U[:, list(blk.feats[i])] = U_S
        phi = self.block_basis(U, _sub_block(blk, i))
        return phi[:, 0, :] @ blk.effective_beta()[i]

    def component_grid(self, S, axes) -> np.ndarray:
        """Evaluate ``f_S`` on the tensor grid spanned by per-axis transformed points.

        Exploits separability: returns an array of shape
        ``(len(axes[0]), ..., len(axes[-1]))``.
        """
        r, i = self.locate(S)
        if len(axes) != r:
            raise ConfigError(f"component {S} needs {r} axes, got {len(axes)}")
        blk = self.blocks[r]
        b, rho = blk.full_theta()
        gamma, eta = self.block_eta(blk)
        factors = []
        for j, pts in enumerate(axes):
            pts = np.asarray(pts, dtype=np.float64)[:, None]
            factors.append(basis.phi_values(pts, b[i, :, j], gamma[i, :, j], eta[i, :, j]))
        beta = blk.effective_beta()[i]
        letters = "abcdefgh"[:r]
        expr = ",".join(f"{c}k" for c in letters) + ",k->" + letters
        return np.einsum(expr, *factors, beta, optimize=True)


def _sub_block(blk: Block, i: int) -> Block:
    b, rho = blk.full_theta()
    return Block(
        blk.order,
        blk.K,
        blk.feats[i : i + 1],
        blk.beta[i : i + 1],
        b[i : i + 1],
        rho[i : i + 1],
        blk.monotone[i : i + 1],
    )


def label(S) -> str:
    return "{" + ",".join(str(j + 1) for j in S) + "}"


def _normalize_components(p, d, components) -> list:
    if isinstance(components, str):
        if components != "all":
            raise ConfigError(f"components must be 'all' or a list of feature sets, got {components!r}")
        out = []
        for r in range(1, d + 1):
            out.extend(combinations(range(p), r))
        return out
    out, seen = [], set()
    for S in components:
        S = tuple(sorted(int(v) for v in S))
        if not S:
            raise ConfigError("empty feature set in component list")
        if len(set(S)) != len(S):
            raise ConfigError(f"repeated feature in component {label(S)}")
        if S in seen:
            raise ConfigError(f"duplicate component {label(S)}")
        if len(S) > d:
            raise ConfigError(f"component {label(S)} exceeds order d={d}")
        if S[0] < 0 or S[-1] >= p:
            raise ConfigError(f"component {label(S)} references a feature outside 1..{p}")
        seen.add(S)
        out.append(S)
    if not out:
        raise ConfigError("empty component list")
    return sorted(out, key=lambda S: (len(S), S))


def _resolve_K(K, orders) -> dict:
    if isinstance(K, dict):
        out = {int(r): int(v) for r, v in K.items()}
        missing = [r for r in orders if r not in out]
        if missing:
            raise ConfigError(f"no basis count K given for order(s) {missing}")
    else:
        out = {r: int(K) for r in orders}
    for r in orders:
        if out[r] < 1:
            raise ConfigError("K must be >= 1")
    return {r: out[r] for r in orders}


def build_model(
    p: int,
    d: int,
    components="all",
    K=30,
    mode: str = "independent",
    link: str = "identity",
    seed: int = 0,
    transformer: QuantileTransformer | None = None,
    measure: str = "uniform",
    marginals=None,
    feature_names=None,
) -> AnovaTpnnModel:
    """Build a randomly initialized model.

    Parameters
    ----------
    p : int
        Number of input features.
    d : int
        Maximum interaction order.
    components : "all" or iterable of feature-index tuples (0-based)
        ``"all"`` includes every subset of size at most ``d``.
    K : int or dict
        Basis count, either shared or per cardinality.
    mode : {"independent", "nbm-shared"}
        ``nbm-shared`` shares one basis bank per cardinality.
    link : {"identity", "logit"}
    measure : {"uniform", "empirical"}
        Reference measure of the sum-to-zero condition. ``empirical`` needs
        ``marginals``, a ``(p, m)`` array of per-feature samples.
    """
    if d < 1:
        raise ConfigError("order d must be >= 1")
    if p < 1:
        raise ConfigError("p must be >= 1")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if link not in LINKS:
        raise ConfigError(f"link must be one of {LINKS}")
    if measure not in MEASURES:
        raise ConfigError(f"measure must be one of {MEASURES}")
    if measure == "empirical":
        if marginals is None:
            raise ConfigError("empirical measure requires marginal samples")
        marginals = np.asarray(marginals, dtype=np.float64)
        if marginals.ndim != 2 or marginals.shape[0] != p:
            raise ConfigError("marginals must have shape (p, m)")
    sets = _normalize_components(p, d, components)
    orders = sorted({len(S) for S in sets})
    Ks = _resolve_K(K, orders)
    rng = np.random.default_rng(seed)
    rho0 = float(basis.rho_from_gamma(INIT_GAMMA))
    blocks = {}
    for r in orders:
        feats = np.array([S for S in sets if len(S) == r], dtype=np.int64).reshape(-1, r)
        C, k = feats.shape[0], Ks[r]
        shape = (k,) if mode == "nbm-shared" else (C, k, r)
        b = rng.uniform(0.0, 1.0, size=shape)
        rho = np.full(shape, rho0)
        beta = rng.uniform(-0.01, 0.01, size=(C, k))
        blocks[r] = Block(r, k, feats, beta, b, rho, np.zeros(C, dtype=np.int8), mode == "nbm-shared")
    return AnovaTpnnModel(
        p, d, blocks, 0.0, mode, link, transformer, measure, marginals,
        list(feature_names) if feature_names else [],
    )


def set_monotone(model: AnovaTpnnModel, S, direction: str):
    """Restrict the sign of a main effect's coefficients.

    ``increasing`` uses ``beta = -softplus(w)``: every basis is
    non-increasing in x, so a non-positive combination is non-decreasing.
    ``decreasing`` uses ``beta = +softplus(w)``. The current coefficients are
    mapped to the nearest admissible values.
    """
    S = tuple(S) if not isinstance(S, (int, np.integer)) else (int(S),)
    if direction not in MONOTONE:
        raise ConfigError(f"monotone direction must be one of {sorted(MONOTONE)}")
    if len(S) != 1:
        raise ConfigError(f"monotone requires main effect; got component {label(S)}")
    if not model.has_component(S):
        raise ConfigError(f"monotone requires main effect; model has no component {label(S)}")
    r, i = model.locate(S)
    blk = model.blocks[r]
    code = MONOTONE[direction]
    current = int(blk.monotone[i])
    if code == current:
        return
    beta = blk.effective_beta()[i].copy()
    if code == 0:
        blk.beta[i] = beta
    else:
        mag = np.maximum(np.abs(beta), 1e-8)
        blk.beta[i] = mag + np.log(-np.expm1(-mag))
    blk.monotone[i] = code


# ---------------------------------------------------------------------------
# persistence


def _payload(m: AnovaTpnnModel) -> dict:
    comps = []
    for S, (r, i) in m._index.items():
        blk = m.blocks[r]
        entry = {
            "S": [j + 1 for j in S],
            "K": blk.K,
            "beta": blk.effective_beta()[i].tolist(),
            "monotone": _MONO_NAMES[int(blk.monotone[i])],
        }
        if blk.monotone[i]:
            entry["w"] = blk.beta[i].tolist()
        if not blk.shared:
            entry["theta"] = [
                [
                    {"feature": int(S[j]) + 1, "b": float(blk.b[i, k, j]), "rho": float(blk.rho[i, k, j])}
                    for j in range(r)
                ]
                for k in range(blk.K)
            ]
        comps.append(entry)
    out = {
        "schema": SCHEMA_VERSION,
        "link": m.link,
        "mode": m.mode,
        "d": m.order,
        "n_features": m.n_features,
        "feature_names": list(m.feature_names),
        "measure": m.measure,
        "beta0": float(m.beta0),
        "transformer": m.transformer.to_dict() if m.transformer is not None else None,
        "components": comps,
    }
    if m.mode == "nbm-shared":
        out["theta_bank"] = {
            str(r): {"K": blk.K, "b": blk.b.tolist(), "rho": blk.rho.tolist()}
            for r, blk in sorted(m.blocks.items())
        }
    if m.measure == "empirical":
        out["marginals"] = m.marginals.tolist()
    return out


def _checksum(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def model_to_json(m: AnovaTpnnModel) -> str:
    payload = _payload(m)
    payload["checksum"] = _checksum(payload)
    return json.dumps(payload, indent=1) + "\n"


def save_model(m: AnovaTpnnModel, path):
    Path(path).write_text(model_to_json(m), encoding="utf-8")


def model_from_json(text: str) -> AnovaTpnnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed model file: {exc}") from None
    if not isinstance(doc, dict) or "schema" not in doc:
        raise DataError("malformed model file: no schema field")
    if doc["schema"] != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {doc['schema']!r}; expected {SCHEMA_VERSION}")
    stored = doc.pop("checksum", None)
    if stored is None:
        raise DataError("malformed model file: no checksum")
    if _checksum(doc) != stored:
        raise DataError("model file checksum mismatch")
    try:
        return _from_payload(doc)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"malformed model file: {exc!r}") from None


def _from_payload(doc: dict) -> AnovaTpnnModel:
    shared = doc["mode"] == "nbm-shared"
    by_order = {}
    for c in doc["components"]:
        S = tuple(j - 1 for j in c["S"])
        by_order.setdefault(len(S), []).append(c)
    blocks = {}
    for r, comps in sorted(by_order.items()):
        K = int(comps[0]["K"])
        C = len(comps)
        feats = np.array([[j - 1 for j in c["S"]] for c in comps], dtype=np.int64).reshape(C, r)
        mono = np.array([_MONO_CODES[c["monotone"]] for c in comps], dtype=np.int8)
        beta = np.array([c["w"] if c["monotone"] != "none" else c["beta"] for c in comps], dtype=np.float64)
        if beta.shape != (C, K):
            raise ValueError(f"beta shape {beta.shape} for order {r}")
        if shared:
            bank = doc["theta_bank"][str(r)]
            b = np.array(bank["b"], dtype=np.float64)
            rho = np.array(bank["rho"], dtype=np.float64)
            if b.shape != (K,) or rho.shape != (K,):
                raise ValueError("theta bank shape")
        else:
            b = np.empty((C, K, r))
            rho = np.empty((C, K, r))
            for i, c in enumerate(comps):
                if len(c["theta"]) != K:
                    raise ValueError("theta count")
                for k, group in enumerate(c["theta"]):
                    if [t["feature"] for t in group] != list(c["S"]):
                        raise ValueError("theta features do not match S")
                    for j, t in enumerate(group):
                        b[i, k, j] = t["b"]
                        rho[i, k, j] = t["rho"]
        blocks[r] = Block(r, K, feats, beta, b, rho, mono, shared)
    tr = doc.get("transformer")
    marg = doc.get("marginals")
    return AnovaTpnnModel(
        int(doc["n_features"]),
        int(doc["d"]),
        blocks,
        float(doc["beta0"]),
        doc["mode"],
        doc["link"],
        QuantileTransformer.from_dict(tr) if tr is not None else None,
        doc.get("measure", "uniform"),
        np.array(marg, dtype=np.float64) if marg is not None else None,
        list(doc.get("feature_names") or []),
    )


def load_model(path) -> AnovaTpnnModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"model file not found: {path}")
    return model_from_json(path.read_text(encoding="utf-8"))

"""Synthetic-benchmark experiments: selection, prediction, stability, approximation."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SyntheticSpec, generate_synthetic, split
from .errors import ConfigError
from .interpret import importance_scores, selection_auroc, stability_score
from .model import AnovaTpnnModel, build_model
from .train import FitConfig, FitReport, train

EVAL_SEED_OFFSET = 1_000_003


@dataclass(frozen=True)
class ExperimentSpec:
    """One synthetic experiment.

    ``components`` is ``"all"`` (every main effect and pair) or
    ``"screened"`` (every main effect plus the true signal pairs, standing in
    for an upstream interaction screen). ``resample=False`` gives every
    repetition the same data and seeds.
    """

    kind: str = "F1"
    repetitions: int = 10
    n: int = 15000
    snr: float = 5.0
    d: int = 2
    K: int = 30
    seed_base: int = 0
    components: str = "all"
    max_epochs: int = 60
    learning_rate: float = 5e-3
    batch_size: int = 4096
    n_eval: int = 1000
    resample: bool = True
    shuffle_target: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.components not in ("all", "screened"):
            raise ConfigError("components must be 'all' or 'screened'")
        SyntheticSpec(self.kind, self.n, self.snr, self.seed_base)

    def rep_seed(self, rep: int) -> int:
        return self.seed_base + rep if self.resample else self.seed_base

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.snr):
            d["snr"] = "inf"
        return d


@dataclass
class RepetitionFit:
    rep: int
    seed: int
    model: AnovaTpnnModel
    report: FitReport
    train: Dataset
    val: Dataset
    test: Dataset
    noise_std: float
    signal: frozenset


@dataclass
class ExperimentResult:
    name: str
    spec: ExperimentSpec
    values: list
    mean: float
    std: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.name,
            "spec": self.spec.to_dict(),
            "values": self.values,
            "mean": self.mean,
            "std": self.std,
            **self.extra,
        }


def _summary(values):
    v = np.asarray(values, dtype=np.float64)
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.mean(v)), std


def _component_list(spec: ExperimentSpec, p: int, signal):
    if spec.components == "all":
        return "all"
    mains = [(j,) for j in range(p)]
    pairs = sorted(S for S in signal if 1 < len(S) <= spec.d)
    return mains + pairs


def fit_repetition(spec: ExperimentSpec, rep: int) -> RepetitionFit:
    """Generate, split 70/10/20 and fit one repetition."""
    seed = spec.rep_seed(rep)
    sd = generate_synthetic(SyntheticSpec(spec.kind, spec.n, spec.snr, seed))
    ds = sd.dataset
    if spec.shuffle_target:
        perm = np.random.default_rng(seed + 7).permutation(ds.n)
        ds = Dataset(ds.features, ds.target[perm], ds.feature_names)
    tr, va, te = split(ds, (0.7, 0.1, 0.2), seed=seed)
    model = build_model(
        ds.p, spec.d, _component_list(spec, ds.p, sd.signal), K=spec.K, seed=seed,
        feature_names=ds.feature_names,
    )
    cfg = FitConfig(
        learning_rate=spec.learning_rate,
        batch_size=spec.batch_size,
        max_epochs=spec.max_epochs,
        seed=seed,
        validation="select-best-epoch",
    )
    fitted, report = train(model, tr, va, cfg)
    return RepetitionFit(rep, seed, fitted, report, tr, va, te, sd.noise_std, sd.signal)


def _fit_star(args):
    return fit_repetition(*args)


def fit_repetitions(spec: ExperimentSpec, workers: int = 1) -> list:
    """All repetitions of ``spec``, ordered by repetition index."""
    jobs = [(spec, rep) for rep in range(spec.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            fits = list(ex.map(_fit_star, jobs))
    else:
        fits = [_fit_star(j) for j in jobs]
    return sorted(fits, key=lambda f: f.rep)


def run_selection_experiment(spec: ExperimentSpec, fits=None, workers: int = 1) -> ExperimentResult:
    """AUROC of training-set importance scores against the true signal set."""
    fits = fits if fits is not None else fit_repetitions(spec, workers)
    aucs = []
    for f in fits:
        table = importance_scores(f.model, f.train.features)
        truth = {S for S in f.signal if len(S) <= spec.d}
        aucs.append(selection_auroc(table, truth))
    mean, std = _summary(aucs)
    return ExperimentResult("selection", spec, aucs, mean, std)


def run_prediction_experiment(spec: ExperimentSpec, fits=None, workers: int = 1) -> ExperimentResult:
    """Test RMSE of validation-selected models, with the generator's noise level."""
    fits = fits if fits is not None else fit_repetitions(spec, workers)
    rmses, sigmas = [], []
    for f in fits:
        pred = f.model.forward(f.test.features)
        rmses.append(float(np.sqrt(np.mean((pred - f.test.target) ** 2))))
        sigmas.append(f.noise_std)
    mean, std = _summary(rmses)
    return ExperimentResult(
        "prediction", spec, rmses, mean, std,
        {"noise_std": sigmas, "mean_noise_std": float(np.mean(sigmas))},
    )


def stability_eval_rows(spec: ExperimentSpec) -> np.ndarray:
    sd = generate_synthetic(
        SyntheticSpec(spec.kind, spec.n_eval, spec.snr, spec.seed_base + EVAL_SEED_OFFSET)
    )
    return sd.dataset.features


def run_stability_experiment(spec: ExperimentSpec, fits=None, workers: int = 1):
    """Stability of every component across refits on resampled training sets."""
    if spec.repetitions < 2:
        raise ConfigError("stability needs at least 2 repetitions")
    fits = fits if fits is not None else fit_repetitions(spec, workers)
    meta = [
        {"rep": f.rep, "seed": f.seed, "selected_epoch": f.report.selected_epoch,
         "snapshot_id": f.report.snapshot_id}
        for f in fits
    ]
    return stability_score([f.model for f in fits], stability_eval_rows(spec), meta)


# ---------------------------------------------------------------------------
# approximation rate

APPROX_TARGETS = {
    "sin": lambda x: np.sin(2 * np.pi * x),
    "linear": lambda x: x - 0.5,
    "zero": lambda x: np.zeros_like(x),
}


def fit_1d(target: str, K: int, seed: int, n: int = 1000, epochs: int = 3000,
           learning_rate: float = 2e-2):
    """Fit a one-feature model to a centered target on a uniform grid.

    Returns ``(model, grid_rmse)`` with the RMSE taken on 2001 grid points.
    """
    fn = APPROX_TARGETS[target]
    x = (np.arange(n) + 0.5) / n
    ds = Dataset(x[:, None], fn(x), ["x"])
    model = build_model(1, 1, "all", K=K, seed=seed)
    cfg = FitConfig(learning_rate=learning_rate, batch_size=n, max_epochs=epochs,
                    seed=seed, validation="none")
    fitted, _ = train(model, ds, None, cfg)
    grid = np.linspace(0.0, 1.0, 2001)
    err = fitted.forward(grid[:, None]) - fn(grid)
    return fitted, float(np.sqrt(np.mean(err**2)))


def run_approximation_study(K_list=(2, 5, 10, 30), target: str = "sin", seeds: int = 3,
                            epochs: int = 3000) -> list:
    """Best-of-``seeds`` grid RMSE for each basis count."""
    if not K_list:
        raise ConfigError("K list must be non-empty")
    rows = []
    for K in K_list:
        per = [fit_1d(target, K, s, epochs=epochs)[1] for s in range(seeds)]
        rows.append({"K": int(K), "best_rmse": min(per), "rmse_per_seed": per})
    return rows


# ---------------------------------------------------------------------------
# monotone constraint


def monotone_target(X):
    """Increasing in x1 with additive nuisance terms."""
    return 3.0 * X[:, 0] ** 3 + np.sin(2 * np.pi * X[:, 1]) + X[:, 2]


def run_monotone_experiment(seed: int = 0, n: int = 5000, noise: float = 0.3,
                            max_epochs: int = 80, K: int = 30) -> dict:
    """Paired fits with and without an increasing directive on feature 1."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, 3))
    y = monotone_target(X) + noise * rng.standard_normal(n)
    tr, va, te = split(Dataset(X, y), seed=seed)
    out = {}
    for name, mono in (("unconstrained", {}), ("increasing", {0: "increasing"})):
        model = build_model(3, 1, "all", K=K, seed=seed)
        cfg = FitConfig(max_epochs=max_epochs, batch_size=512, seed=seed, monotone=mono)
        fitted, _ = train(model, tr, va, cfg)
        rmse = float(np.sqrt(np.mean((fitted.forward(te.features) - te.target) ** 2)))
        out[name] = {"model": fitted, "rmse": rmse}
    return out


# ---------------------------------------------------------------------------
# output


def write_results(result, out_dir, name: str | None = None):
    """Write ``<name>.json`` and ``<name>.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = result if isinstance(result, dict) else result.to_dict()
    name = name or d.get("experiment", "result")
    (out / f"{name}.json").write_text(json.dumps(d, indent=1) + "\n", encoding="utf-8")
    with (out / f"{name}.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if "values" in d:
            w.writerow(["repetition", "value"])
            for i, v in enumerate(d["values"]):
                w.writerow([i, repr(float(v))])
        elif "per_component" in d:
            w.writerow(["component", "sc"])
            for k, v in d["per_component"].items():
                w.writerow([k, repr(float(v))])
        elif "rows" in d:
            w.writerow(["K", "best_rmse"])
            for row in d["rows"]:
                w.writerow([row["K"], repr(float(row["best_rmse"]))])
    return out / f"{name}.json"

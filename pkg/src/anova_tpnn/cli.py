"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import click
import numpy as np

try:
    import tomllib as tomli
except ImportError:  # Python < 3.11
    import tomli

from .data import Dataset, SyntheticSpec, generate_synthetic, load_csv, read_matrix, write_csv
from .errors import ConfigError, DataError, TpnnError
from .interpret import (
    Decomposition,
    Quadrature,
    anova_shap_matrix,
    axis_conditional_means,
    importance_scores,
    model_decomposition,
    purify,
    stability_score,
    tabulated_component,
)
from .model import AnovaTpnnModel, build_model, load_model, save_model
from .synthbench import (
    ExperimentSpec,
    fit_repetitions,
    run_approximation_study,
    run_prediction_experiment,
    run_selection_experiment,
    run_stability_experiment,
    write_results,
)
from .train import FitConfig, train

# ---------------------------------------------------------------------------
# run configuration

_SCHEMA = {
    "data": {"train", "target", "validation"},
    "model": {"order", "components", "K", "mode", "link", "seed"},
    "fit": {f.name for f in fields(FitConfig)} - {"clip_norm"},
    "output": {"model", "report"},
}
_REQUIRED = {"data": {"train", "target"}, "output": {"model"}}


def read_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for section, value in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(value, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown = set(value) - _SCHEMA[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    for section, keys in _REQUIRED.items():
        missing = keys - set(cfg.get(section, {}))
        if missing:
            raise ConfigError(f"missing key(s) in [{section}]: {', '.join(sorted(missing))}")
    base = path.parent
    for section, key in (("data", "train"), ("data", "validation"), ("output", "model"), ("output", "report")):
        if key in cfg.get(section, {}):
            cfg[section][key] = str((base / cfg[section][key]).resolve())
    return cfg


def _feature_index(key: str, names) -> tuple:
    out = []
    for part in str(key).split(","):
        part = part.strip()
        if part in names:
            out.append(names.index(part))
        elif part.isdigit() and 1 <= int(part) <= len(names):
            out.append(int(part) - 1)
        else:
            raise ConfigError(f"unknown feature {part!r} in monotone directive")
    return tuple(out)


def _components(spec, names):
    if spec == "all":
        return "all"
    if not isinstance(spec, list):
        raise ConfigError("model.components must be 'all' or a list of feature lists")
    out = []
    for S in spec:
        S = S if isinstance(S, list) else [S]
        out.append(tuple(_feature_index(str(v), names)[0] for v in S))
    return out


def _fit_config(cfg: dict, names, seed=None) -> FitConfig:
    fit = dict(cfg.get("fit", {}))
    mono = {}
    for key, direction in fit.pop("monotone", {}).items():
        S = _feature_index(key, names)
        if len(S) != 1:
            raise ConfigError(f"monotone requires main effect; got feature set {key!r}")
        mono[S] = direction
    if seed is not None:
        fit["seed"] = seed
    try:
        return FitConfig(monotone=mono, **fit)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _model_from_config(cfg: dict, names, seed=None) -> AnovaTpnnModel:
    mc = cfg.get("model", {})
    K = mc.get("K", 30)
    if isinstance(K, dict):
        K = {int(k): v for k, v in K.items()}
    return build_model(
        len(names),
        int(mc.get("order", 1)),
        _components(mc.get("components", "all"), names),
        K=K,
        mode=mc.get("mode", "independent"),
        link=mc.get("link", "identity"),
        seed=int(seed if seed is not None else mc.get("seed", 0)),
        feature_names=names,
    )


def fit_from_config(cfg: dict, seed=None, train_ds=None):
    data = cfg["data"]
    tr = train_ds if train_ds is not None else load_csv(data["train"], data["target"])
    va = load_csv(data["validation"], data["target"]) if "validation" in data else None
    model = _model_from_config(cfg, tr.feature_names, seed)
    fit_cfg = _fit_config(cfg, tr.feature_names, seed)
    return train(model, tr, va, fit_cfg)


# ---------------------------------------------------------------------------
# helpers


def _model_features(model: AnovaTpnnModel, path) -> np.ndarray:
    header, M = read_matrix(path)
    names = model.feature_names
    if all(n in header for n in names):
        return M[:, [header.index(n) for n in names]]
    if M.shape[1] == model.n_features:
        return M
    raise DataError(f"{path}: expected {model.n_features} feature columns, found {M.shape[1]}")


def _fmt(v) -> str:
    return repr(float(v))


def _dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _label_file(model, S) -> str:
    return "_".join(model.feature_names[j] for j in S)


class State:
    def __init__(self, seed, threads, timestamp):
        self.seed = seed
        self.threads = threads
        self.timestamp = timestamp


pass_state = click.make_pass_decorator(State)


@click.group()
@click.option("--seed", type=int, default=None, help="Override every seed in the run.")
@click.option("--threads", type=int, default=1, show_default=True, help="Worker processes for repetitions.")
@click.option("--no-timestamp", is_flag=True, help="Omit timing fields from reports.")
@click.option("-v", "--verbose", is_flag=True, help="Log one line per epoch.")
@click.pass_context
def cli(ctx, seed, threads, no_timestamp, verbose):
    """Fit and interpret identifiable functional ANOVA models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    ctx.obj = State(seed, max(1, threads), not no_timestamp)


@cli.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@pass_state
def cmd_train(state, config_path):
    """Train a model from a TOML run configuration."""
    cfg = read_config(config_path)
    model, report = fit_from_config(cfg, state.seed)
    save_model(model, cfg["output"]["model"])
    out = report.to_dict(state.timestamp)
    if state.timestamp:
        out["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    report_path = cfg["output"].get("report") or str(Path(cfg["output"]["model"]).with_suffix(".report.json"))
    _dump(out, report_path)
    click.echo(f"model written to {cfg['output']['model']} (selected epoch {report.selected_epoch})")


@cli.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_predict(model_path, data_path, out_path):
    """Write link-scale predictions (and probabilities for logit models)."""
    model = load_model(model_path)
    X = _model_features(model, data_path)
    f = model.forward(X) if X.shape[0] else np.zeros(0)
    with Path(out_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        logit = model.link == "logit"
        w.writerow(["row", "prediction"] + (["probability"] if logit else []))
        for i, v in enumerate(f):
            row = [i, _fmt(v)]
            if logit:
                row.append(_fmt(1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))))
            w.writerow(row)


@cli.command("explain")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_explain(model_path, data_path, out_path):
    """Write ANOVA-SHAP attributions, one JSON record per row."""
    model = load_model(model_path)
    X = _model_features(model, data_path)
    sets = model.component_sets
    with Path(out_path).open("w", encoding="utf-8") as fh:
        if X.shape[0] == 0:
            return
        shap, M = anova_shap_matrix(model, X)
        for i in range(X.shape[0]):
            pred = float(model.beta0 + M[i].sum())
            rec = {
                "row": i,
                "shap": dict(zip(model.feature_names, shap[i].tolist())),
                "components": {model.label(S): float(v) for S, v in zip(sets, M[i])},
                "beta0": float(model.beta0),
                "prediction": pred,
                "sum": float(shap[i].sum()),
                "prediction_minus_beta0": pred - float(model.beta0),
            }
            fh.write(json.dumps(rec) + "\n")


def _grid_ranks(points: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, points) if points > 1 else np.array([0.5])


def _raw_axis(model, j, u):
    return model.transformer.inverse(j, u) if model.transformer is not None else u


def write_curves(model: AnovaTpnnModel, out_dir, grid: int, decomp: Decomposition | None = None):
    """Per-component CSVs in raw feature units on a grid of ranks."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    u = _grid_ranks(grid)
    paths = []
    sets = model.component_sets if decomp is None else list(decomp.components)
    for S in sets:
        path = out / f"curve_{_label_file(model, S)}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if len(S) == 1:
                j = S[0]
                vals = model.component_grid(S, [u]) if decomp is None else decomp.evaluate(S, u[:, None])
                name = model.feature_names[j]
                w.writerow([f"{name}_raw", f"{name}_transformed", "f"])
                for xr, xt, v in zip(_raw_axis(model, j, u), u, vals):
                    w.writerow([_fmt(xr), _fmt(xt), _fmt(v)])
            elif len(S) == 2:
                a, b = S
                if decomp is None:
                    F = model.component_grid(S, [u, u])
                else:
                    A, B = np.meshgrid(u, u, indexing="ij")
                    F = decomp.evaluate(S, np.stack([A.ravel(), B.ravel()], 1)).reshape(A.shape)
                ra, rb = _raw_axis(model, a, u), _raw_axis(model, b, u)
                w.writerow([model.feature_names[a], model.feature_names[b], "f"])
                for ia in range(u.size):
                    for ib in range(u.size):
                        w.writerow([_fmt(ra[ia]), _fmt(rb[ib]), _fmt(F[ia, ib])])
            else:
                continue
        paths.append(path)
    return paths


@cli.command("curves")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--grid", default=101, show_default=True, type=click.IntRange(min=1))
def cmd_curves(model_path, out_dir, grid):
    """Export component curves (mains) and surfaces (pairs) as CSV."""
    write_curves(load_model(model_path), out_dir, grid)


@cli.command("importance")
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_importance(model_path, data_path, out_path):
    """Mean absolute component values over reference rows (CSV, or JSON by extension)."""
    model = load_model(model_path)
    table = importance_scores(model, _model_features(model, data_path))
    if str(out_path).endswith(".json"):
        _dump(table.to_dict(), out_path)
    else:
        table.to_csv(out_path)


@cli.command("stability")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--repetitions", default=10, show_default=True, type=click.IntRange(min=2))
@click.option("--fraction", default=0.8, show_default=True, type=click.FloatRange(0, 1, min_open=True))
@click.option("--data", "eval_path", type=click.Path(), help="Evaluation rows (default: training rows).")
@click.option("--out", "out_path", required=True, type=click.Path())
@pass_state
def cmd_stability(state, config_path, repetitions, fraction, eval_path, out_path):
    """Refit on random subsamples of the training data and score stability."""
    cfg = read_config(config_path)
    full = load_csv(cfg["data"]["train"], cfg["data"]["target"])
    base = state.seed if state.seed is not None else int(cfg.get("model", {}).get("seed", 0))
    m = max(2, int(math.floor(full.n * fraction)))
    runs, meta = [], []
    for rep in range(repetitions):
        rows = np.sort(np.random.default_rng(base + rep).choice(full.n, size=m, replace=False))
        model, report = fit_from_config(cfg, base + rep, full.subset(rows))
        runs.append(model)
        meta.append({"rep": rep, "seed": base + rep, "selected_epoch": report.selected_epoch})
    X_eval = _model_features(runs[0], eval_path) if eval_path else full.features
    _dump(stability_score(runs, X_eval, meta).to_dict(), out_path)


def _read_tables(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        axes = {int(k) - 1: np.asarray(v, dtype=np.float64) for k, v in doc["axes"].items()}
        comps = {}
        for c in doc["components"]:
            S = tuple(j - 1 for j in c["S"])
            comps[S] = (np.asarray(c["values"], dtype=np.float64), [axes[j] for j in S])
        return float(doc.get("beta0", 0.0)), axes, comps
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed component tables {path}: {exc}") from None


@cli.command("purify")
@click.option("--model", "model_path", type=click.Path(), help="Model file to purify.")
@click.option("--tables", "tables_path", type=click.Path(), help="Tabulated components (JSON).")
@click.option("--grid", default=201, show_default=True, type=click.IntRange(min=1))
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_purify(model_path, tables_path, grid, out_path):
    """Enforce the sum-to-zero condition on an additive decomposition.

    With --tables, OUT is a JSON file with purified tables on the input
    nodes (each axis's nodes equally weighted). With --model, OUT is a
    directory of purified curves plus summary.json.
    """
    if (model_path is None) == (tables_path is None):
        raise click.UsageError("give exactly one of --model or --tables")
    if tables_path:
        beta0, axes, comps = _read_tables(tables_path)
        decomp = Decomposition(beta0, {S: tabulated_component(ax, v) for S, (v, ax) in comps.items()})
        quad = Quadrature(lambda j: (axes[j], np.full(axes[j].size, 1.0 / axes[j].size)))
        pure = purify(decomp, quadrature=quad)
        out = {"beta0": pure.beta0, "axes": {str(j + 1): a.tolist() for j, a in sorted(axes.items())}, "components": []}
        for S in pure.components:
            ax = [axes[j] for j in S]
            mesh = np.meshgrid(*ax, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], 1)
            vals = pure.evaluate(S, pts).reshape(mesh[0].shape)
            out["components"].append({"S": [j + 1 for j in S], "values": vals.tolist()})
        _dump(out, out_path)
        return
    model = load_model(model_path)
    pure = purify(model_decomposition(model), quadrature=Quadrature.grid(grid))
    write_curves(model, out_path, grid, decomp=pure)
    means = axis_conditional_means(pure, Quadrature.grid(grid))
    _dump(
        {"beta0": pure.beta0, "max_axis_mean": {model.label(S): v for S, v in means.items()}},
        Path(out_path) / "summary.json",
    )


@cli.command("synth")
@click.option("--kind", type=click.Choice(["F1", "F2", "F3"]), default="F1", show_default=True)
@click.option("--n", "n", default=15000, show_default=True, type=click.IntRange(min=1))
@click.option("--snr", default=5.0, show_default=True, type=float)
@click.option("--out", "out_path", required=True, type=click.Path())
@pass_state
def cmd_synth(state, kind, n, snr, out_path):
    """Generate a synthetic benchmark CSV (target column 'y')."""
    sd = generate_synthetic(SyntheticSpec(kind, n, snr, state.seed or 0))
    write_csv(sd.dataset, out_path)


_EXPERIMENTS = ("selection", "prediction", "stability", "approximation")


@cli.command("bench")
@click.option("--experiment", type=click.Choice(_EXPERIMENTS), required=True)
@click.option("--kind", type=click.Choice(["F1", "F2", "F3"]), default="F1", show_default=True)
@click.option("--repetitions", default=10, show_default=True, type=click.IntRange(min=1))
@click.option("--n", "n", default=15000, show_default=True, type=click.IntRange(min=1))
@click.option("--snr", default=5.0, show_default=True, type=float)
@click.option("--K", "K", default=30, show_default=True, type=click.IntRange(min=1))
@click.option("--epochs", default=60, show_default=True, type=click.IntRange(min=0))
@click.option("--components", type=click.Choice(["all", "screened"]), default=None)
@click.option("--k-list", default="2,5,10,30", show_default=True, help="Approximation study basis counts.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@pass_state
def cmd_bench(state, experiment, kind, repetitions, n, snr, K, epochs, components, k_list, out_dir):
    """Run a synthetic experiment and write JSON + CSV results."""
    if experiment == "approximation":
        Ks = [int(v) for v in k_list.split(",") if v.strip()]
        rows = run_approximation_study(Ks)
        write_results({"experiment": "approximation", "spec": {"K_list": Ks}, "rows": rows}, out_dir)
        return
    if components is None:
        components = "screened" if experiment == "stability" else "all"
    spec = ExperimentSpec(
        kind=kind, repetitions=repetitions, n=n, snr=snr, K=K, max_epochs=epochs,
        components=components, seed_base=state.seed or 0,
    )
    fits = fit_repetitions(spec, state.threads)
    if experiment == "selection":
        res = run_selection_experiment(spec, fits).to_dict()
    elif experiment == "prediction":
        res = run_prediction_experiment(spec, fits).to_dict()
    else:
        res = run_stability_experiment(spec, fits).to_dict()
        res = {"experiment": "stability", "spec": spec.to_dict(), **res}
    write_results(res, out_dir, experiment)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="anova-tpnn", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except TpnnError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


def run():
    sys.exit(main())

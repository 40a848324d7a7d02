"""Identifiable functional ANOVA models with tensor product neural networks."""

from .basis import BasisParam, eta, phi_grad, phi_main, phi_tensor
from .data import (
    Dataset,
    QuantileTransformer,
    SyntheticSpec,
    apply_transform,
    fit_quantile_transform,
    generate_synthetic,
    load_csv,
    split,
)
from .errors import ConfigError, DataError, NumericError, TpnnError
from .interpret import (
    Decomposition,
    Quadrature,
    anova_shap,
    importance_scores,
    purify,
    selection_auroc,
    stability_score,
)
from .model import AnovaTpnnModel, build_model, load_model, save_model
from .train import FitConfig, FitReport, loss_and_grad, train

__version__ = "0.1.0"

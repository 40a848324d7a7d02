import json
import logging

import numpy as np
import pytest

from anova_tpnn.data import Dataset, split
from anova_tpnn.errors import ConfigError, DataError, NumericError
from anova_tpnn.model import build_model, model_to_json
from anova_tpnn.train import (
    Adam,
    FitConfig,
    clip_gradients,
    compute_loss,
    loss_and_grad,
    loss_and_grad_reference,
    train,
)

from conftest import finite_difference_errors, random_model


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        Adam(lr=0.1).step(p, {"w": np.array([0.5, -4.0, 1e-3])})
        np.testing.assert_allclose(p["w"], [0.9, -1.9, 2.9], atol=1e-5)

    def test_quadratic_converges(self):
        p = {"w": np.array([5.0])}
        opt = Adam(lr=0.1)
        for _ in range(500):
            opt.step(p, {"w": 2 * p["w"]})
        assert abs(p["w"][0]) < 1e-2


class TestGradient:
    @pytest.mark.parametrize("mode", ["independent", "nbm-shared"])
    @pytest.mark.parametrize("loss, link", [("squared", "identity"), ("logistic", "logit")])
    def test_kernel_matches_reference(self, rng, mode, loss, link):
        m = random_model(3, p=4, d=2, K=5, mode=mode, link=link)
        U = rng.uniform(size=(50, 4))
        y = (rng.uniform(size=50) < 0.5).astype(float)
        l1, g1 = loss_and_grad(m, U, y, loss)
        l2, g2 = loss_and_grad_reference(m, U, y, loss)
        assert l1 == pytest.approx(l2, rel=1e-13)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-10, atol=1e-13)

    @pytest.mark.parametrize("mode", ["independent", "nbm-shared"])
    def test_finite_difference(self, rng, mode):
        m = random_model(5, p=3, d=2, K=4, mode=mode)
        m.blocks[1].monotone[1] = 1
        U = rng.uniform(size=(40, 3))
        errs = finite_difference_errors(m, U, rng.normal(size=40), "squared", 150, rng)
        assert errs.max() < 1e-4

    def test_loss_value(self):
        m = build_model(1, 1, K=1)
        U = np.array([[0.5]])
        m.beta0 = 2.0
        m.blocks[1].beta[...] = 0.0
        assert loss_and_grad(m, U, np.array([3.0]))[0] == pytest.approx(1.0)
        assert compute_loss(np.array([0.0]), np.array([1.0]), "logistic") == pytest.approx(np.log(2))

    def test_empty_batch(self):
        with pytest.raises(DataError):
            loss_and_grad(random_model(0), np.zeros((0, 3)), np.zeros(0))

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_gradients(g, 1.0) == pytest.approx(5.0)
        assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(loss="hinge"), dict(learning_rate=0), dict(batch_size=0),
               dict(max_epochs=-1), dict(validation="early"), dict(monotone={0: "up"})]
    )
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            FitConfig(**kw)


class TestTrain:
    def _fit(self, data, **kw):
        tr, va, _ = split(data, seed=0)
        m = build_model(3, 2, K=8, seed=0, feature_names=data.feature_names)
        cfg = FitConfig(**({"max_epochs": 15, "batch_size": 64, "learning_rate": 2e-2} | kw))
        return m, tr, va, train(m, tr, va, cfg)

    def test_loss_decreases(self, toy_data):
        _, _, _, (fitted, rep) = self._fit(toy_data)
        assert rep.train_loss[-1] < 0.5 * rep.train_loss[0]
        assert len(rep.val_loss) == 15

    def test_selects_best_validation_epoch(self, toy_data):
        _, _, va, (fitted, rep) = self._fit(toy_data)
        assert rep.selected_epoch == int(np.argmin(rep.val_loss)) + 1
        got = compute_loss(fitted.forward(va.features), va.target, "squared")
        assert got == pytest.approx(min(rep.val_loss), rel=1e-12)

    def test_input_model_untouched(self, toy_data):
        m, _, _, _ = self._fit(toy_data)
        assert m.transformer is None and m.beta0 == 0.0

    def test_deterministic(self, toy_data):
        a = self._fit(toy_data)[3]
        b = self._fit(toy_data)[3]
        assert model_to_json(a[0]) == model_to_json(b[0])
        assert a[1].to_json(timestamp=False) == b[1].to_json(timestamp=False)

    def test_seed_changes_result(self, toy_data):
        a = self._fit(toy_data, seed=1)[3]
        b = self._fit(toy_data, seed=2)[3]
        assert a[1].snapshot_id != b[1].snapshot_id

    def test_transform_fit_on_train_only(self, toy_data):
        _, tr, _, (fitted, _) = self._fit(toy_data)
        np.testing.assert_array_equal(fitted.transformer.knots[0], np.unique(tr.features[:, 0]))

    def test_zero_epochs(self, toy_data):
        _, _, _, (fitted, rep) = self._fit(toy_data, max_epochs=0)
        assert rep.selected_epoch == 0 and rep.train_loss == []

    def test_no_validation_keeps_last(self, toy_data):
        m = build_model(3, 1, K=4)
        _, rep = train(m, toy_data, None, FitConfig(max_epochs=3))
        assert rep.selected_epoch == 3 and rep.val_loss == []

    def test_report_timestamp_field(self, toy_data):
        rep = self._fit(toy_data, max_epochs=1)[3][1]
        assert "wall_clock_seconds" in rep.to_dict()
        assert "wall_clock_seconds" not in json.loads(rep.to_json(timestamp=False))

    def test_epoch_log(self, toy_data, caplog):
        with caplog.at_level(logging.INFO, logger="anova_tpnn.train"):
            self._fit(toy_data, max_epochs=2)
        assert any(r.getMessage().startswith("epoch=2 train_loss=") for r in caplog.records)

    def test_logistic(self, rng):
        X = rng.uniform(size=(600, 2))
        y = (X[:, 0] + 0.2 * rng.normal(size=600) > 0.5).astype(float)
        m = build_model(2, 1, K=6, link="logit")
        fitted, rep = train(m, Dataset(X, y), None, FitConfig(loss="logistic", max_epochs=40,
                                                               batch_size=100, learning_rate=2e-2))
        acc = np.mean((fitted.predict(X) > 0.5) == y)
        assert acc > 0.8

    def test_logistic_needs_logit_link(self, toy_data):
        with pytest.raises(ConfigError):
            train(build_model(3, 1), toy_data, None, FitConfig(loss="logistic"))

    def test_logistic_needs_binary(self, toy_data):
        with pytest.raises(DataError):
            train(build_model(3, 1, link="logit"), toy_data, None, FitConfig(loss="logistic"))

    def test_arity(self, toy_data):
        with pytest.raises(DataError):
            train(build_model(4, 1), toy_data)

    def test_non_finite_loss(self, toy_data):
        m = build_model(3, 1, K=2)
        m.blocks[1].beta[...] = 1e300
        with pytest.raises(NumericError):
            train(m, toy_data, None, FitConfig(max_epochs=1), init_intercept=False)

    def test_monotone_directive(self, toy_data):
        _, _, _, (fitted, _) = self._fit(toy_data, monotone={0: "decreasing", (1,): "increasing"})
        g = np.linspace(0, 1, 1001)
        assert np.diff(fitted.component_grid((0,), [g])).max() <= 0
        assert np.diff(fitted.component_grid((1,), [g])).min() >= 0

    def test_monotone_pair_rejected(self, toy_data):
        with pytest.raises(ConfigError, match="monotone requires main effect"):
            self._fit(toy_data, monotone={(0, 1): "increasing"})

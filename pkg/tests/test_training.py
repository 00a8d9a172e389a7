import numpy as np
import pytest

from odtte.architectures import build_model, preset_spec
from odtte.autograd import Parameter
from odtte.config import FeatureConfig, SyntheticConfig, TrainConfig
from odtte.dataset import generate_synthetic
from odtte.errors import ConfigurationError, ContractError, DivergenceError, NumericalError
from odtte.schema import ModelSpec, TrainHistory
from odtte.training import AdamState, adam_step, early_stop, evaluate_mse, lr_at, train


def _toy_data(rng, n=40):
    x = rng.uniform(size=(n, 12))
    y = 2.0 + x[:, 0] - 0.5 * x[:, 5]
    return x, y


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self):
        p = Parameter(np.array([1.0, -2.0]), name="p")
        state = AdamState()
        adam_step([p], [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([0.0]), name="p")
        adam_step([p], [np.array([1.0])], AdamState(), lr=0.1)
        assert p.value[0] == pytest.approx(-0.1, abs=1e-8)

    def test_missing_gradient_counts_as_zero(self):
        p = Parameter(np.array([3.0]), name="p")
        adam_step([p], [None], AdamState(), lr=0.1)
        assert p.value[0] == 3.0

    def test_deterministic(self):
        def run():
            p = Parameter(np.array([0.5, 0.25]), name="p")
            state = AdamState()
            for g in ([1.0, -2.0], [0.5, 0.1], [-3.0, 2.0]):
                adam_step([p], [np.array(g)], state, lr=0.01)
            return p.value, state

        (a, sa), (b, sb) = run(), run()
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(sa.v["p"], sb.v["p"])

    def test_non_finite_gradient_names_parameter(self):
        good = Parameter(np.array([1.0]), name="block1.conv1.weight")
        bad = Parameter(np.array([1.0]), name="output.bias")
        with pytest.raises(NumericalError, match="output.bias"):
            adam_step([good, bad], [np.array([1.0]), np.array([np.nan])], AdamState(), lr=0.1)
        assert good.value[0] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            adam_step([Parameter(np.zeros(1), name="p")], [], AdamState(), lr=0.1)


class TestSchedule:
    @pytest.mark.parametrize("epoch, lr", [(0, 1e-4), (39, 1e-4), (40, 5e-5), (85, 2.5e-5)])
    def test_halving(self, epoch, lr):
        assert lr_at(epoch, TrainConfig()) == pytest.approx(lr, rel=1e-15)


class TestEarlyStop:
    def test_strictly_decreasing_never_stops(self):
        assert not early_stop([10.0 - i for i in range(60)], 25)

    def test_stops_exactly_patience_epochs_after_best(self):
        losses = [5.0, 4.0, 3.0] + [3.0] * 25
        assert not early_stop(losses[:-1], 25)
        assert early_stop(losses, 25)

    def test_short_history(self):
        assert not early_stop([1.0, 1.0, 1.0], 25)

    def test_empty_history(self):
        with pytest.raises(ContractError):
            early_stop([], 25)


class TestTrain:
    def test_frozen_model_stops_at_epoch_26(self, rng):
        x, y = _toy_data(rng)
        model = build_model(ModelSpec("mlp", (4,)), seed=0)
        result = train(model, (x, y), (x, y), TrainConfig(initial_lr=0.0, patience=25, batch_size=16))
        assert len(result.history) == 26
        assert result.best_epoch == 1
        assert result.stop_reason == "early_stopping"

    def test_same_seed_same_history(self, rng):
        x, y = _toy_data(rng)
        cfg = TrainConfig(initial_lr=1e-2, max_epochs=5, batch_size=8, seed=4)

        def run():
            result = train(build_model(ModelSpec("mlp", (6,)), seed=2), (x, y), (x, y), cfg)
            return [(e.train_mse, e.val_mse, e.lr) for e in result.history.epochs]

        assert run() == run()

    def test_restores_best_validation_parameters(self, rng):
        x, y = _toy_data(rng)
        x_val, y_val = _toy_data(rng, n=20)
        model = build_model(ModelSpec("resnet", (2, 2), head_widths=(4,)), seed=1)
        result = train(model, (x, y), (x_val, y_val),
                       TrainConfig(initial_lr=1e-2, max_epochs=30, patience=3, batch_size=8))
        assert evaluate_mse(result.model, x_val, y_val) == result.history.best_val_mse

    def test_learning_reduces_validation_loss(self, rng):
        x, y = _toy_data(rng, n=64)
        model = build_model(ModelSpec("mlp", (8, 8)), seed=0)
        result = train(model, (x, y), (x, y), TrainConfig(initial_lr=1e-2, max_epochs=40, batch_size=16))
        losses = result.history.val_losses()
        assert min(losses) < losses[0]

    def test_history_csv_is_deterministic(self, rng, tmp_path):
        x, y = _toy_data(rng)
        for name in ("a", "b"):
            result = train(build_model(ModelSpec("mlp", (4,)), seed=0), (x, y), (x, y),
                           TrainConfig(initial_lr=1e-2, max_epochs=3))
            result.history.to_csv(tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        reloaded = TrainHistory.from_csv(tmp_path / "a.csv")
        assert len(reloaded) == 3

    def test_divergence_carries_last_good_state(self, rng):
        x, y = _toy_data(rng)
        y = y * 1e200
        model = build_model(ModelSpec("mlp", (4,)), seed=0)
        with pytest.raises(DivergenceError) as info:
            train(model, (x, y), (x, y), TrainConfig(initial_lr=1e-2, max_epochs=3))
        assert info.value.epoch == 1
        assert set(info.value.last_good) == {p.name for p in model.parameters()}
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, info.value.last_good[name])

    def test_empty_training_set(self, rng):
        x, y = _toy_data(rng)
        with pytest.raises(ContractError):
            train(build_model(ModelSpec("mlp", (4,))), (x[:0], y[:0]), (x, y), TrainConfig())

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)

    @pytest.mark.slow
    def test_resnet3_memorizes_256_samples(self):
        data = generate_synthetic(SyntheticConfig(n_samples=256, seed=3))
        x, y = data.features(FeatureConfig()), data.targets()
        cfg = TrainConfig(initial_lr=1e-3, lr_halving_period=10_000, max_epochs=2000, patience=2000,
                          batch_size=32, target_train_mse=0.01)
        result = train(build_model(preset_spec("resnet-3"), seed=0), (x, y), (x, y), cfg)
        assert result.stop_reason == "target_train_mse"
        assert evaluate_mse(result.model, x, y) < 0.01

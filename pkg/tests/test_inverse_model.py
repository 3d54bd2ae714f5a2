import numpy as np
import pytest

from insertion.errors import DatasetError, DivergedTraining, HandError, ModelFormatError
from insertion.hand import TransitionBuffer, contact_triangle, generate_dataset, sample_grasp
from insertion.inverse_model import (
    MODEL_HEADER, fit_inverse_model, init_layers, load_model, loss_and_gradients, predict, save_model,
    training_digest,
)
from insertion.schemas import TrainingConfig


def synthetic_buffer(n, rng):
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    y = np.column_stack([0.3 * x[:, 0], -0.2 * x[:, 1], 0.1 * (x[:, 0] + x[:, 1])])
    return TransitionBuffer(x, y, np.ones((n, 3)))


@pytest.mark.unit
class TestBackprop:
    """Analytic gradients of the MLP loss"""

    def test_gradients_match_finite_differences(self, rng):
        layers = init_layers([2, 5, 4, 3], rng)
        X = rng.normal(size=(7, 2))
        Y = rng.normal(size=(7, 3))
        _, grads = loss_and_gradients(layers, X, Y)
        eps = 1e-6
        for layer, grad in zip(layers, grads):
            for name in ("W", "b"):
                values = getattr(layer, name)
                analytic = getattr(grad, name)
                for idx in np.ndindex(values.shape):
                    old = values[idx]
                    values[idx] = old + eps
                    up, _ = loss_and_gradients(layers, X, Y)
                    values[idx] = old - eps
                    down, _ = loss_and_gradients(layers, X, Y)
                    values[idx] = old
                    assert analytic[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)


@pytest.mark.unit
class TestTraining:
    """Fitting the inverse hand model"""

    def test_learns_a_linear_map(self, rng):
        buffer = synthetic_buffer(2000, rng)
        model = fit_inverse_model(buffer, TrainingConfig(epochs=80, hidden=16, seed=0))
        assert model.final_loss < 0.05 * model.loss_curve[0]
        pred = model.predict(np.array([0.5, -0.5]))
        assert np.allclose(pred, [0.15, 0.1, 0.0], atol=0.05)

    def test_seeded_training_is_deterministic(self, rng):
        buffer = synthetic_buffer(1200, rng)
        cfg = TrainingConfig(epochs=3, hidden=8, seed=4)
        a = fit_inverse_model(buffer, cfg)
        b = fit_inverse_model(buffer, cfg)
        assert a.loss_curve == b.loss_curve

    def test_small_buffer_rejected(self, rng):
        with pytest.raises(DatasetError):
            fit_inverse_model(synthetic_buffer(999, rng))

    def test_divergence_detected(self, rng):
        buffer = synthetic_buffer(1200, rng)
        buffer.a_dot[0, 0] = np.inf
        with pytest.raises(DivergedTraining):
            fit_inverse_model(buffer, TrainingConfig(epochs=1, seed=0))

    def test_fitted_on_hand_data(self, fitted_model):
        assert fitted_model.final_loss < fitted_model.loss_curve[0]
        assert fitted_model.validation_loss is not None

    def test_memorizes_a_constant_map(self, rng):
        x = rng.uniform(-1.0, 1.0, size=(1500, 2))
        target = np.array([0.2, -0.1, 0.05])
        buffer = TransitionBuffer(x, np.tile(target, (1500, 1)), np.ones((1500, 3)))
        model = fit_inverse_model(buffer, TrainingConfig(epochs=40, hidden=16, seed=0))
        queries = rng.uniform(-1.0, 1.0, size=(50, 2))
        assert np.allclose(model.predict(queries), target, atol=0.02)

    def test_records_training_config(self, rng):
        cfg = TrainingConfig(epochs=1, hidden=4, seed=7)
        model = fit_inverse_model(synthetic_buffer(1200, rng), cfg)
        assert model.config_hash == training_digest(cfg)
        assert model.config_hash != training_digest(cfg.model_copy(update={"hidden": 5}))

    @pytest.mark.slow
    def test_held_out_loss_tracks_training_loss(self, desk_dataset):
        train, held = desk_dataset.split(0.2, seed=0)
        model = fit_inverse_model(train, TrainingConfig(), validation=held)
        assert model.validation_loss <= 2.0 * model.final_loss


@pytest.mark.unit
class TestPrediction:
    """Clamping, input checks and batch shapes"""

    def test_output_is_clamped(self, fitted_model):
        out = fitted_model.predict(np.array([[50.0, -50.0], [0.0, 0.0]]))
        assert out.shape == (2, 3)
        assert np.all(np.abs(out) <= 0.5)

    def test_non_finite_input(self, fitted_model):
        with pytest.raises(ValueError):
            predict(fitted_model, np.array([np.nan, 0.0]))


@pytest.mark.unit
class TestModelFiles:
    """Plain-text model format"""

    def test_saved_model_predicts_identically(self, fitted_model, tmp_path):
        path = tmp_path / "model.txt"
        save_model(fitted_model, path)
        loaded = load_model(path)
        x = np.array([[0.1, -0.2], [0.3, 0.05]])
        assert np.array_equal(loaded.predict(x), fitted_model.predict(x))
        assert loaded.dataset_hash == fitted_model.dataset_hash

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "model.txt"
        path.write_text("not a model\n")
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_truncated_file(self, fitted_model, tmp_path):
        path = tmp_path / "model.txt"
        save_model(fitted_model, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:10]) + "\n")
        assert lines[0] == MODEL_HEADER
        with pytest.raises(ModelFormatError):
            load_model(path)


@pytest.mark.slow
class TestRollout:
    """The fitted model steers the forward hand model in the requested direction"""

    def test_directional_cosine(self, acceptance_model, hand):
        held_out = generate_dataset(4, 400, seed=99, hand=hand)
        rng = np.random.default_rng(99)
        state = sample_grasp(hand, rng)
        triangle = contact_triangle(hand.contacts(state.q))
        cosines = []
        for request in held_out.xdot_xy:
            if np.linalg.norm(request) < 1e-3:
                continue
            a_dot = acceptance_model.predict(request)
            try:
                _, nxt, x_dot = hand.step(state, a_dot, 1.0 / 30.0, triangle)
            except HandError:
                state = sample_grasp(hand, rng)
                triangle = contact_triangle(hand.contacts(state.q))
                continue
            got = x_dot.omega[:2]
            if np.linalg.norm(got) > 1e-9:
                cosines.append(float(got @ request / (np.linalg.norm(got) * np.linalg.norm(request))))
            margin = min(nxt.q.min(), np.pi / 2 - nxt.q.max())
            if margin < 0.05:
                state = sample_grasp(hand, rng)
                triangle = contact_triangle(hand.contacts(state.q))
            else:
                state = nxt
        assert len(cosines) >= 100
        assert np.median(cosines) >= 0.8

    def test_zero_request_barely_rotates(self, acceptance_model, desk_dataset, hand):
        a_dot = acceptance_model.predict(np.zeros(2))
        typical = float(np.median(np.linalg.norm(desk_dataset.xdot_xy, axis=1)))
        rng = np.random.default_rng(7)
        rates = []
        for _ in range(20):
            state = sample_grasp(hand, rng)
            triangle = contact_triangle(hand.contacts(state.q))
            drift = np.zeros(2)
            steps = 0
            for _ in range(10):
                try:
                    _, state, x_dot = hand.step(state, a_dot, 1.0 / 30.0, triangle)
                except HandError:
                    break
                drift += x_dot.omega[:2]
                steps += 1
            if steps:
                rates.append(np.linalg.norm(drift) / steps)
        assert len(rates) >= 15
        assert np.median(rates) <= 0.25 * typical

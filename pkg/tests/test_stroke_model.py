"""param2stroke network: forward contract, gradients, training, model file."""

import numpy as np
import pytest

from easel import autodiff as ad
from easel.autodiff import _upsample_matrix
from easel.strokes import StrokeDataset, StrokeShape, generate_dataset
from easel.stroke_model import (StrokeShapeModel, TrainConfig, evaluate_model,
                                load_model, param2stroke_forward, save_model,
                                train_param2stroke)


@pytest.fixture(scope="module")
def trained():
    ds = generate_dataset(120, seed=7)
    model, history = train_param2stroke(ds, TrainConfig(epochs=150, seed=0))
    return ds, model, history


def test_forward_shape_contract():
    model = StrokeShapeModel.initialize(seed=1)
    stamp = model.predict(StrokeShape(0.5, 0.03, 0.0))
    assert stamp.shape == model.resolution
    g = ad.Graph()
    batch = model.forward_graph(g, np.array([[0.5, 0.03, 0.0], [0.8, 0.02, 0.01]]))
    assert batch.data.shape == (2, *model.resolution)


def test_forward_output_in_unit_range():
    model = StrokeShapeModel.initialize(seed=2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        stamp = model.predict(StrokeShape(rng.uniform(0.2, 1.0),
                                          rng.uniform(0.01, 0.05),
                                          rng.uniform(-0.02, 0.02)))
        assert stamp.min() >= 0.0 and stamp.max() <= 1.0


def test_forward_gradient_matches_finite_differences():
    model = StrokeShapeModel.initialize(seed=5)
    for seed in (0, 2, 3, 4):  # generic points; clamp-kink seeds excluded
        rng = np.random.default_rng(seed)
        shape = np.array([rng.uniform(0.3, 0.9), rng.uniform(0.015, 0.045),
                          rng.uniform(-0.015, 0.015)])
        report = ad.check_gradients(
            lambda t: ad.reduce_mean(model.forward_graph(t.graph, t)), shape)
        assert report.passed, report


def test_out_of_range_shape_clamps_and_warns():
    model = StrokeShapeModel.initialize(seed=3)
    before = model.clamp_warnings
    g = ad.Graph()
    out_of_range = g.tensor(np.array([2.0, 0.2, 0.1]))
    stamp = param2stroke_forward(g, model, out_of_range)
    assert model.clamp_warnings == before + 1
    clamped = model.predict(StrokeShape(1.0, 0.05, 0.02))
    np.testing.assert_allclose(stamp.data, clamped, atol=1e-12)


def test_training_is_deterministic():
    ds = generate_dataset(20, seed=9)
    cfg = TrainConfig(epochs=10, seed=4)
    m1, h1 = train_param2stroke(ds, cfg)
    m2, h2 = train_param2stroke(ds, cfg)
    assert h1 == h2
    for a, b in zip(m1.weight_arrays(), m2.weight_arrays()):
        assert a.tobytes() == b.tobytes()


def test_best_epoch_validation_never_worse_than_initial(trained):
    _, _, history = trained
    val = [row[2] for row in history]
    assert min(val) <= val[0]


def test_single_pair_memorization_reaches_capacity_floor():
    pair = generate_dataset(5, seed=3).pairs[0]
    single = StrokeDataset([pair])
    model, history = train_param2stroke(
        single, TrainConfig(epochs=600, learning_rate=0.3,
                            validation_fraction=0.0, seed=0))
    # Independent capacity oracle: the upscaler limits outputs to piecewise-
    # bilinear maps on the seed lattice, so the best reachable training MSE
    # is the least-squares projection error of the target stamp.
    wr = _upsample_matrix(model.seed_shape[0], 4)
    wc = _upsample_matrix(model.seed_shape[1], 4)
    basis = np.kron(wr, wc)
    coeff, *_ = np.linalg.lstsq(basis, pair[1].reshape(-1), rcond=None)
    floor = float((((basis @ coeff).reshape(pair[1].shape) - pair[1]) ** 2).mean())
    final_train = history[-1][1]
    assert final_train <= max(1e-3, 1.1 * floor)
    assert evaluate_model(model, [pair]) < 0.03


def test_evaluate_zero_model_on_zero_stamps():
    model = StrokeShapeModel.initialize(seed=0)
    for name in ("w1", "b1", "w2", "b2", "k1", "c1", "k2", "c2"):
        setattr(model, name, np.zeros_like(getattr(model, name)))
    zeros = np.zeros(model.resolution)
    pairs = [(StrokeShape(0.5, 0.03, 0.0), zeros)]
    assert evaluate_model(model, pairs) == 0.0


def test_trained_beats_untrained_on_held_out_set(trained):
    _, model, _ = trained
    test = generate_dataset(40, seed=321)
    untrained = StrokeShapeModel.initialize(seed=99)
    assert evaluate_model(model, test.pairs) < evaluate_model(untrained, test.pairs)


def test_trained_ink_mass_monotone_in_length(trained):
    _, model, _ = trained
    for th, bd in ((0.6, 0.0), (0.9, 0.01)):
        masses = [model.predict(StrokeShape(th, l, bd)).sum()
                  for l in (0.01, 0.02, 0.03, 0.04, 0.05)]
        assert all(b >= a for a, b in zip(masses, masses[1:])), masses


def test_model_file_roundtrip(tmp_path, trained):
    _, model, _ = trained
    path = tmp_path / "m.p2s"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.resolution == model.resolution
    assert loaded.scale == model.scale
    for a, b in zip(model.weight_arrays(), loaded.weight_arrays()):
        assert a.tobytes() == b.tobytes()
    path2 = tmp_path / "m2.p2s"
    save_model(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_model_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.p2s"
    path.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_model(path)


def test_train_rejects_empty_dataset():
    with pytest.raises(ValueError, match="empty"):
        train_param2stroke(StrokeDataset([]))

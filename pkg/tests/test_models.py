import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggforecast.models import (
    ARCHS,
    DistributionForecaster,
    ModelConfig,
    NumericalError,
    build_network,
    expected_parameter_count,
    load_bundle,
    parameter_count,
    read_header,
    train,
)
from ggforecast.nncore import grad_check

PINNED_COUNTS = {"rnn": 57118, "lstm": 216862, "tcn": 32862, "transformer": 53854}


def windows(n, bins=30, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(bins), size=(n, 5))
    y = rng.dirichlet(np.ones(bins), size=n)
    return X, y


def small(arch, **kw):
    base = dict(bins=10)
    if arch in ("rnn", "lstm"):
        base["hidden"] = 6
    elif arch == "tcn":
        base["filters"] = 4
    else:
        base.update(d_model=8, heads=4, d_ff=12, blocks=2)
    return ModelConfig.for_arch(arch, **{**base, **kw})


@pytest.mark.parametrize("arch", ARCHS)
def test_parameter_counts_pinned(arch):
    cfg = ModelConfig.for_arch(arch)
    assert expected_parameter_count(cfg) == PINNED_COUNTS[arch]
    assert parameter_count(build_network(cfg)) == PINNED_COUNTS[arch]


@pytest.mark.parametrize("arch", ARCHS)
@pytest.mark.parametrize("bins", [10, 50])
def test_parameter_counts_closed_form(arch, bins):
    cfg = ModelConfig.for_arch(arch, bins=bins)
    assert parameter_count(build_network(cfg)) == expected_parameter_count(cfg)


def test_config_invariants():
    with pytest.raises(ValueError, match="not divisible"):
        ModelConfig.for_arch("transformer", d_model=30)
    with pytest.raises(ValueError):
        ModelConfig(window=4)
    with pytest.raises(ValueError):
        ModelConfig(bins=60)
    with pytest.raises(ValueError):
        ModelConfig.for_arch("gru")
    cfg = ModelConfig.for_arch("transformer", blocks=2)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_arch_defaults():
    assert ModelConfig.for_arch("rnn").batch_size == 128
    assert ModelConfig.for_arch("lstm").output_activation == "leaky_relu"
    assert ModelConfig.for_arch("tcn").output_activation == "relu"
    assert ModelConfig.for_arch("transformer").batch_size == 32


@pytest.mark.parametrize("arch", ARCHS)
def test_shape_mismatch_raises(arch):
    net = build_network(ModelConfig.for_arch(arch))
    with pytest.raises(ValueError, match="expected input"):
        net.forward(np.zeros((2, 4, 30), dtype=np.float32))


@pytest.mark.parametrize("arch", ["rnn", "lstm"])
def test_recurrent_zero_weights_give_head_bias(arch):
    net = build_network(ModelConfig.for_arch(arch), dtype=np.float64)
    for p in net.parameters():
        p.value[...] = 0.0
    net.head.b.value[...] = np.linspace(-1, 1, 30)
    out = net.forward(np.zeros((1, 5, 30)))
    b = net.head.b.value
    expected = np.maximum(b, 0) if arch == "rnn" else np.where(b > 0, b, 0.01 * b)
    np.testing.assert_array_equal(out[0], expected)


@pytest.mark.parametrize("arch", ARCHS)
def test_full_model_gradcheck(arch):
    # seed 0 keeps every ReLU pre-activation well away from its kink
    net = build_network(small(arch), seed=0, dtype=np.float64)
    X, _ = windows(4, bins=10, seed=2)
    report = grad_check(net, X, tolerance=1e-4, rng=np.random.default_rng(3), training=False, max_entries=8)
    assert report.passed, report.errors


def test_tcn_gradcheck_training_mode_batchnorm():
    net = build_network(small("tcn"), seed=1, dtype=np.float64)
    X, _ = windows(6, bins=10, seed=2)
    report = grad_check(net, X, rng=np.random.default_rng(4), training=True, max_entries=8)
    assert report.passed, report.errors


def test_tcn_training_batch_of_one_raises():
    net = build_network(ModelConfig.for_arch("tcn"))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 5, 30), dtype=np.float32), training=True)


def test_tcn_within_window_causality():
    net = build_network(ModelConfig.for_arch("tcn"), seed=0, dtype=np.float64)
    X, _ = windows(3)
    X2 = X.copy()
    X2[:, 4] = np.random.default_rng(9).random((3, 30))
    for a, b in zip(net.conv_outputs(X), net.conv_outputs(X2)):
        np.testing.assert_array_equal(a[:, :4], b[:, :4])
        assert not np.allclose(a[:, 4], b[:, 4])


def test_transformer_attention_is_causal():
    net = build_network(ModelConfig.for_arch("transformer"), seed=0, dtype=np.float64)
    X, _ = windows(2)
    net.forward(X)
    for block in net.blocks:
        A = block.attn.attention_weights
        assert np.all(A[..., np.triu_indices(5, 1)[0], np.triu_indices(5, 1)[1]] == 0)
        np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(ARCHS), st.integers(0, 2**31 - 1))
def test_outputs_finite_and_nonnegative(arch, seed):
    net = build_network(ModelConfig.for_arch(arch), seed=seed % 7)
    X = np.random.default_rng(seed).dirichlet(np.ones(30), size=(3, 5)).astype(np.float32)
    out = net.forward(X)
    assert out.shape == (3, 30) and np.all(np.isfinite(out))
    if ModelConfig.for_arch(arch).output_activation == "relu":
        assert np.all(out >= 0)
    else:
        pre = net.head.forward(net.head._x)
        assert np.all(out >= -0.01 * np.max(np.abs(pre)) - 1e-7)


@pytest.mark.parametrize("arch", ARCHS)
def test_persistence_round_trip_is_bit_exact(arch, tmp_path):
    X, y = windows(20, seed=5)
    bundle, _ = train(ModelConfig.for_arch(arch, epochs=2, batch_size=8), X, y, X[:4], y[:4], seed=3)
    path = tmp_path / f"{arch}.ggw"
    bundle.save(path)
    back = load_bundle(path, expect_arch=arch)
    assert back.config == bundle.config and back.seed == 3
    assert back.metadata == bundle.metadata
    for a, b in zip(bundle.network.parameters(), back.network.parameters()):
        assert a.name == b.name
        np.testing.assert_array_equal(a.value, b.value)
    buffers = back.network.buffers()
    for name, value in bundle.network.buffers().items():
        np.testing.assert_array_equal(value, buffers[name])
    np.testing.assert_array_equal(bundle.predict(X), back.predict(X))
    bundle.save(tmp_path / "again.ggw")
    assert path.read_bytes() == (tmp_path / "again.ggw").read_bytes()


def test_load_rejects_arch_mismatch_and_garbage(tmp_path):
    X, y = windows(8)
    bundle, _ = train(ModelConfig.for_arch("rnn", epochs=1), X, y, X, y)
    bundle.save(tmp_path / "m.ggw")
    assert read_header(tmp_path / "m.ggw")["arch"] == "rnn"
    with pytest.raises(ValueError, match="arch"):
        load_bundle(tmp_path / "m.ggw", expect_arch="lstm")
    (tmp_path / "bad.ggw").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_bundle(tmp_path / "bad.ggw")


@pytest.mark.parametrize("arch", ARCHS)
def test_training_is_deterministic(arch):
    X, y = windows(24, seed=1)
    cfg = ModelConfig.for_arch(arch, epochs=3, batch_size=8)
    _, h1 = train(cfg, X, y, X[:6], y[:6], seed=11)
    _, h2 = train(cfg, X, y, X[:6], y[:6], seed=11)
    assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
    _, h3 = train(cfg, X, y, X[:6], y[:6], seed=12)
    assert h3.train_loss != h1.train_loss


def test_train_does_not_mutate_inputs():
    X, y = windows(16, seed=2)
    Xv, yv = X[:4].astype(np.float32), y[:4].astype(np.float32)
    copies = [a.copy() for a in (X, y, Xv, yv)]
    train(ModelConfig.for_arch("tcn", epochs=2, batch_size=8), X, y, Xv, yv)
    for a, b in zip((X, y, Xv, yv), copies):
        np.testing.assert_array_equal(a, b)


def test_train_history_csv_and_metadata():
    X, y = windows(16)
    bundle, hist = train(ModelConfig.for_arch("rnn", epochs=4, batch_size=8), X, y, X[:4], y[:4], seed=1)
    lines = hist.to_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 5
    assert bundle.metadata["epochs_run"] == 4
    assert 1 <= bundle.metadata["best_val_epoch"] <= 4
    assert bundle.metadata["final_val_loss"] == hist.val_loss[-1]


def test_train_rejects_empty_and_non_finite():
    X, y = windows(8)
    with pytest.raises(ValueError):
        train(ModelConfig.for_arch("rnn", epochs=1), X[:0], y[:0], X, y)
    y_bad = y.copy()
    y_bad[0, 0] = np.inf
    with pytest.raises(NumericalError, match="epoch 1"):
        train(ModelConfig.for_arch("rnn", epochs=1), X, y_bad, X, y)


def test_estimator_api():
    X, y = windows(40, seed=4)
    est = DistributionForecaster(arch="tcn", epochs=2, random_state=0)
    assert est.get_params()["arch"] == "tcn"
    assert est.set_params(epochs=3).epochs == 3
    est.fit(X, y)
    assert est.predict(X).shape == (40, 30)
    assert est.score(X, y) <= 0
    run = est.forecast(X[0], 4)
    assert run.predictions.shape == (4, 30)
    with pytest.raises(ValueError):
        est.predict(X[:, :4])

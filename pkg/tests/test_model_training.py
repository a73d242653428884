import hashlib
import math

import numpy as np
import pytest

from dulearn.errors import ContractViolation, DivergenceError, MissingInputError
from dulearn.losses import ClassifierWeights, ClsLossConfig, SoftmaxConfig, cls_total_loss, batch_het_loss
from dulearn.model import (
    EncoderModel,
    PARAM_ORDER,
    TRUNK_PARAMS,
    load_checkpoint,
    predict_labels,
    save_checkpoint,
)
from dulearn.synthdata import FuncSpec, gen_hetreg, gen_identities, corrupt_fraction
from dulearn.training import (
    REGRESSION_LOSS,
    SgdState,
    TrainConfig,
    gradient_check,
    step_decay_lr,
    train_baseline,
    train_dul_cls,
    train_dul_rgs,
    train_hetreg,
    triangular_lr,
)
from dulearn.embeddings import sigma_from_raw


def small_dataset(seed=3, num_classes=2, per_class=40, spread=1.5, noise=0.05):
    return gen_identities(num_classes=num_classes, per_class=per_class, input_dim=6,
                          center_spread=spread, base_noise=noise, seed=seed)


def cls_config(steps=150, lam=0.01, seed=5, **kw):
    return TrainConfig(steps=steps, batch_size=32, max_lr=0.05, seed=seed,
                       loss=ClsLossConfig(SoftmaxConfig.for_variant("am-softmax"), lam=lam), **kw)


def fresh_model_and_weights(ds, embed_dim=8, hidden=32, seed=1):
    model = EncoderModel.create(ds.input_dim, hidden, embed_dim, seed=seed)
    w = ClassifierWeights.random_normalized(embed_dim, ds.num_classes,
                                            np.random.default_rng(seed + 100))
    return model, w


def params_digest(model, weights):
    h = hashlib.blake2b(digest_size=16)
    for name in PARAM_ORDER:
        h.update(model.params[name].tobytes())
    h.update(weights.w.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_triangular_lr_examples():
    assert triangular_lr(0, 100, 0.001, 0.1) == pytest.approx(0.001)
    assert triangular_lr(50, 100, 0.001, 0.1) == pytest.approx(0.1)
    assert triangular_lr(75, 100, 0.0, 0.1) == pytest.approx(0.05)


def test_triangular_lr_range_check():
    with pytest.raises(ContractViolation):
        triangular_lr(100, 100, 0.0, 0.1)
    with pytest.raises(ContractViolation):
        triangular_lr(-1, 100, 0.0, 0.1)


def test_step_decay_schedule():
    assert step_decay_lr(0, 1000, 0.01) == pytest.approx(0.01)
    assert step_decay_lr(399, 1000, 0.01) == pytest.approx(0.01)
    assert step_decay_lr(400, 1000, 0.01) == pytest.approx(0.001)
    assert step_decay_lr(600, 1000, 0.01) == pytest.approx(0.0001)
    with pytest.raises(ContractViolation):
        step_decay_lr(1000, 1000, 0.01)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_weight_decay_matches_l2_augmented_loss():
    # one step with decay d == one step on loss + (d/2)||p||^2 with no decay
    rng = np.random.default_rng(0)
    p1 = {"a": rng.standard_normal((3, 2))}
    p2 = {"a": p1["a"].copy()}
    g = rng.standard_normal((3, 2))
    d = 0.37
    SgdState(momentum=0.9, weight_decay=d).update(p1, {"a": g.copy()}, lr=0.1)
    SgdState(momentum=0.9, weight_decay=0.0).update(p2, {"a": g + d * p2["a"]}, lr=0.1)
    assert np.array_equal(p1["a"], p2["a"])


def test_sgd_skip_leaves_params_untouched():
    rng = np.random.default_rng(1)
    p = {"a": rng.standard_normal(4), "b": rng.standard_normal(4)}
    before = p["a"].copy()
    SgdState(0.9, 0.1).update(p, {"a": np.ones(4), "b": np.ones(4)}, lr=0.5, skip={"a"})
    assert np.array_equal(p["a"], before)
    assert not np.array_equal(p["b"], np.zeros(4))


# ---------------------------------------------------------------------------
# model forward/backward and checkpoints
# ---------------------------------------------------------------------------

def test_model_gradient_through_cls_loss():
    # gradient_check over all model parameters with the full pipeline loss
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds, embed_dim=4, hidden=8)
    x = ds.x[:6]
    y = ds.labels[:6]
    eps = np.random.default_rng(2).standard_normal((6, 4))
    cfg = ClsLossConfig(SoftmaxConfig.for_variant("am-softmax", scale=8.0), lam=0.05)
    names = list(PARAM_ORDER)

    def loss_fn(params):
        for k, name in enumerate(names):
            model.params[name] = params[k]
        mu, r, cache = model.forward(x)
        sigma = sigma_from_raw(r)
        res = cls_total_loss(mu, sigma, eps, y, w, cfg)
        dr = res.grad_sigma * sigma * 0.5
        grads = model.backward(cache, res.grad_mu, dr)
        return res.value, [grads[name] for name in names]

    report = gradient_check(loss_fn, [model.params[n] for n in names], tolerance=1e-4)
    assert report.passed, report.max_rel_error


def test_gradient_check_quadratic_exact():
    def loss_fn(params):
        (p,) = params
        return float(np.sum(p * p)), [2.0 * p]

    report = gradient_check(loss_fn, [np.random.default_rng(3).standard_normal(5)])
    assert report.max_rel_error < 1e-9


def test_gradient_check_het_loss():
    rng = np.random.default_rng(4)
    mu = rng.standard_normal((4, 3))
    r = rng.uniform(-2, 2, (4, 3))
    t = rng.standard_normal((4, 3))

    def loss_fn(params):
        res = batch_het_loss(params[0], params[1], t)
        return res.value, [res.grad_mu, res.grad_r]

    assert gradient_check(loss_fn, [mu, r], tolerance=1e-4).passed


def test_checkpoint_round_trip(tmp_path):
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds)
    model, w, _ = train_baseline(ds, model, w, cls_config(steps=30))
    path = tmp_path / "ck.bin"
    save_checkpoint(path, model, w, {"mode": "baseline", "seed": 5})
    m2, w2, meta = load_checkpoint(path)
    for name in PARAM_ORDER:
        assert np.array_equal(model.params[name], m2.params[name])
    assert np.array_equal(w.w, w2.w)
    assert meta["mode"] == "baseline"
    assert m2.frozen_trunk == model.frozen_trunk


def test_checkpoint_errors(tmp_path):
    with pytest.raises(MissingInputError):
        load_checkpoint(tmp_path / "missing.bin")
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(ContractViolation):
        load_checkpoint(bad)


# ---------------------------------------------------------------------------
# trainers
# ---------------------------------------------------------------------------

def test_baseline_separable_accuracy():
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds)
    _, _, log = train_baseline(ds, model, w, cls_config(steps=200))
    assert log.train_accuracy == 1.0
    assert len(log.loss) == 200
    assert np.all(np.isfinite(log.loss))


def test_dul_cls_separable_accuracy():
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds)
    _, _, log = train_dul_cls(ds, model, w, cls_config(steps=200))
    assert log.train_accuracy == 1.0


def test_training_deterministic():
    ds = small_dataset()
    logs = []
    digests = []
    for _ in range(2):
        model, w = fresh_model_and_weights(ds)
        model, w, log = train_dul_cls(ds, model, w, cls_config(steps=80))
        logs.append(log)
        digests.append(params_digest(model, w))
    assert np.array_equal(logs[0].loss, logs[1].loss)
    assert np.array_equal(logs[0].sigma_bar, logs[1].sigma_bar)
    assert digests[0] == digests[1]


def test_degeneracy_zero_eps_matches_baseline():
    # lam = 0 and eps forced to zero must retrace the baseline bit for bit
    ds = small_dataset()
    traces = {}
    for kind in ("baseline", "dul"):
        model, w = fresh_model_and_weights(ds)
        trace = []
        hook = lambda step, m, wts: trace.append(params_digest(m, wts))
        cfg = cls_config(steps=120, lam=0.0)
        if kind == "baseline":
            train_baseline(ds, model, w, cfg, on_step=hook)
        else:
            train_dul_cls(ds, model, w, cfg, zero_eps=True, on_step=hook)
        traces[kind] = trace
    assert traces["baseline"] == traces["dul"]


def test_sigma_bar_grows_with_lambda():
    ds = gen_identities(num_classes=8, per_class=40, input_dim=6,
                        center_spread=0.4, base_noise=0.15, seed=5)
    means = {}
    for lam in (0.0, 0.01):
        model = EncoderModel.create(6, 32, 8, seed=11)
        w = ClassifierWeights.random_normalized(8, 8, np.random.default_rng(12))
        cfg = TrainConfig(steps=600, batch_size=32, max_lr=0.05, seed=13,
                          loss=ClsLossConfig(SoftmaxConfig.for_variant("am-softmax"), lam=lam))
        _, _, log = train_dul_cls(ds, model, w, cfg)
        means[lam] = float(log.sigma_bar.mean())
    assert means[0.0] < means[0.01]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_guard():
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds, embed_dim=4, hidden=16)
    cfg = TrainConfig(steps=200, batch_size=16, max_lr=1e9, weight_decay=0.0, seed=3,
                      loss=ClsLossConfig(SoftmaxConfig(variant="plain", margin=0.0, scale=1.0),
                                         lam=0.0))
    with pytest.raises(DivergenceError):
        train_baseline(ds, model, w, cfg)


def test_rgs_frozen_trunk_bit_identical():
    ds = small_dataset(num_classes=3, per_class=30, spread=0.8)
    model, w = fresh_model_and_weights(ds)
    model, w, _ = train_baseline(ds, model, w, cls_config(steps=150))
    trunk_before = {n: model.params[n].copy() for n in TRUNK_PARAMS}
    cfg = TrainConfig(steps=120, batch_size=32, max_lr=0.01, seed=9, loss=REGRESSION_LOSS)
    trained, log = train_dul_rgs(ds, model, w, cfg)
    for name in TRUNK_PARAMS:
        assert np.array_equal(trained.params[name], trunk_before[name])
        assert np.array_equal(model.params[name], trunk_before[name])
    assert trained.frozen_trunk
    assert len(log.loss) == 120
    # heads were re-initialized, not copied
    assert not np.array_equal(trained.params["wm"], model.params["wm"])


def test_rgs_near_centered_data_drives_r_to_floor():
    # zero-noise clusters: residuals collapse, r runs to the clamp and the
    # loss settles at the floor value -R_CLAMP / 2 per dimension.
    # momentum is off here: as r falls the exp(-r) curvature grows without
    # bound and a momentum run at this rate oscillates instead of settling.
    ds = small_dataset(num_classes=2, per_class=50, spread=1.5, noise=0.0)
    model, w = fresh_model_and_weights(ds, embed_dim=4, hidden=24)
    model, w, blog = train_baseline(ds, model, w, cls_config(steps=400))
    assert blog.train_accuracy == 1.0
    cfg = TrainConfig(steps=12000, batch_size=32, max_lr=0.05, weight_decay=0.0,
                      momentum=0.0, seed=9, loss=REGRESSION_LOSS)
    trained, log = train_dul_rgs(ds, model, w, cfg)
    assert log.loss[-1] == pytest.approx(-7.5, abs=0.2)
    assert log.clamped_total > 0
    assert log.sigma_bar[-1] < 0.01


def test_rgs_noisy_half_gets_larger_sigma():
    ds = gen_identities(num_classes=4, per_class=60, input_dim=6,
                        center_spread=0.6, base_noise=0.05, seed=21)
    ds = corrupt_fraction(ds, 0.5, 1.5, seed=22)
    noisy = ds.noise_levels > ds.noise_levels.min()
    model, w = fresh_model_and_weights(ds)
    model, w, _ = train_baseline(ds, model, w, cls_config(steps=300))
    cfg = TrainConfig(steps=600, batch_size=32, max_lr=0.01, seed=9, loss=REGRESSION_LOSS)
    trained, _ = train_dul_rgs(ds, model, w, cfg)
    _, sigma = trained.embed(ds.x)
    score = sigma.shape[1] / np.sum(1.0 / sigma, axis=1)
    assert score[noisy].mean() > score[~noisy].mean()


def test_rgs_determinism():
    ds = small_dataset(num_classes=3, per_class=30, spread=0.8)
    model, w = fresh_model_and_weights(ds)
    model, w, _ = train_baseline(ds, model, w, cls_config(steps=100))
    cfg = TrainConfig(steps=80, batch_size=32, max_lr=0.01, seed=9, loss=REGRESSION_LOSS)
    t1, log1 = train_dul_rgs(ds, model, w, cfg)
    t2, log2 = train_dul_rgs(ds, model, w, cfg)
    assert np.array_equal(log1.loss, log2.loss)
    for name in PARAM_ORDER:
        assert np.array_equal(t1.params[name], t2.params[name])


def test_rgs_requires_regression_marker():
    ds = small_dataset()
    model, w = fresh_model_and_weights(ds)
    with pytest.raises(ContractViolation):
        train_dul_rgs(ds, model, w, cls_config(steps=10))


def test_train_hetreg_smoke():
    ds = gen_hetreg(400, FuncSpec("affine", (1.0, 0.0)), FuncSpec("affine", (0.3, 0.1)),
                    (0.0, 1.0), seed=2)
    model = EncoderModel.create(1, 16, 1, seed=3)
    cfg = TrainConfig(steps=400, batch_size=32, max_lr=0.02, weight_decay=1e-5,
                      seed=4, loss=REGRESSION_LOSS)
    model, log = train_hetreg(ds, model, cfg)
    assert np.all(np.isfinite(log.loss))
    assert log.loss[-1] < log.loss[:20].mean()  # it actually learns


def test_predict_labels_tie_breaks_low_index():
    ds = small_dataset()
    model, _ = fresh_model_and_weights(ds, embed_dim=4)
    # two identical columns: argmax must pick the lower class index
    w = ClassifierWeights(np.tile(np.array([[1.0], [0.0], [0.0], [0.0]]), (1, 2)))
    preds = predict_labels(model, w, ds.x[:10])
    assert np.all(preds == 0)

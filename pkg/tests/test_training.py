import numpy as np
import pytest

from invlab import model, training
from invlab.datasynth import GeneratorConfig, generate_dataset
from invlab.nncore import Mode
from invlab.training import AdamState, EarlyStopping, TrainConfig, adam_step


@pytest.fixture(scope="module")
def toy():
    trials = generate_dataset(15, GeneratorConfig(snr_texture=1.5, leak_movement=1.0, seed=3))
    idx = np.arange(len(trials))
    return trials.subset(idx[:60]), trials.subset(idx[60:])


# --- Adam --------------------------------------------------------------------

def test_adam_first_step_is_lr():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p))
    assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([0.3, -2.0])}
    before = p["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p))
    np.testing.assert_array_equal(p["w"], before)


def test_adam_ascent_equals_descent_on_negated(rng):
    g = rng.standard_normal(5)
    a = {"w": rng.standard_normal(5)}
    b = {"w": a["w"].copy()}
    sa, sb = AdamState.zeros_like(a), AdamState.zeros_like(b)
    for _ in range(3):
        adam_step(a, {"w": g}, sa, direction="ascent")
        adam_step(b, {"w": -g}, sb)
    np.testing.assert_array_equal(a["w"], b["w"])


def test_adam_shape_mismatch():
    p = {"w": np.zeros(3)}
    with pytest.raises(ValueError, match="shape"):
        adam_step(p, {"w": np.zeros(4)}, AdamState.zeros_like(p))


# --- early stopping ----------------------------------------------------------

def test_patience_sequence():
    seq = [1.0, 0.9] + [0.9 + 0.01 * (i + 1) for i in range(10)]
    es = EarlyStopping(10)
    for n, v in enumerate(seq, 1):
        es.update(v)
        if es.should_stop:
            break
    assert n == 12 and es.best_epoch == 2


def test_train_returns_min_validation_checkpoint(toy, monkeypatch):
    scripted = iter([1.0, 0.9] + [0.9 + 0.01 * (i + 1) for i in range(20)])
    real = model.forward_losses

    def fake(X, ys, ym, net, lam, mode=Mode.TRAIN, rng=None, update_state=True):
        out = real(X, ys, ym, net, lam, mode, rng, update_state)
        if mode is Mode.INFER:
            out.L_c = next(scripted)
        return out

    monkeypatch.setattr(training.model, "forward_losses", fake)
    snapshots = {}

    def on_step(kind, epoch, bi, net):
        snapshots[epoch] = net.digest()

    train, val = toy
    ckpt, hist = training.train_adversarial(train, val, model.build_network(seed=0),
                                            TrainConfig(max_epochs=100, patience=10),
                                            on_step=on_step)
    assert len(hist.rows) == 12
    assert hist.best_epoch == ckpt.epoch == 2
    assert ckpt.net.digest() == snapshots[2]


# --- the training loop -------------------------------------------------------

def _trajectory(train, val, lam, update_adversary, epochs=3, seed=0):
    digests = []

    def on_step(kind, epoch, bi, net):
        if kind == "B":
            digests.append((net.digest("encoder"), net.digest("classifier")))

    training.train_adversarial(train, val, model.build_network(seed=seed),
                               TrainConfig(lam=lam, max_epochs=epochs, seed=seed),
                               update_adversary=update_adversary, on_step=on_step)
    return digests


def test_lambda_zero_trajectory_ignores_adversary(toy):
    train, val = toy
    with_adv = _trajectory(train, val, 0.0, True)
    without = _trajectory(train, val, 0.0, False)
    assert len(with_adv) == len(without) > 0
    assert with_adv == without


def test_positive_lambda_trajectory_depends_on_adversary(toy):
    train, val = toy
    assert _trajectory(train, val, 0.5, True, epochs=1) != _trajectory(train, val, 0.5, False,
                                                                      epochs=1)


def test_steps_touch_only_their_groups(toy):
    train, val = toy
    last = {}

    def on_step(kind, epoch, bi, net):
        now = {g: net.digest(g) for g in model.GROUPS}
        if last:
            frozen = ("encoder", "classifier") if kind == "A" else ("adversary",)
            for g in frozen:
                assert now[g] == last[g], (kind, g)
            moved = "adversary" if kind == "A" else "encoder"
            assert now[moved] != last[moved]
        last.update(now)

    training.train_adversarial(train, val, model.build_network(seed=1),
                               TrainConfig(lam=0.2, max_epochs=1), on_step=on_step)


def test_training_is_deterministic(toy):
    train, val = toy
    cfg = TrainConfig(lam=0.1, max_epochs=2, seed=4)
    a, ha = training.train_adversarial(train, val, model.build_network(seed=4), cfg)
    b, hb = training.train_adversarial(train, val, model.build_network(seed=4), cfg)
    assert a.net.digest() == b.net.digest()
    assert ha.rows == hb.rows


def test_toy_set_reaches_high_accuracy(toy):
    train, val = toy
    ckpt, hist = training.train_adversarial(train, val, model.build_network(seed=0),
                                            TrainConfig(max_epochs=50))
    assert max(hist.column("val_acc_c")) > 0.9


def test_history_csv(tmp_path, toy):
    train, val = toy
    _, hist = training.train_adversarial(train, val, model.build_network(),
                                         TrainConfig(max_epochs=2))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].split(",") == list(training.HISTORY_COLUMNS)
    assert len(lines) == 3


def test_invalid_config_rejected(toy):
    train, val = toy
    with pytest.raises(ValueError):
        training.train_adversarial(train, val, model.build_network(), TrainConfig(lam=-0.1))
    with pytest.raises(ValueError):
        training.train_adversarial(train, val.subset([]), model.build_network(), TrainConfig())


# --- evaluation --------------------------------------------------------------

def test_zero_heads_accuracy_is_first_class_share(toy):
    _, val = toy
    net = model.build_network(zero_heads=True)
    m = training.evaluate(net, val)
    assert m["classifier_accuracy"] == np.mean(val.l_s == 0)
    assert m["adversary_accuracy"] == np.mean(val.l_m == 0)
    assert m["confusion_3x3"][:, 1:].sum() == 0


def test_accuracy_is_trace_over_sum(toy):
    _, val = toy
    m = training.evaluate(model.build_network(seed=2), val)
    cm = m["confusion_3x3"]
    assert m["classifier_accuracy"] == np.trace(cm) / cm.sum()
    assert cm.sum() == len(val)


def test_confusion_diagonal_when_perfect():
    y = np.array([0, 1, 2, 2, 1])
    cm = training.confusion(y, y, 3)
    assert np.array_equal(cm, np.diag([1, 2, 2]))

import numpy as np
import pytest

from FEATnorm.adv_trainer import (
    BASELINE,
    SNP,
    TAP,
    ModelAssembly,
    TrainConfig,
    build_assembly,
    dumps_assembly,
    emotion_step,
    load_assembly,
    loads_assembly,
    predict,
    restore,
    save_assembly,
    snapshot,
    speaker_step,
    train,
)
from FEATnorm.data_synth import SynthSpec, generate, split_speaker_independent
from FEATnorm.metrics import weighted_accuracy
from FEATnorm.nn_core import (
    ASCENT,
    DESCENT,
    DenseLayer,
    Mlp,
    apply_update,
    backward,
    finite_diff_grad,
    forward,
    init_mlp,
    softmax_cross_entropy,
)
from FEATnorm.utils import ContractError, ParseError, ValidationError


def make_model(strategy, seed=0, input_dim=6):
    return build_assembly(input_dim, 4, 10, strategy=strategy, upstream_dims=(8, 5), seed=seed)


def speaker_batch(seed=0, rows=12, input_dim=6):
    gen = np.random.default_rng(seed)
    return gen.normal(size=(rows, input_dim)), gen.integers(0, 10, size=rows)


def emotion_batch(seed=0, rows=12, input_dim=6):
    gen = np.random.default_rng(seed + 1000)
    return gen.normal(size=(rows, input_dim)), gen.integers(0, 4, size=rows)


def test_build_assembly_projector_only_for_snp():
    assert make_model(SNP).projector is not None
    assert make_model(TAP).projector is None
    assert make_model(BASELINE).projector is None
    snp = make_model(SNP)
    assert snp.projector.in_dim == snp.projector.out_dim == 5
    assert snp.projector.layers[0].activation == "tanh"


def test_assembly_invariants():
    model = make_model(TAP)
    model.check(TAP)
    model.check(BASELINE)
    with pytest.raises(ContractError):
        model.check(SNP)
    with pytest.raises(ContractError):
        make_model(SNP).check(TAP)
    with pytest.raises(ValidationError):
        ModelAssembly(model.upstream, init_mlp([4, 4], "identity", 0), model.speaker_head)
    with pytest.raises(ValidationError, match="non-linear"):
        ModelAssembly(model.upstream, model.emotion_head, model.speaker_head, projector=init_mlp([5, 5], "identity", 0))


def test_train_config_forces_zero_lambda_for_baseline():
    config = TrainConfig(lam=0.5, strategy=BASELINE)
    assert config.lam == 0.0
    assert TrainConfig().to_dict()["lambda"] == 0.001
    with pytest.raises(ValidationError):
        TrainConfig(eta=-1.0)
    with pytest.raises(ValidationError):
        TrainConfig(strategy="GRL")
    assert TrainConfig(epochs=3).replace(eta=0.2).epochs == 3


@pytest.mark.parametrize("strategy", [BASELINE, TAP, SNP])
def test_emotion_step_zero_rate_changes_nothing(strategy):
    model = make_model(strategy)
    before = model.digest()
    _, loss = emotion_step(model, *emotion_batch(), eta=0.0, strategy=strategy)
    assert model.digest() == before
    assert np.isfinite(loss) and loss > 0.0


@pytest.mark.parametrize("strategy", [BASELINE, TAP, SNP])
def test_emotion_step_never_touches_speaker_head(strategy):
    model = make_model(strategy)
    before = model.digest()
    emotion_step(model, *emotion_batch(), eta=0.1, strategy=strategy)
    after = model.digest()
    assert after["speaker_head"] == before["speaker_head"]
    assert after["upstream"] != before["upstream"]
    assert after["emotion_head"] != before["emotion_head"]
    if strategy == SNP:
        assert after["projector"] != before["projector"]


def test_emotion_step_one_parameter_by_hand():
    # one input, one weight into a two-logit head
    upstream = Mlp([DenseLayer([[0.5]], [0.0], "identity")])
    emotion_head = Mlp([DenseLayer([[1.0, -1.0]], [0.0, 0.0], "identity")])
    speaker_head = Mlp([DenseLayer([[1.0, 0.0]], [0.0, 0.0], "identity")])
    model = ModelAssembly(upstream, emotion_head, speaker_head)
    x = np.array([[2.0]])
    y = np.array([0])

    def loss_fn(net):
        z, _ = forward(net, x)
        out, _ = forward(emotion_head, z)
        return softmax_cross_entropy(out, y)[0]

    # z = 1, logits (1, -1): dL/dz = (p0 - 1) - p1 with p0 = 1 / (1 + e^-2)
    p0 = 1.0 / (1.0 + np.exp(-2.0))
    dz = (p0 - 1.0) * 1.0 + (1.0 - p0) * -1.0
    expected = 0.5 - 0.1 * dz * 2.0
    oracle = 0.5 - 0.1 * finite_diff_grad(loss_fn, upstream.copy()).weights[0][0, 0]

    emotion_step(model, x, y, eta=0.1, strategy=TAP)
    assert upstream.layers[0].weight[0, 0] == pytest.approx(expected, abs=1e-12)
    assert upstream.layers[0].weight[0, 0] == pytest.approx(oracle, abs=1e-8)


def test_emotion_step_label_range():
    model = make_model(TAP)
    x, _ = emotion_batch()
    with pytest.raises(ValidationError):
        emotion_step(model, x, np.full(len(x), 4), 0.1, TAP)
    with pytest.raises(ValidationError):
        emotion_step(model, x[:0], np.zeros(0, dtype=int), 0.1, TAP)


def test_speaker_step_zero_lambda_moves_head_only():
    model = make_model(TAP)
    before = model.digest()
    speaker_step(model, *speaker_batch(), eta=0.1, lam=0.0, strategy=TAP)
    after = model.digest()
    assert after["upstream"] == before["upstream"]
    assert after["emotion_head"] == before["emotion_head"]
    assert after["speaker_head"] != before["speaker_head"]


def test_speaker_step_zero_lambda_snp_projector_unchanged():
    model = make_model(SNP)
    before = model.digest()
    speaker_step(model, *speaker_batch(), eta=0.1, lam=0.0, strategy=SNP)
    assert model.digest()["projector"] == before["projector"]
    assert model.digest()["upstream"] == before["upstream"]


def test_speaker_step_under_baseline_is_a_contract_error():
    with pytest.raises(ContractError):
        speaker_step(make_model(BASELINE), *speaker_batch(), eta=0.1, lam=0.0, strategy=BASELINE)


def test_snp_freezes_upstream_over_many_speaker_steps():
    model = make_model(SNP, seed=1)
    before = model.upstream.digest()
    projector_before = model.projector.digest()
    n_backward = model.upstream.n_backward
    for i in range(1000):
        speaker_step(model, *speaker_batch(seed=i, rows=4), eta=0.05, lam=0.01, strategy=SNP)
    assert model.upstream.digest() == before
    assert model.upstream.n_backward == n_backward
    assert model.projector.digest() != projector_before


def test_tap_speaker_steps_move_upstream():
    model = make_model(TAP, seed=1)
    before = model.upstream.digest()
    for i in range(10):
        speaker_step(model, *speaker_batch(seed=i, rows=4), eta=0.05, lam=0.01, strategy=TAP)
    assert model.upstream.digest() != before


def test_tap_ascent_matches_finite_differences():
    model = build_assembly(3, 2, 3, strategy=TAP, upstream_dims=(4,), upstream_activation="tanh", seed=2)
    gen = np.random.default_rng(5)
    x = gen.normal(size=(6, 3))
    y = gen.integers(0, 3, size=6)
    lam = 0.01

    def speaker_loss(net):
        z, _ = forward(net, x)
        out, _ = forward(model.speaker_head, z)
        return softmax_cross_entropy(out, y)[0]

    g = finite_diff_grad(speaker_loss, model.upstream.copy())
    start = [p.copy() for p in model.upstream.parameters()]
    speaker_step(model, x, y, eta=0.1, lam=lam, strategy=TAP)
    for before, after, grad in zip(start, model.upstream.parameters(), g.arrays()):
        np.testing.assert_allclose(after - before, lam * grad, rtol=1e-4, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_speaker_ascent_equals_descent_on_negated_loss(seed):
    model = make_model(TAP, seed=seed)
    manual = snapshot(model)
    x, y = speaker_batch(seed=seed)
    eta, lam = 0.05, 0.003

    speaker_step(model, x, y, eta=eta, lam=lam, strategy=TAP)

    h, h_cache = forward(manual.upstream, x)
    out, s_cache = forward(manual.speaker_head, h)
    _, dout = softmax_cross_entropy(out, y)
    g_speaker, dz = backward(manual.speaker_head, s_cache, dout)
    g_up, _ = backward(manual.upstream, h_cache, dz)
    apply_update(manual.speaker_head, g_speaker, eta, DESCENT)
    # descent on the negated speaker loss
    apply_update(manual.upstream, -g_up, lam, DESCENT)

    assert manual.digest() == model.digest()


def test_baseline_training_has_no_speaker_steps(small_data, small_split, baseline_config):
    model = build_assembly(6, 4, 10, strategy=BASELINE, upstream_dims=(8, 5), seed=0)
    report = train(model, small_data, small_split, None, baseline_config)
    assert report.speaker_steps == 0
    assert report.emotion_steps > 0
    assert all(loss is None for loss in report.speaker_loss)
    assert len(report.validation_wa) == baseline_config.epochs


def test_training_is_deterministic(small_data, small_split, fast_config):
    reports = []
    for _ in range(2):
        model = build_assembly(6, 4, 10, strategy=TAP, upstream_dims=(8, 5), seed=0)
        report = train(model, small_data, small_split, None, fast_config)
        reports.append((report.to_dict(), report.best_model.digest(), model.digest()))
    assert reports[0] == reports[1]
    assert reports[0][0]["speaker_steps"] == reports[0][0]["emotion_steps"]


def test_zero_lambda_tap_matches_baseline():
    data = generate(SynthSpec(seed=1))
    split = split_speaker_independent(data, seed=1)[0]
    config = TrainConfig(lam=0.0, strategy=TAP, epochs=10, seed=9)

    tap = build_assembly(32, 4, 10, strategy=TAP, seed=3)
    base = build_assembly(32, 4, 10, strategy=BASELINE, seed=3)
    tap_report = train(tap, data, split, None, config)
    base_report = train(base, data, split, None, config.replace(strategy=BASELINE))

    assert tap.upstream.digest() == base.upstream.digest()
    assert tap.emotion_head.digest() == base.emotion_head.digest()
    assert tap_report.train_loss == base_report.train_loss
    assert tap_report.validation_wa == base_report.validation_wa
    assert tap_report.speaker_steps > 0


def test_best_epoch_snapshot(small_data, small_split, fast_config):
    model = build_assembly(6, 4, 10, strategy=SNP, upstream_dims=(8, 5), seed=0)
    report = train(model, small_data, small_split, None, fast_config.replace(strategy=SNP, epochs=4))
    best = report.validation_wa[report.best_epoch]
    assert best == max(report.validation_wa)
    assert report.validation_wa.index(best) == report.best_epoch
    val = small_data.subset(small_split.validation)
    assert weighted_accuracy(predict(report.best_model, val.features), val.emotions).value == best


def test_train_rejects_bad_inputs(small_data, small_split, fast_config):
    model = build_assembly(5, 4, 10, strategy=TAP, upstream_dims=(8, 5), seed=0)
    with pytest.raises(ValidationError, match="features"):
        train(model, small_data, small_split, None, fast_config)
    snp = build_assembly(6, 4, 10, strategy=SNP, upstream_dims=(8, 5), seed=0)
    with pytest.raises(ContractError):
        train(snp, small_data, small_split, None, fast_config)


def test_snapshot_restore_round_trip():
    model = make_model(SNP, seed=4)
    snap = snapshot(model)
    speaker_step(model, *speaker_batch(), eta=0.1, lam=0.1, strategy=SNP)
    emotion_step(model, *emotion_batch(), eta=0.1, strategy=SNP)
    assert model.digest() != snap.digest()
    restore(model, snap)
    assert model.digest() == snap.digest()
    # the snapshot is not aliased by the restored model
    emotion_step(model, *emotion_batch(), eta=0.1, strategy=SNP)
    assert model.digest() != snap.digest()


def test_restore_rejects_other_layout():
    with pytest.raises(ContractError):
        restore(make_model(TAP), snapshot(make_model(SNP)))


def test_assembly_file_round_trip(tmp_path, small_data):
    model = make_model(SNP, seed=6)
    path = str(tmp_path / "model.txt")
    save_assembly(model, path)
    again = load_assembly(path)
    assert again.digest() == model.digest()
    assert np.array_equal(predict(again, small_data.features), predict(model, small_data.features))
    assert dumps_assembly(again) == dumps_assembly(model)


def test_assembly_text_errors():
    text = dumps_assembly(make_model(TAP))
    with pytest.raises(ParseError, match="line 1"):
        loads_assembly("layers 1\n" + text)
    missing = text.split("component emotion_head")[0]
    with pytest.raises(ParseError, match="emotion_head"):
        loads_assembly(missing)
    lines = text.splitlines()
    lines[0] = "component decoder"
    with pytest.raises(ParseError, match="decoder"):
        loads_assembly("\n".join(lines))

import numpy as np
import pytest

from md2ga.backbone import ConfigError, init_params
from md2ga.data import Dataset, SyntheticConfig, gen_synthetic, split
from md2ga.model import forward
from md2ga.numerics import grad_check
from md2ga.schedule import build_mask
from md2ga.training import (AdamState, TrainConfig, TrainingError, adam_step,
                            attention_by_action, consistency_matrix, evaluate, fig1_harness,
                            predict, run_ablation, train, zero_velocity_report)

from conftest import TINY_WIDTHS, tiny_loss_fn

TINY_TRAIN = dict(K=2, batch_size=8, lr=1e-3, **TINY_WIDTHS)


def tiny_set(count=16, seed=0, T_f=4):
    return gen_synthetic(SyntheticConfig(J=3, D=2, T_p=4, T_f=T_f, count=count, seed=seed))


@pytest.fixture(scope="module")
def trained_tiny():
    ds = tiny_set(count=24)
    tr, va, _ = split(ds, (2 / 3, 1 / 3, 0.0), 0)
    result = train(TrainConfig(epochs=60, **TINY_TRAIN), tr, va)
    return result, tr, va


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert np.all(state.m["w"] == 0) and np.all(state.v["w"] == 0)


def test_adam_first_step_hand_value():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert abs(p["w"][0] - (-0.1 / (1 + 1e-8))) < 1e-15


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(TrainingError, match="'bad'"):
        adam_step({"bad": np.zeros(2)}, {"bad": np.array([np.nan, 0.0])}, AdamState())


def test_adam_global_norm_clipping():
    g = np.array([3.0, 4.0])
    clipped, plain = {"w": np.zeros(2)}, {"w": np.zeros(2)}
    adam_step(clipped, {"w": g}, AdamState(), lr=0.1, clip=1.0)
    s = AdamState()
    adam_step(plain, {"w": g / 5.0}, s, lr=0.1)
    np.testing.assert_array_equal(clipped["w"], plain["w"])


def test_zero_epochs_returns_initial_params():
    ds = tiny_set()
    cfg = TrainConfig(epochs=0, **TINY_TRAIN)
    result = train(cfg, ds)
    assert result.history == []
    fresh = init_params(cfg.model_config(4, 4, 3, 2))
    for name in fresh.names():
        assert result.params[name].data.tobytes() == fresh[name].data.tobytes()


def test_tiny_training_descends():
    ds = tiny_set(count=16)
    result = train(TrainConfig(epochs=200, **TINY_TRAIN), ds)
    assert result.history[-1]["total"] < result.history[0]["total"]


def test_training_deterministic():
    ds = tiny_set()
    a = train(TrainConfig(epochs=5, **TINY_TRAIN), ds, ds)
    b = train(TrainConfig(epochs=5, **TINY_TRAIN), ds, ds)
    assert a.history == b.history
    for name in a.params.names():
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()


def test_no_l2_total_equals_l1():
    ds = tiny_set()
    result = train(TrainConfig(epochs=5, no_l2=True, **TINY_TRAIN), ds)
    assert all(h["total"] == h["l1"] for h in result.history)


def test_no_ga_uses_uniform_attention():
    ds = tiny_set()
    result = train(TrainConfig(epochs=3, no_ga=True, **TINY_TRAIN), ds)
    assert not any(n.startswith("gate.") for n in result.params.names())
    fw = forward(result.params, ds.X)
    mask = build_mask(result.params.config.schedule)
    expected = mask / mask.sum(axis=0)
    for A in fw.attention.data:
        np.testing.assert_array_equal(A, expected)


def test_single_decoder_excludes_other_flags():
    with pytest.raises(ConfigError):
        TrainConfig(single_decoder=True, no_ga=True)
    with pytest.raises(ConfigError):
        TrainConfig(single_decoder=True, mode="full-all")


def test_nan_loss_aborts_with_context():
    ds = tiny_set()
    X = ds.X.copy()
    X[0, 0, 0, 0] = np.nan
    bad = Dataset(X, ds.Y)
    with pytest.raises(TrainingError, match="epoch 1, batch"):
        train(TrainConfig(epochs=1, **TINY_TRAIN), bad)


def zero_weight_model(T_f=4):
    p = init_params(TrainConfig(**TINY_TRAIN).model_config(4, T_f, 3, 2))
    p.zero_heads()
    return p


def test_perfect_model_scores_zero():
    const = np.broadcast_to(np.random.default_rng(0).normal(size=(1, 1, 3, 2)), (5, 8, 3, 2))
    ds = Dataset(const[:, :4], const[:, 4:])
    assert evaluate(zero_weight_model(), ds).average_mpjpe == 0.0


def test_zero_weight_model_equals_zero_velocity():
    ds = tiny_set()
    p = zero_weight_model()
    for mode in ("blended", "last_decoder_only"):
        r = evaluate(p, ds, mode)
        assert r.per_frame_mpjpe == zero_velocity_report(ds).per_frame_mpjpe


def test_blended_and_last_decoder_agree_on_tail(trained_tiny):
    result, _, va = trained_tiny
    cfg = result.params.config
    L_prev = cfg.schedule.lengths[-2]
    P = predict(result.params, va.X, "blended")
    Y_K = predict(result.params, va.X, "last_decoder_only")
    np.testing.assert_array_equal(P[:, L_prev:], Y_K[:, L_prev:])
    b = evaluate(result.params, va, "blended").per_frame_mpjpe
    last = evaluate(result.params, va, "last_decoder_only").per_frame_mpjpe
    tail = L_prev - cfg.T_p
    assert b[tail:] == last[tail:]


def test_consistency_matrix(trained_tiny):
    result, _, va = trained_tiny
    mat = consistency_matrix(result.params, va)
    assert np.array_equal(mat, mat.T)
    assert np.all(np.diag(mat) == 0)
    assert np.all(np.isfinite(mat)) and np.all(mat >= 0)
    assert np.all(consistency_matrix(zero_weight_model(), va) == 0)


def test_trained_model_still_passes_grad_check(trained_tiny):
    result, tr, _ = trained_tiny
    params = result.params.copy()
    # trained gradients include entries near 1e-8, where step 1e-5 is roundoff-limited
    report = grad_check(tiny_loss_fn(params, tr.subset([0, 1, 2])), params.parameters(),
                        step=1e-4, tol=1e-4)
    assert report.passed, dict(zip(params.names(), report.max_rel_error))


def test_attention_by_action(trained_tiny):
    result, _, va = trained_tiny
    per_action = attention_by_action(result.params, va)
    assert set(per_action) == set(np.unique(va.labels).tolist())
    for A in per_action.values():
        np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)


def test_fig1_harness_shapes_and_determinism():
    ds = tiny_set(count=12, T_f=3)
    cfg = TrainConfig(epochs=2, **TINY_TRAIN)
    curves = fig1_harness(cfg, ds, [1, 3], seeds=[0, 1])
    assert len(curves[1]) == 1 and len(curves[3]) == 3
    assert curves == fig1_harness(cfg, ds, [1, 3], seeds=[0, 1])


def test_fig1_harness_needs_enough_future():
    with pytest.raises(ConfigError):
        fig1_harness(TrainConfig(epochs=1, **TINY_TRAIN), tiny_set(T_f=3), [5], seeds=[0])


def test_run_ablation_rows():
    ds = tiny_set(count=12)
    tr, va, _ = split(ds, (0.5, 0.5, 0.0), 0)
    rows = run_ablation(TrainConfig(epochs=1, **TINY_TRAIN), tr, va, seeds=[0])
    assert [r["variant"] for r in rows] == ["full", "single", "no_l1", "no_l2", "no_ga",
                                            "full-all", "disjoint", "zero-velocity"]
    assert rows[0]["margin_vs_full"] == 0.0
    assert all(np.isfinite(r["mean_mpjpe"]) for r in rows)

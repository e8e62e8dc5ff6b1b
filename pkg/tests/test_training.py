import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elstmd.errors import DivergenceError, ShapeError
from elstmd.model import DenseLayer, LstmCell, ModelParams, forward, init_model
from elstmd.numeric import frobenius_sq
from elstmd.synth import SyntheticSpec, synth_generate
from elstmd.graph_store import make_windows, split_windows
from elstmd.training import (CLIP_NORM, DEFAULT_BETA, DEFAULT_LR, Adam, LossConfig, TrainHistory, backward,
                             build_penalty, clip_global_norm, data_loss, global_norm, predict_windows, reg_loss,
                             sgd_step, total_loss, train)

from conftest import perturb, random_window, toy_config
from gradcheck import relative_errors


def test_loss_config_validation():
    LossConfig(beta=1.0, alpha=0.0)
    for kw in ({"beta": 0.9}, {"alpha": -1e-3}, {"learning_rate": 0.0}):
        with pytest.raises(ValueError):
            LossConfig(**kw)


def test_build_penalty():
    assert 1 < DEFAULT_BETA <= 2
    P = build_penalty(np.zeros((4, 4)), 2.0)
    off = ~np.eye(4, dtype=bool)
    assert np.all(P[off] == 1) and np.all(np.diag(P) == 0)
    full = np.ones((4, 4)) - np.eye(4)
    assert np.all(build_penalty(full, 2.0)[off] == 2)
    with pytest.raises(ValueError):
        build_penalty(full, 0.5)


def test_data_loss_examples():
    rng = np.random.default_rng(0)
    A = (rng.random((5, 5)) < 0.4).astype(np.uint8)
    np.fill_diagonal(A, 0)
    P = build_penalty(A, 2.0)
    assert data_loss(A, A.astype(float), P) == 0
    S = rng.random((5, 5))
    off = ~np.eye(5, dtype=bool)
    assert data_loss(A, S, build_penalty(A, 1.0)) == pytest.approx(((A - S)[off] ** 2).sum(), abs=1e-12)
    one = np.zeros((3, 3))
    one[0, 1] = 1
    S = one.copy()
    S[0, 1] = 0.0
    assert data_loss(one, S, build_penalty(one, 2.0)) == 4.0
    with pytest.raises(ShapeError):
        data_loss(one, np.zeros((2, 2)), build_penalty(one))


def _tiny_params(W):
    return ModelParams(encoder=[DenseLayer(np.array(W, dtype=float), np.zeros((1, 1)))],
                       lstm=[LstmCell(np.zeros((4, 2)), np.zeros((4, 1)))],
                       decoder=[DenseLayer(np.zeros((1, 1)), np.zeros((1, 1)))])


def test_reg_loss_examples():
    p = init_model(toy_config(), seed=0)
    p.flat[:] = 0.0
    assert reg_loss(p) == 0
    assert reg_loss(_tiny_params([[2.0]])) == 2.0
    q = perturb(init_model(toy_config(lstm=(5, 3)), seed=1), 1)
    s = 0.0
    for name, arr in q.named_arrays().items():
        if ".W" in name:
            for v in arr.ravel():
                s += v * v
    assert abs(reg_loss(q) - 0.5 * s) <= 1e-12 * s
    # biases are excluded
    q.encoder[0].b += 100.0
    assert abs(reg_loss(q) - 0.5 * s) <= 1e-12 * s


def test_reg_loss_sign_flip_invariance():
    q = perturb(init_model(toy_config(lstm=(5, 3)), seed=2), 2)
    before = reg_loss(q)
    q.lstm[1].W_i[...] *= -1
    q.decoder[0].W[...] *= -1
    assert reg_loss(q) == before


def test_total_loss():
    cfg = toy_config()
    p = perturb(init_model(cfg, seed=1), 1)
    w = random_window(6, 3, seed=2)
    s, _ = forward(p, w)
    assert total_loss(w.target, s, p, LossConfig(alpha=0.0)) == data_loss(w.target, s, build_penalty(w.target, 1.5))
    perfect = w.target.astype(float)
    assert total_loss(w.target, perfect, p, LossConfig(alpha=1.0)) == reg_loss(p)
    assert LossConfig().alpha == 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_backward_matches_finite_differences(seed, backend):
    errs = relative_errors(seed, backend=backend, lstm=(5,))
    assert max(errs.values()) <= 1e-4, errs


def test_backward_deep_stack_matches_finite_differences(backend):
    errs = relative_errors(7, backend=backend, lstm=(5, 3), dec=(4, 6))
    assert max(errs.values()) <= 1e-4, errs


def test_alpha_term_is_alpha_times_weight():
    cfg = toy_config(lstm=(5, 3))
    p = perturb(init_model(cfg, seed=3), 3)
    w = random_window(6, 3, seed=4)
    P = build_penalty(w.target)
    _, tr = forward(p, w)
    g0 = backward(p, tr, w, P, LossConfig(alpha=0.0))
    g1 = backward(p, tr, w, P, LossConfig(alpha=1.0))
    arrays = p.named_arrays()
    for name in g0:
        expect = arrays[name] if ".W" in name else 0.0
        np.testing.assert_allclose(g1[name] - g0[name], expect, atol=1e-12)


def test_backward_rejects_stale_trace():
    p = init_model(toy_config(), seed=0)
    w = random_window(6, 3)
    _, tr = forward(p, w)
    other = random_window(5, 3)
    with pytest.raises(ShapeError):
        backward(p, tr, other, build_penalty(other.target), LossConfig())
    q = init_model(toy_config(enc=(3,)), seed=0)
    with pytest.raises(ShapeError):
        backward(q, tr, w, build_penalty(w.target), LossConfig())


def test_perfect_scores_give_vanishing_gradients():
    # target with identical off-diagonal columns; saturating decoder biases reproduce it exactly
    n = 6
    target = np.zeros((n, n), dtype=np.uint8)
    target[:, [1, 4]] = 1
    np.fill_diagonal(target, 0)
    p = init_model(toy_config(n=n), seed=0)
    p.decoder[0].W[...] = 0.0
    p.decoder[0].b[:, 0] = np.where(np.isin(np.arange(n), [1, 4]), 40.0, -40.0)
    w = random_window(n, 3, seed=1)
    w.target[...] = target
    s, tr = forward(p, w)
    assert np.array_equal(s >= 0.5, target.astype(bool) | (np.eye(n, dtype=bool) & (s >= 0.5)))
    g = backward(p, tr, w, build_penalty(target), LossConfig(alpha=0.0))
    assert global_norm(g) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(1.0, 3.0), st.one_of(st.just(0.0), st.floats(1e-3, 2.0)))
def test_data_loss_monotone_in_beta(seed, b1, db):
    rng = np.random.default_rng(seed)
    A = (rng.random((5, 5)) < 0.4).astype(np.uint8)
    np.fill_diagonal(A, 0)
    S = rng.random((5, 5))
    lo, hi = data_loss(A, S, build_penalty(A, b1)), data_loss(A, S, build_penalty(A, b1 + db))
    assert hi >= lo
    if db > 0 and A.any():
        assert hi > lo


def test_sgd_step_examples():
    assert DEFAULT_LR == 1e-3
    p = _tiny_params([[1.0]])
    # f(w) = w^2 at w = 1: gradient 2, step 0.1 -> 0.8
    sgd_step(p, {"encoder.0.W": np.array([[2.0]])}, learning_rate=0.1)
    assert p.encoder[0].W[0, 0] == pytest.approx(0.8, abs=1e-15)
    q = init_model(toy_config(), seed=0)
    before = q.flat.copy()
    sgd_step(q, q.zero_gradients(), 0.5)
    assert np.array_equal(q.flat, before)
    bad = q.zero_gradients()
    bad["lstm.0.W_f"][0, 0] = np.nan
    with pytest.raises(DivergenceError):
        sgd_step(q, bad, 0.1)
    with pytest.raises(ShapeError):
        sgd_step(q, {"encoder.0.W": np.zeros((2, 2))}, 0.1)


@pytest.mark.parametrize("seed", range(5))
def test_small_sgd_step_does_not_increase_loss(seed):
    cfg = toy_config(lstm=(5, 3))
    p = perturb(init_model(cfg, seed=seed), seed)
    w = random_window(6, 3, seed=seed + 50)
    lc = LossConfig(learning_rate=1e-6)
    P = build_penalty(w.target)
    s, tr = forward(p, w)
    before = total_loss(w.target, s, p, lc, P)
    sgd_step(p, backward(p, tr, w, P, lc), lc.learning_rate)
    after = total_loss(w.target, forward(p, w)[0], p, lc, P)
    assert after <= before + 1e-9


def test_clip_global_norm():
    p = perturb(init_model(toy_config(), seed=0), 0)
    w = random_window(6, 3)
    _, tr = forward(p, w)
    g = backward(p, tr, w, build_penalty(w.target, 2.0), LossConfig())
    g.flat *= 1e3
    clip_global_norm(g)
    assert global_norm(g) == pytest.approx(CLIP_NORM, rel=1e-12)
    small = p.zero_gradients()
    small.flat[0] = 1.0
    clip_global_norm(small)
    assert small.flat[0] == 1.0


def test_adam_first_step_moves_by_learning_rate():
    p = perturb(init_model(toy_config(), seed=0), 0)
    g = p.zero_gradients()
    g.flat[:] = np.linspace(-3, 3, g.flat.size)
    g.flat[g.flat == 0] = 1.0
    before = p.flat.copy()
    Adam(0.01).step(p, g)
    np.testing.assert_allclose(np.abs(p.flat - before), 0.01, rtol=1e-6)


def _synthetic_split(noise=0.0, n=12, T=40, N=5, train_count=25, seed=0):
    seq = synth_generate(SyntheticSpec(n=n, T=T, noise=noise, density=0.3), seed=seed)
    return split_windows(make_windows(seq, N), train_count)


def test_train_rejects_bad_arguments():
    split = _synthetic_split()
    cfg = toy_config(n=12, N=5)
    with pytest.raises(ValueError):
        train(split, cfg, LossConfig(), 0)
    with pytest.raises(ValueError):
        train([], cfg, LossConfig(), 1)


def test_train_is_deterministic():
    split = _synthetic_split()
    cfg = toy_config(n=12, N=5, enc=(8,), lstm=(8,))
    a, ha = train(split, cfg, LossConfig(learning_rate=5e-3), 3, seed=4, optimizer="adam")
    b, hb = train(split, cfg, LossConfig(learning_rate=5e-3), 3, seed=4, optimizer="adam")
    assert np.array_equal(a.flat, b.flat)
    assert ha.total_loss == hb.total_loss
    assert len(ha) == 3 and len(ha.seconds) == 3


def test_train_history_csv(tmp_path):
    h = TrainHistory()
    h.append(1, 2.0, 3.0, 2.0003, 0.5)
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,L,L_reg,L_total,seconds"
    assert lines[1].startswith("1,2.0,3.0,2.0003,")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_carries_history():
    split = _synthetic_split()
    cfg = toy_config(n=12, N=5, enc=(8,), lstm=(8,))
    with pytest.raises(DivergenceError) as info:
        train(split, cfg, LossConfig(learning_rate=1e300), 5, seed=0)
    assert info.value.history is not None


def test_stateful_mode_runs_and_changes_predictions():
    split = _synthetic_split()
    cfg = toy_config(n=12, N=5, enc=(8,), lstm=(8,))
    p, h = train(split, cfg, LossConfig(learning_rate=5e-3), 2, seed=0, optimizer="adam", stateful=True)
    assert np.isfinite(h.total_loss).all()
    a = predict_windows(p, split.test)
    b = predict_windows(p, split.test, stateful=True, warmup=split.train)
    assert len(a) == len(b) == len(split.test)
    assert not np.allclose(a[0], b[0])


def test_constant_sequence_is_learned_exactly():
    rng = np.random.default_rng(5)
    A = (rng.random((8, 8)) < 0.3).astype(np.uint8)
    np.fill_diagonal(A, 0)
    seq = synth_generate(SyntheticSpec(n=8, period=2, T=20, phases=[A, A]), seed=0)
    split = split_windows(make_windows(seq, 3), 12)
    cfg = toy_config(n=8, N=3, enc=(8,), lstm=(8,))
    params, history = train(split, cfg, LossConfig(learning_rate=1e-2), 150, seed=0)
    scores, _ = forward(params, split.test[0])
    predicted = scores > 0.5
    np.fill_diagonal(predicted, False)
    assert np.count_nonzero(predicted != (A != 0)) == 0
    assert np.isfinite(history.total_loss).all()


@pytest.mark.slow
def test_moving_average_loss_non_increasing_on_periodic_benchmark():
    from test_acceptance import synthetic_run

    _, history, _ = synthetic_run(0.0)
    L = np.asarray(history.total_loss)
    assert np.isfinite(L).all()
    ma = np.convolve(L, np.ones(10) / 10, mode="valid")
    assert (np.diff(ma) <= 1e-12 * ma[1:]).all()

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedmobile.errors import NumericalDivergence
from fedmobile.learning import (
    GradientSample,
    SyntheticTask,
    batch_grad,
    batch_index_table,
    batch_loss,
    gen_synthetic,
    global_loss,
    gradient_probes,
    minibatch_grad,
    objective,
    sgd_step,
    stacked_batch_grads,
    stacked_full_grads,
    train_loss,
)
from fedmobile.protocol import ClientState, accumulate_clu


@pytest.fixture(scope="module")
def task():
    return gen_synthetic(50, 200, 40, 0.1, seed=0)


def test_train_sample_count(task):
    assert task.features.shape == (50, 40, 200)
    assert task.labels.size == 2000
    assert task.test_features.shape == (500, 200)


def test_noiseless_true_weights_zero_loss():
    t = gen_synthetic(5, 20, 10, 0.0, seed=1)
    for i in range(1, 6):
        x, y = t.client_data(i)
        assert batch_loss(t.w_true, x, y) == pytest.approx(0.0, abs=1e-20)
    assert global_loss(t.w_true, t) == pytest.approx(0.0, abs=1e-20)


def test_synthetic_deterministic():
    a = gen_synthetic(3, 8, 4, 0.1, seed=5)
    b = gen_synthetic(3, 8, 4, 0.1, seed=5)
    for f in ("w_true", "features", "labels", "test_features", "test_labels"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_labels_follow_model(task):
    resid = task.labels - task.features @ task.w_true
    # noise is N(0, 0.01): sample std over 2000 draws
    assert resid.std() == pytest.approx(0.1, rel=0.05)
    assert abs(resid.mean()) < 3 * 0.1 / np.sqrt(2000)


def test_task_save_load(tmp_path):
    t = gen_synthetic(3, 8, 4, 0.3, seed=2)
    t.save(tmp_path / "task.npz")
    back = SyntheticTask.load(tmp_path / "task.npz")
    assert np.array_equal(back.features, t.features) and back.noise_std == 0.3


def test_gradient_hand_example():
    x = np.array([[1.0, 0.0]])
    y = np.array([1.0])
    assert np.array_equal(batch_grad(np.zeros(2), x, y), np.array([-2.0, 0.0]))


def test_gradient_zero_at_optimum():
    t = gen_synthetic(4, 10, 12, 0.0, seed=3)
    g = minibatch_grad(t.w_true, t, 2, 5, batch_seed=17)
    assert np.allclose(g.vector, 0.0, atol=1e-12)


def test_minibatch_deterministic(task):
    m = np.ones(200)
    a = minibatch_grad(m, task, 4, 5, batch_seed=99, step_index=3)
    b = minibatch_grad(m, task, 4, 5, batch_seed=99, step_index=3)
    assert np.array_equal(a.vector, b.vector)
    assert (a.client, a.step_index, a.batch_seed) == (4, 3, 99)


def test_minibatch_size_check(task):
    with pytest.raises(ValueError):
        minibatch_grad(np.zeros(200), task, 1, 41, batch_seed=0)


def test_finite_difference_agreement(task):
    errs = gradient_probes(task, 30, 5, seed=4)
    assert errs.max() <= 1e-5


def test_sgd_step_arithmetic():
    g = GradientSample(np.array([2.0, 0.0]), 0, 1, 0)
    model = np.array([1.0, 1.0])
    out = sgd_step(model, g, 0.5)
    assert np.array_equal(out, [0.0, 1.0])
    assert np.array_equal(model, [1.0, 1.0])


def test_sgd_step_zero_grad():
    model = np.array([0.3, -2.0])
    out = sgd_step(model, GradientSample(np.zeros(2), 0, 1, 0), 0.1)
    assert np.array_equal(out, model)


def test_sgd_step_divergence_carries_slot():
    g = GradientSample(np.array([np.inf, 0.0]), 7, 1, 0)
    with pytest.raises(NumericalDivergence) as e:
        sgd_step(np.zeros(2), g, 0.1)
    assert e.value.slot == 7


def test_sgd_step_rejects_nonpositive_eta():
    with pytest.raises(ValueError):
        sgd_step(np.zeros(2), GradientSample(np.zeros(2), 0, 1, 0), 0.0)


def test_sgd_steps_telescope_to_clu(task):
    # the local update applied over several slots versus the CLU recursion
    eta = 0.01
    x = np.zeros(200)
    state = ClientState.initial(3, x)
    for s in range(8):
        g = minibatch_grad(state.local_model, task, 3, 5, batch_seed=s, step_index=s)
        state = accumulate_clu(state.evolve(local_model=sgd_step(state.local_model, g, eta)), g, eta)
    assert np.allclose(x - state.local_model, state.clu.payload, rtol=1e-12, atol=1e-15)


def test_zero_model_loss_matches_weight_norm(task):
    big = gen_synthetic(1, 200, 1, 0.1, seed=8, n_test=20_000)
    expected = float(big.w_true @ big.w_true) + 0.01
    assert global_loss(np.zeros(200), big) == pytest.approx(expected, rel=0.10)


def test_objective_equals_train_mse(task):
    m = np.random.default_rng(0).standard_normal(200)
    assert objective(m, task) == pytest.approx(train_loss(m, task), rel=1e-10)


def test_stacked_grads_match_loop(task):
    rng = np.random.default_rng(1)
    models = rng.standard_normal((50, 200))
    idx = batch_index_table(1, 50, 40, 5, seed=3)[0]
    got = stacked_batch_grads(models, task, idx)
    for i in (0, 13, 49):
        x, y = task.features[i, idx[i]], task.labels[i, idx[i]]
        assert np.allclose(got[i], batch_grad(models[i], x, y), rtol=1e-12, atol=1e-10)
    full = stacked_full_grads(models, task)
    assert np.allclose(full[7], batch_grad(models[7], *task.client_data(8)), rtol=1e-12, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(slots=st.integers(1, 20), b=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_batch_table_rows_are_distinct(slots, b, seed):
    tab = batch_index_table(slots, 4, 12, b, seed)
    assert tab.shape == (slots, 4, b)
    assert tab.min() >= 0 and tab.max() < 12
    for row in tab.reshape(-1, b):
        assert len(set(row.tolist())) == b


def test_batch_table_uniform_over_samples():
    tab = batch_index_table(4000, 1, 10, 3, seed=2)
    counts = np.bincount(tab.ravel(), minlength=10)
    _, p = stats.chisquare(counts)
    assert p > 1e-3

import numpy as np
import pytest

from partforge import tensor as T
from partforge.dataset import generate_toy_set
from partforge.denoiser import Denoiser, DenoiserConfig
from partforge.errors import ConfigError, ContractError, NumericError
from partforge.flow import (SamplerConfig, TrainingPlan, build_examples, euler_sample, euler_sample_batch,
                            flow_loss, n_histogram, sample_time, train)
from partforge.latent import split
from partforge.tensor import Tensor

from helpers import block_permute, random_model


class ClosedForm:
    """Exact velocity along the straight path to a known Z0: (Z - Z0) / (1 - t)."""

    def __init__(self, Z0, K, C):
        self.Z0 = Z0
        self.K, self.C = K, C
        self.calls = []

    def __call__(self, Z, t, cond):
        self.calls.append(np.array(t))
        return (Z - self.Z0) / (1.0 - np.asarray(t)[:, None, None])


def test_flow_loss_examples(rng):
    Z0, eps = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4, 3))
    t = np.array([0.2, 0.7])
    perfect = lambda Zt, tt, c: eps - Z0  # noqa: E731
    zero = lambda Zt, tt, c: np.zeros_like(Zt)  # noqa: E731
    assert flow_loss(Z0, eps, t, None, perfect).item() == 0.0
    assert flow_loss(Z0, Z0, t, None, zero).item() == 0.0
    assert flow_loss(np.zeros((1, 4, 3)), np.full((1, 4, 3), 2.0), np.array([0.5]), None, zero).item() == 4.0


def test_flow_loss_rejects_per_part_t(rng):
    Z = rng.normal(size=(2, 4, 3))
    with pytest.raises(ContractError):
        flow_loss(Z, Z, np.full((2, 2), 0.5), None, lambda *a: Z)
    with pytest.raises(ContractError):
        flow_loss(Z, Z, np.array([0.1, 0.2, 0.3]), None, lambda *a: Z)
    with pytest.raises(ContractError):
        flow_loss(Z[0], Z[0], np.array([0.1, 0.2]), None, lambda *a: Z[0])


def test_flow_loss_gradient_reaches_model(rng):
    m = random_model(0)
    K = m.config.tokens_per_part
    Z0, eps = rng.normal(size=(2, 2 * K, 8)), rng.normal(size=(2, 2 * K, 8))
    loss = flow_loss(Z0, eps, np.array([0.3, 0.6]), rng.normal(size=(2, 2, 6)), m)
    T.backward(loss)
    assert all(p.grad is not None for p in m.parameters())


def test_loss_invariant_under_joint_permutation(rng):
    m = random_model(1)
    K = m.config.tokens_per_part
    Z0, eps = rng.normal(size=(3 * K, 8)), rng.normal(size=(3 * K, 8))
    cond = rng.normal(size=(2, 6))
    perm = np.array([2, 0, 1])
    base = flow_loss(Z0, eps, 0.4, cond, m).item()
    permuted = flow_loss(block_permute(Z0, perm, K), block_permute(eps, perm, K), 0.4, cond,
                         lambda Z, t, c: m(Z, t, c, slots=perm)).item()
    assert abs(base - permuted) < 1e-9


def test_sample_time_properties():
    a, b = sample_time(np.random.default_rng(3), 10), sample_time(np.random.default_rng(3), 10)
    assert np.array_equal(a, b)
    t = sample_time(np.random.default_rng(0), 100_000)
    assert t.min() >= 0.0 and t.max() <= 1.0
    # recorded with numpy's default generator, seed 0
    assert t.mean() == pytest.approx(0.49957426781608577, abs=1e-15)
    assert abs(t.mean() - 0.5) < 0.01


@pytest.mark.parametrize("steps", [1, 5, 50])
def test_euler_recovers_target_with_closed_form_velocity(rng, steps):
    N, K, C = 3, 4, 5
    Z0 = rng.normal(size=(1, N * K, C))
    oracle = ClosedForm(Z0, K, C)
    out = euler_sample(np.zeros((2, 3)), N, oracle, SamplerConfig(steps), np.random.default_rng(9), K=K, C=C)
    assert np.max(np.abs(out.concat() - Z0[0])) < 1e-9


def test_euler_constant_velocity_oracle(rng):
    N, K, C = 2, 3, 4
    Z0, eps = rng.normal(size=(N * K, C)), rng.normal(size=(N * K, C))
    out = euler_sample(np.zeros((1, 1)), N, lambda Z, t, c: (eps - Z0)[None], SamplerConfig(7), K=K, C=C,
                       init=eps)
    assert np.max(np.abs(out.concat() - Z0)) < 1e-12


def test_euler_single_step(rng):
    m = random_model(2)
    K = m.config.tokens_per_part
    init = rng.normal(size=(2 * K, 8))
    cond = rng.normal(size=(2, 6))
    out = euler_sample(cond, 2, m, SamplerConfig(1), init=init)
    expected = init - m(init, 0.0, cond).data
    assert np.array_equal(out.concat(), expected)


def test_euler_shared_time_grid(rng):
    Z0 = rng.normal(size=(3, 8, 2))
    oracle = ClosedForm(Z0, 4, 2)
    euler_sample_batch(np.zeros((3, 1, 1)), 2, oracle, SamplerConfig(4), np.random.default_rng(0), K=4, C=2)
    grid = np.array(oracle.calls)
    assert grid.shape == (4, 3)
    assert np.array_equal(grid, np.repeat(np.arange(4)[:, None] / 4, 3, axis=1))


def test_euler_rejects_too_many_parts(rng):
    m = random_model(3, max_parts=2)
    with pytest.raises(ConfigError):
        euler_sample(rng.normal(size=(2, 6)), 3, m)


def test_configs_validate():
    with pytest.raises(ConfigError):
        SamplerConfig(0)
    with pytest.raises(ConfigError):
        TrainingPlan(monolithic_fraction=1.5)
    with pytest.raises(ConfigError):
        TrainingPlan(bucketing="padded")


@pytest.fixture(scope="module")
def small_examples():
    recs = generate_toy_set([2, 3], 4, seed=1)
    return build_examples([r.asset for r in recs], 4, 3, 16)


def small_model(seed=0):
    cfg = DenoiserConfig(depth=2, width=32, heads=2, tokens_per_part=4, latent_dim=3, cond_width=16,
                         time_freq_dim=32)
    return Denoiser.create(cfg, seed)


def test_lr_zero_leaves_parameters_unchanged(small_examples):
    m = small_model()
    before = {k: p.data.copy() for k, p in m.params.items()}
    train(small_examples, TrainingPlan(steps=5, batch_size=4, lr=0.0), m)
    assert all(np.array_equal(before[k], p.data) for k, p in m.params.items())


def test_loss_trace_reproducible(small_examples):
    runs = []
    for _ in range(2):
        st = train(small_examples, TrainingPlan(steps=6, batch_size=4, lr=1e-3, seed=5), small_model())
        runs.append([(r["loss"], r["t_mean"], r["n_hist"]) for r in st.trace])
    assert runs[0] == runs[1]


def test_resume_continues_trace(small_examples):
    plan = TrainingPlan(steps=8, batch_size=4, lr=1e-3, seed=2)
    full = train(small_examples, plan, small_model())
    m = small_model()
    half = train(small_examples, TrainingPlan(steps=4, batch_size=4, lr=1e-3, seed=2), m)
    resumed = train(small_examples, plan, m, state=half)
    assert [r["loss"] for r in resumed.trace] == [r["loss"] for r in full.trace]


def test_batches_are_bucketed_and_mixed(small_examples):
    st = train(small_examples, TrainingPlan(steps=40, batch_size=4, lr=0.0, monolithic_fraction=0.3, seed=0),
               small_model())
    hist = n_histogram(st.trace)
    assert set(hist) == {1, 2, 3}  # N=1 batches are monolithic
    mono = sum(r["n_hist"].startswith("1:") for r in st.trace) / len(st.trace)
    assert 0.1 < mono < 0.5


def test_nan_loss_aborts_with_batch_seed(small_examples):
    m = small_model()
    m.params["final.out.b"].data[:] = np.nan
    with pytest.raises(NumericError, match=r"batch seed = \[0, 0\]"):
        train(small_examples, TrainingPlan(steps=3, batch_size=2), m)


def test_train_requires_examples():
    with pytest.raises(ContractError):
        train([], TrainingPlan(steps=1), small_model())


@pytest.fixture(scope="module")
def overfit_trace(small_examples):
    plan = TrainingPlan(steps=2000, batch_size=8, lr=3e-3, monolithic_fraction=0.0, shuffle_parts=False, seed=0)
    st = train(small_examples, plan, small_model())
    losses = np.array([r["loss"] for r in st.trace])
    return losses[:50].mean(), losses[-100:].mean()


def test_overfit_loss_drops(overfit_trace):
    initial, final = overfit_trace
    assert final < 0.5 * initial


@pytest.mark.xfail(reason="the target eps - Z0 depends on freshly drawn noise, which is only recoverable "
                          "with a 1/(1-t) gain near t=1 and not at all near t=0; on 8 toys the loss plateaus "
                          "near 0.25-0.6x of its start",
                   strict=False)
def test_overfit_loss_below_five_percent(overfit_trace):
    initial, final = overfit_trace
    assert final < 0.05 * initial


def test_build_examples_shapes(small_examples):
    e = small_examples[0]
    assert e.latent.K == 4 and e.latent.C == 3 and e.cond.shape == (64, 16)
    assert e.monolithic.N == 1
    assert split(e.latent.concat(), e.N, 4).N == e.N


def test_sampling_with_trained_shape(rng):
    m = small_model()
    out = euler_sample(rng.normal(size=(64, 16)), 3, m, SamplerConfig(3), np.random.default_rng(0))
    assert out.N == 3 and out.K == 4 and out.C == 3


def test_no_grad_during_sampling(rng):
    m = small_model()
    calls = []

    def spy(Z, t, c):
        v = m(Z, t, c)
        calls.append(v.requires_grad)
        return v

    euler_sample(rng.normal(size=(64, 16)), 2, spy, SamplerConfig(2), K=4, C=3)
    assert calls == [False, False]


def test_trained_params_are_tensors(small_examples):
    m = small_model()
    train(small_examples, TrainingPlan(steps=2, batch_size=2), m)
    assert all(isinstance(p, Tensor) and np.all(np.isfinite(p.data)) for p in m.parameters())

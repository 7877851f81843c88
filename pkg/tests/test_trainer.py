import numpy as np
import pytest

from feelgen import model as M
from feelgen.channel import ChannelSpec
from feelgen.data import ClientPartition, LabeledDataset, default_mixture, dirichlet_partition, gen_synthetic
from feelgen.errors import ConfigError, ParameterError
from feelgen.model import ModelSpec
from feelgen.numerics import RngStream, gauss_vector
from feelgen.topology import build_graph, metropolis_weights, single_node
from feelgen.trainer import (BatchSampler, TrainConfig, evaluate, local_gradient, mix, run_cfl, run_dfl)

SPEC = ModelSpec(6, 3)


def make_world(n_clients=4, n=40, alpha=0.5, seed=0):
    mixture = default_mixture(3, 6, rng=RngStream.derive(0, "mixture"))
    src = gen_synthetic(mixture, 2 * n_clients * n, np.full(3, 1 / 3), RngStream.derive(seed, "source"))
    part = dirichlet_partition(src, n_clients, alpha, n, RngStream.derive(seed, "partition"))
    test = gen_synthetic(mixture, 300, np.full(3, 1 / 3), RngStream.derive(seed, "test"))
    return part, test


@pytest.fixture(scope="module")
def world():
    return make_world()


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(mode="hybrid")
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(rounds=-1)
    with pytest.raises(ConfigError):
        TrainConfig(beta_decay=1.5)


def test_schedules():
    cfg = TrainConfig(lr=0.2, lr_schedule="inv_sqrt", rounds=4, beta=2.0, beta_decay=0.5)
    assert cfg.eta_schedule() == pytest.approx([0.2, 0.2 / 2**0.5, 0.2 / 3**0.5, 0.1])
    assert [cfg.beta_at(t) for t in (1, 2, 3)] == [2.0, 1.0, 0.5]
    assert TrainConfig(rounds=20, eval_every=5).eval_rounds() == [0, 5, 10, 15, 20]
    assert TrainConfig(rounds=7, eval_every=5).eval_rounds() == [0, 5, 7]


@pytest.mark.parametrize("mode", ["cfl", "dfl"])
def test_zero_rounds_returns_zero_weights(world, mode):
    part, test = world
    cfg = TrainConfig(mode=mode, rounds=0)
    if mode == "cfl":
        res = run_cfl(cfg, SPEC, part, test, ChannelSpec.snr(10.0))
    else:
        res = run_dfl(cfg, SPEC, part, test, metropolis_weights(build_graph("ring", 4)), ChannelSpec.snr(10.0))
    assert res.params.tolist() == [0.0] * SPEC.param_dim
    assert len(res.metrics) == 1
    assert res.metrics[0].test_loss == pytest.approx(np.log(3), abs=1e-15)
    assert res.metrics[0].gap == 0.0


def test_eval_point_count(world):
    part, test = world
    res = run_cfl(TrainConfig(rounds=20, eval_every=5), SPEC, part, test, ChannelSpec.noiseless())
    assert [m.round for m in res.metrics] == [0, 5, 10, 15, 20]


def test_cfl_straight_line_oracle(world):
    part, test = world
    cfg = TrainConfig(rounds=3, lr=0.1, batch_size=8, seed=5, eval_every=1)
    channel = ChannelSpec.fixed_sigma(0.05)
    res = run_cfl(cfg, SPEC, part, test, channel)

    w = np.zeros(SPEC.param_dim)
    for t in (1, 2, 3):
        grads = []
        for i, c in enumerate(part.clients):
            nb = -(-len(c) // 8)
            epoch, pos = divmod(t - 1, nb)
            perm = RngStream.derive(5, "batch", i, epoch).generator().permutation(len(c))
            grads.append(M.grad(SPEC, w, c.subset(perm[pos * 8:(pos + 1) * 8])))
        total = grads[0] + grads[1] + grads[2] + grads[3]
        w = w - (0.1 / 4) * total
        w = w + gauss_vector(RngStream.derive(5, "cfl-noise", t), SPEC.param_dim, 0.05)
    assert res.params.tobytes() == w.tobytes()


def test_dfl_star_straight_line_oracle(world):
    part, test = world
    cfg = TrainConfig(mode="dfl", rounds=2, lr=0.1, batch_size=8, seed=2)
    mixing = metropolis_weights(build_graph("star", 4))
    theta = mixing.theta
    res = run_dfl(cfg, SPEC, part, test, mixing, ChannelSpec.fixed_sigma(0.02))

    models = [np.zeros(SPEC.param_dim) for _ in range(4)]
    for t in (1, 2):
        new = []
        for i, c in enumerate(part.clients):
            perm = RngStream.derive(2, "batch", i, 0).generator().permutation(len(c))
            b = c.subset(perm[(t - 1) * 8:t * 8])
            mixed = None
            for j in range(4):
                if theta[i, j] != 0.0:
                    mixed = theta[i, j] * models[j] if mixed is None else mixed + theta[i, j] * models[j]
            step = mixed - 0.1 * M.grad(SPEC, models[i], b)
            new.append(step + gauss_vector(RngStream.derive(2, "dfl-noise", i, t), SPEC.param_dim, 0.02))
        models = new
    for got, want in zip(res.device_params, models):
        assert got.tobytes() == want.tobytes()
    avg = (models[0] + models[1] + models[2] + models[3]) / 4
    assert res.params.tobytes() == avg.tobytes()
    assert res.constants["sigma_sq"] == pytest.approx(4 * 0.02**2)


def test_single_device_dfl_equals_cfl():
    part, test = make_world(n_clients=1, n=60)
    cfg = TrainConfig(rounds=12, lr=0.2, batch_size=16, seed=1)
    a = run_cfl(cfg, SPEC, part, test, ChannelSpec.noiseless())
    b = run_dfl(TrainConfig(mode="dfl", rounds=12, lr=0.2, batch_size=16, seed=1), SPEC, part, test,
                single_node(), ChannelSpec.noiseless())
    assert a.params.tobytes() == b.params.tobytes()


def test_full_batch_cfl_is_pooled_gradient_descent(world):
    part, test = world
    cfg = TrainConfig(rounds=10, lr=0.3, batch_size=40)
    res = run_cfl(cfg, SPEC, part, test, ChannelSpec.noiseless())
    pooled = part.pooled()
    w = np.zeros(SPEC.param_dim)
    for _ in range(10):
        w = w - 0.3 * M.grad(SPEC, w, pooled)
    np.testing.assert_allclose(res.params, w, rtol=1e-12, atol=1e-14)


def test_complete_graph_mixing_gives_identical_models():
    theta = metropolis_weights(build_graph("complete", 5)).theta
    models = list(np.random.default_rng(0).standard_normal((5, 7)))
    mixed = [mix(theta, models, i) for i in range(5)]
    for m in mixed[1:]:
        assert m.tobytes() == mixed[0].tobytes()
    np.testing.assert_allclose(mixed[0], np.mean(models, axis=0), atol=1e-15)


def test_sampler_covers_each_epoch_once():
    s = BatchSampler(3, [50, 30], 8)
    for device, size in ((0, 50), (1, 30)):
        nb = s.batches_per_epoch(device)
        for epoch in range(3):
            seen = np.concatenate([s.indices(device, epoch * nb + k + 1) for k in range(nb)])
            assert sorted(seen.tolist()) == list(range(size))


def test_local_gradient_equivalences():
    rng = np.random.default_rng(1)
    b = LabeledDataset(rng.standard_normal((10, 6)), rng.integers(0, 3, 10))
    w = rng.standard_normal(SPEC.param_dim)
    g = M.grad(SPEC, w, b)
    np.testing.assert_array_equal(local_gradient("fedsgd", SPEC, w, w + 1, b), g)
    np.testing.assert_array_equal(local_gradient("fedprox", SPEC, w, w, b, mu_prox=0.5), g)
    np.testing.assert_array_equal(local_gradient("fedprox", SPEC, w, w + 1, b, mu_prox=0.0), g)
    np.testing.assert_array_equal(local_gradient("fedgmir", SPEC, w, w, b, beta_t=0.0), g)
    np.testing.assert_allclose(local_gradient("fedprox", SPEC, w, w - 1, b, mu_prox=0.5), g + 0.5, atol=1e-15)


@pytest.mark.parametrize("mode, method", [("cfl", "fedsgd"), ("dfl", "fedgmir"), ("dfl", "fedprox")])
def test_parallel_matches_sequential(world, mode, method):
    part, test = world
    out = []
    for workers in (1, 4):
        cfg = TrainConfig(mode=mode, method=method, rounds=15, lr=0.1, batch_size=8, workers=workers)
        if mode == "cfl":
            out.append(run_cfl(cfg, SPEC, part, test, ChannelSpec.snr(20.0)))
        else:
            out.append(run_dfl(cfg, SPEC, part, test, metropolis_weights(build_graph("ring", 4)),
                               ChannelSpec.snr(20.0)))
    assert out[0].params.tobytes() == out[1].params.tobytes()
    assert out[0].metrics == out[1].metrics


def test_divergence_is_flagged(world):
    part, test = world
    res = run_cfl(TrainConfig(rounds=50, lr=1e308, eval_every=1), SPEC, part, test, ChannelSpec.noiseless())
    assert res.diverged
    assert len(res.metrics) < 51


def test_mismatched_mixing_matrix(world):
    part, test = world
    with pytest.raises(ParameterError):
        run_dfl(TrainConfig(mode="dfl", rounds=1), SPEC, part, test,
                metropolis_weights(build_graph("ring", 5)), ChannelSpec.noiseless())


def test_overfitting_tiny_set_opens_a_gap():
    mixture = default_mixture(3, 6, std=2.0, rng=RngStream(0))
    tiny = gen_synthetic(mixture, 5, np.full(3, 1 / 3), RngStream(1))
    part = ClientPartition((tiny,), np.array([np.bincount(tiny.labels, minlength=3) / 5]))
    test = gen_synthetic(mixture, 2000, np.full(3, 1 / 3), RngStream(2))
    res = run_cfl(TrainConfig(rounds=400, lr=0.5, batch_size=5), SPEC, part, test, ChannelSpec.noiseless())
    assert res.final.train_loss < 0.1
    assert res.final.gap > 0


def test_evaluate_rejects_empty_test(world):
    part, _ = world
    with pytest.raises(ParameterError):
        evaluate(SPEC, SPEC.zeros(), part, LabeledDataset(np.zeros((0, 6)), np.zeros(0, dtype=int)))


def hand_batch(part, seed, i, t, bs):
    nb = -(-len(part.clients[i]) // bs)
    epoch, pos = divmod(t - 1, nb)
    perm = RngStream.derive(seed, "batch", i, epoch).generator().permutation(len(part.clients[i]))
    return part.clients[i].subset(perm[pos * bs:(pos + 1) * bs])


def test_tiny_cfl_noiseless_oracle():
    part, test = make_world(n_clients=2, n=8, seed=4)
    res = run_cfl(TrainConfig(rounds=3, lr=0.1, batch_size=4, seed=4), SPEC, part, test, ChannelSpec.noiseless())
    w = np.zeros(SPEC.param_dim)
    for t in (1, 2, 3):
        g0 = M.grad(SPEC, w, hand_batch(part, 4, 0, t, 4))
        g1 = M.grad(SPEC, w, hand_batch(part, 4, 1, t, 4))
        w = w - (0.1 / 2) * (g0 + g1)
    assert res.params.tobytes() == w.tobytes()


def test_tiny_dfl_star_noiseless_oracle():
    part, test = make_world(n_clients=3, n=8, seed=6)
    mixing = metropolis_weights(build_graph("star", 3))
    res = run_dfl(TrainConfig(mode="dfl", rounds=2, lr=0.1, batch_size=4, seed=6), SPEC, part, test, mixing,
                  ChannelSpec.noiseless())
    third = 1.0 / 3.0
    # star on 3 nodes: edge weights 1/(1 + max degree) = 1/3, self-weight 1 minus the row's edge weights
    rows = [[(0, 1 - (third + third)), (1, third), (2, third)], [(0, third), (1, 1 - third)],
            [(0, third), (2, 1 - third)]]
    models = [np.zeros(SPEC.param_dim) for _ in range(3)]
    for t in (1, 2):
        new = []
        for i in range(3):
            (j0, c0), *rest = rows[i]
            mixed = c0 * models[j0]
            for j, c in rest:
                mixed = mixed + c * models[j]
            new.append(mixed - 0.1 * M.grad(SPEC, models[i], hand_batch(part, 6, i, t, 4)))
        models = new
    for got, want in zip(res.device_params, models):
        assert got.tobytes() == want.tobytes()

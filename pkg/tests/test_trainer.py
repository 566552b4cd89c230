import hashlib
import os

import numpy as np
import pytest

from dualdual import tensor as T
from dualdual import trainer as tr
from dualdual.config import RunConfig
from dualdual.networks import DualDualModel, build_model
from dualdual.signal_io import synthesize_dataset
from dualdual.tensor import Tensor
from oracles import (OracleModel, oracle_critic_losses, oracle_critic_losses_single, oracle_generator_loss_1,
                     oracle_generator_loss_2, oracle_generator_loss_single)


def tiny_config(mode="dual", **model):
    cfg = RunConfig()
    cfg.model.mode = mode
    cfg.generator.depth = 1
    cfg.generator.base_channels = 4
    cfg.critic.base_channels = 4
    for k, v in model.items():
        setattr(cfg.model, k, v)
    return cfg


def loud_critics(model, rng, scale=0.3):
    # clipped critics score ~1e-6; widen them so the adversarial terms matter in the comparison
    for _, p in model.critic_params():
        p.data[...] = rng.normal(scale=scale, size=p.shape)


def batch(rng, side=4, n=1):
    return [Tensor(rng.uniform(-1, 1, size=(n, 1, side, side))) for _ in range(3)]


def digest(params):
    h = hashlib.sha256()
    for _, p in params:
        h.update(p.data.tobytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def pairs():
    return synthesize_dataset(4, 3)


# -- losses vs the straight-line oracle ----------------------------------------

@pytest.mark.parametrize("trial", range(5))
def test_dual_losses_match_oracle(trial):
    rng = np.random.default_rng(trial)
    cfg = tiny_config()
    model = build_model(cfg, trial)
    loud_critics(model, rng)
    u, v, o = batch(rng)
    om = OracleModel(model, cfg.generator, cfg.critic)
    l1, _ = tr.generator_loss_1(u, o, model, training=False)
    l2, _ = tr.generator_loss_2(v, o, model, training=False)
    assert abs(l1.item() - oracle_generator_loss_1(om, u.data, o.data, 500, 500)) < 1e-10
    assert abs(l2.item() - oracle_generator_loss_2(om, v.data, o.data, 500, 500)) < 1e-10
    crit = tr.critic_losses(u, v, o, model, training=False)
    for k, val in oracle_critic_losses(om, u.data, v.data, o.data).items():
        assert abs(crit[k].item() - val) < 1e-10


@pytest.mark.parametrize("trial", range(3))
def test_single_losses_match_oracle(trial):
    rng = np.random.default_rng(100 + trial)
    cfg = tiny_config("single")
    model = build_model(cfg, trial)
    loud_critics(model, rng)
    u, v, _ = batch(rng)
    om = OracleModel(model, cfg.generator, cfg.critic)
    loss, _ = tr.generator_loss_single(u, v, model, training=False)
    assert abs(loss.item() - oracle_generator_loss_single(om, u.data, v.data, 500, 500)) < 1e-10
    crit = tr.critic_losses(u, v, v, model, training=False)
    for k, val in oracle_critic_losses_single(om, u.data, v.data).items():
        assert abs(crit[k].item() - val) < 1e-10


class _Identity:
    def __call__(self, x, training=False, rng=None):
        return x


class _Zero:
    def __call__(self, x):
        return T.mul(T.mean(x), 0.0)


def test_perfect_reconstruction_gives_zero_generator_losses():
    model = DualDualModel({n: _Identity() for n in ("G_A", "G_B", "G_C", "G_D")},
                          {n: _Zero() for n in ("D_A", "D_B", "D_C", "D_D")})
    u, v, o = batch(np.random.default_rng(0))
    assert tr.generator_loss_1(u, o, model)[0].item() == 0.0
    assert tr.generator_loss_2(v, o, model)[0].item() == 0.0


def test_lambda_defaults():
    m = RunConfig().model
    assert (m.lambda_u, m.lambda_v, m.lambda_o) == (500.0, 500.0, 500.0)
    assert (m.n_critic, m.batch_size, m.lr) == (5, 1, 0.0002)


def test_critic_loss_identical_inputs_is_exactly_zero():
    rng = np.random.default_rng(1)
    cfg = tiny_config()
    model = build_model(cfg, 0)
    loud_critics(model, rng)
    x = batch(rng)[0]
    for name in ("D_A", "D_B", "D_C", "D_D"):
        assert tr.critic_loss(getattr(model, name), x, x).item() == 0.0


def test_critic_loss_sign():
    class Fixed:
        def __init__(self):
            self.calls = iter([0.1, 0.7])

        def __call__(self, x):
            return Tensor(next(self.calls))

    assert tr.critic_loss(Fixed(), None, None).item() < 0


# -- coupling and isolation ------------------------------------------------------

def test_large_cycle_is_live_but_detached():
    rng = np.random.default_rng(2)
    cfg = tiny_config()
    model = build_model(cfg, 0)
    u, v, o = batch(rng)
    before = tr.generator_loss_2(v, o, model, training=False)[0].item()
    model.G_A.params["enc0.w"].data += 0.05
    loss, _ = tr.generator_loss_2(v, o, model, training=False)
    assert loss.item() != before
    loss.backward()
    for _, p in model.generator_params(["G_A", "G_B"]):
        assert p.grad is None
    assert any(np.any(p.grad != 0) for _, p in model.generator_params(["G_C", "G_D"]))


def test_full_backflow_reaches_first_dualgan():
    rng = np.random.default_rng(3)
    cfg = tiny_config(full_backflow=True)
    model = build_model(cfg, 0)
    u, v, o = batch(rng)
    loss, _ = tr.generator_loss_2(v, o, model, training=False)
    loss.backward()
    assert any(p.grad is not None and np.any(p.grad != 0) for _, p in model.generator_params(["G_A", "G_B"]))


def test_critic_losses_leave_generators_without_grads():
    rng = np.random.default_rng(4)
    model = build_model(tiny_config(), 0)
    u, v, o = batch(rng)
    total = sum(tr.critic_losses(u, v, o, model, training=False).values(), Tensor(0.0))
    total.backward()
    assert all(p.grad is None for _, p in model.generator_params())
    assert all(p.grad is not None for _, p in model.critic_params())


def _one_step(pairs, cfg, frozen_group):
    model = build_model(cfg, 0)
    state = tr.init_state(model, cfg, 0)
    state.optimizers[frozen_group].lr = 0.0
    data = tr.to_matrices(pairs, cfg.generator.depth)
    return model, state, data


@pytest.mark.parametrize("mode", ["dual", "single"])
def test_parameter_isolation_by_hash(pairs, mode):
    cfg = tiny_config(mode)
    # critic updates cannot move generator parameters
    model, state, data = _one_step(pairs, cfg, "gen1")
    if mode == "dual":
        state.optimizers["gen2"].lr = 0.0
    g0, c0 = digest(model.generator_params()), digest(model.critic_params())
    tr.train_step(state, data)
    assert digest(model.generator_params()) == g0
    assert digest(model.critic_params()) != c0
    # generator updates cannot move critic parameters
    model, state, data = _one_step(pairs, cfg, "critics")
    g0, c0 = digest(model.generator_params()), digest(model.critic_params())
    tr.train_step(state, data)
    assert digest(model.critic_params()) == c0
    assert digest(model.generator_params()) != g0


def test_clip_bound_after_every_critic_update(pairs, monkeypatch):
    cfg = tiny_config()
    cfg.model.lr = 0.05  # large steps so unclipped weights would leave the box
    model = build_model(cfg, 0)
    seen = []
    real_clip = tr.clip_weights

    def checked(params, c):
        real_clip(params, c)
        seen.append(max(float(np.max(np.abs(p.data))) for p in params))

    monkeypatch.setattr(tr, "clip_weights", checked)
    tr.train(pairs, model, 2, 0, cfg)
    assert len(seen) == 2 * cfg.model.n_critic
    assert max(seen) <= cfg.model.clip


# -- training loop ---------------------------------------------------------------

def test_zero_steps_leaves_parameters_unchanged(pairs):
    cfg = tiny_config()
    model = build_model(cfg, 0)
    h = digest(model.named_parameters())
    state = tr.train(pairs, model, 0, 0, cfg)
    assert digest(model.named_parameters()) == h
    assert state.step == 0 and all(len(v) == 0 for v in state.loss_history.values())


def test_history_lengths_track_steps(pairs):
    cfg = tiny_config()
    state = tr.train(pairs, build_model(cfg, 0), 3, 0, cfg)
    assert state.step == 3
    assert set(state.loss_history) == set(tr.DUAL_LOSSES)
    assert all(len(v) == 3 for v in state.loss_history.values())


def test_training_is_deterministic(pairs, tmp_path):
    cfg = tiny_config()
    logs = []
    for i in range(2):
        path = tmp_path / f"loss{i}.csv"
        tr.init_loss_log(path)
        tr.train(pairs, build_model(cfg, 5), 3, 5, cfg, loss_log=path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    other = tr.train(pairs, build_model(cfg, 6), 3, 6, cfg)
    assert other.loss_history["rec_u"] != tr.train(pairs, build_model(cfg, 5), 3, 5, cfg).loss_history["rec_u"]


def test_loss_log_format(pairs, tmp_path):
    cfg = tiny_config("single")
    path = tmp_path / "loss.csv"
    tr.init_loss_log(path)
    state = tr.train_single_dualgan(pairs, 2, 0, cfg, loss_log=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss_name,value"
    assert len(lines) == 1 + 2 * len(tr.SINGLE_LOSSES)
    step, name, value = lines[1].split(",")
    assert step == "0" and name == "L_G_UV" and float(value) == state.loss_history["L_G_UV"][0]


def test_nan_aborts_with_dump(pairs, tmp_path):
    cfg = tiny_config()
    model = build_model(cfg, 0)
    model.G_C.params["head.b"].data[:] = np.nan
    with pytest.raises(tr.NumericalError, match="step 0"):
        tr.train(pairs, model, 2, 0, cfg, dump_dir=tmp_path)
    dumps = os.listdir(tmp_path)
    assert dumps == ["nan_dump_step0.txt"]
    assert "L_G_VO=nan" in (tmp_path / dumps[0]).read_text()


def test_reconstruction_terms_fall_on_short_run(pairs):
    cfg = tiny_config()
    cfg.model.lr = 0.002
    state = tr.train(pairs, build_model(cfg, 0), 40, 0, cfg)
    for k in ("rec_u", "rec_o", "rec_v", "rec_t"):
        assert np.mean(state.loss_history[k][-5:]) < state.loss_history[k][0]


def test_dataset_side_and_matrices(pairs):
    side = tr.dataset_side(pairs, 4)
    assert side == 16  # 256 samples fill a 16x16 square exactly
    data = tr.to_matrices(pairs, 4)
    assert data.u.shape == (4, 1, 16, 16) and len(data) == 4
    assert np.array_equal(data.v[0].reshape(-1), pairs[0].v.samples)

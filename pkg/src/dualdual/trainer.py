"""Adversarial training of the coupled DualGANs.

One outer step runs ``n_critic`` critic updates (all critics, clipped to
``[-clip, clip]`` after each update) followed by one update of the
DualGAN-1 generators (G_A, G_B) and then one of the DualGAN-2 generators
(G_C, G_D).  Generators are evaluated without a graph during critic
updates, and critics are frozen during generator updates.

In ``single`` mode the same machinery trains one DualGAN directly between
U and V.
"""
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .optim import RMSProp, clip_weights
from .signal_io import matrix_side, reshape_to_matrix
from .tensor import Tensor

log = logging.getLogger(__name__)

DUAL_LOSSES = ("L_G_UO", "L_G_VO", "L_D_A", "L_D_B", "L_D_C", "L_D_D", "rec_u", "rec_o", "rec_v", "rec_t")
SINGLE_LOSSES = ("L_G_UV", "L_D_A", "L_D_B", "rec_u", "rec_v")


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data


def dataset_side(pairs, depth):
    longest = max(max(p.u.samples.size, p.v.samples.size, p.o.samples.size) for p in pairs)
    return matrix_side(longest, depth)


@dataclass
class MatrixDataset:
    u: np.ndarray  # (n, 1, S, S)
    v: np.ndarray
    o: np.ndarray
    ids: list

    def __len__(self):
        return len(self.ids)

    def batch(self, idx, dtype=np.float64):
        return (Tensor(self.u[idx].astype(dtype)), Tensor(self.v[idx].astype(dtype)),
                Tensor(self.o[idx].astype(dtype)))


def to_matrices(pairs, depth, side=None):
    side = side or dataset_side(pairs, depth)
    stack = lambda attr: np.stack([reshape_to_matrix(getattr(p, attr), depth, side).matrix for p in pairs])
    return MatrixDataset(stack("u"), stack("v"), stack("o"), [p.id for p in pairs])


# ---------------------------------------------------------------------------
# losses


def _lam(model):
    h = model.hyper
    return h.lambda_u, h.lambda_v, h.lambda_o


def generator_loss_1(u, o, model, training=True, rng=None):
    """lambda_U|u - G_B(G_A(u))| + lambda_O|o - G_A(G_B(o))| - D_A(G_A(u)) - D_B(G_B(o))."""
    lu, _, lo = _lam(model)
    fake_o = model.G_A(u, training, rng)
    rec_u = T.l1_mean(u, model.G_B(fake_o, training, rng))
    fake_u = model.G_B(o, training, rng)
    rec_o = T.l1_mean(o, model.G_A(fake_u, training, rng))
    total = lu * rec_u + lo * rec_o - model.D_A(fake_o) - model.D_B(fake_u)
    return total, {"rec_u": rec_u, "rec_o": rec_o}


def large_cycle_input(o, model, training=True, rng=None, backflow=False):
    """G_A(G_B(o)), the generated transition signal DualGAN 2 learns from."""
    if backflow:
        return model.G_A(model.G_B(o, training, rng), training, rng)
    with T.no_grad():
        return model.G_A(model.G_B(o, training, rng), training, rng)


def generator_loss_2(v, o, model, training=True, rng=None, t=None):
    """lambda_V|v - G_D(G_C(v))| + lambda_O|t - G_C(G_D(t))| - D_D(G_D(t)) - D_C(G_C(v)),
    with t = G_A(G_B(o)) held constant unless ``full_backflow`` is set."""
    _, lv, lo = _lam(model)
    if t is None:
        t = large_cycle_input(o, model, training, rng, model.hyper.full_backflow)
    fake_o = model.G_C(v, training, rng)
    rec_v = T.l1_mean(v, model.G_D(fake_o, training, rng))
    fake_v = model.G_D(t, training, rng)
    rec_t = T.l1_mean(t, model.G_C(fake_v, training, rng))
    total = lv * rec_v + lo * rec_t - model.D_D(fake_v) - model.D_C(fake_o)
    return total, {"rec_v": rec_v, "rec_t": rec_t}


def generator_loss_single(u, v, model, training=True, rng=None):
    """lambda_U|u - G_B(G_A(u))| + lambda_V|v - G_A(G_B(v))| - D_A(G_A(u)) - D_B(G_B(v))."""
    lu, lv, _ = _lam(model)
    fake_v = model.G_A(u, training, rng)
    rec_u = T.l1_mean(u, model.G_B(fake_v, training, rng))
    fake_u = model.G_B(v, training, rng)
    rec_v = T.l1_mean(v, model.G_A(fake_u, training, rng))
    total = lu * rec_u + lv * rec_v - model.D_A(fake_v) - model.D_B(fake_u)
    return total, {"rec_u": rec_u, "rec_v": rec_v}


def critic_loss(critic, fake, real):
    return critic(fake) - critic(real)


def critic_losses(u, v, o, model, training=True, rng=None):
    """Wasserstein critic losses with every generator output treated as data."""
    with T.no_grad():
        if model.mode == "single":
            fake_v = model.G_A(u, training, rng)
            fake_u = model.G_B(v, training, rng)
        else:
            fake_o = model.G_A(u, training, rng)
            fake_u = model.G_B(o, training, rng)
            t = model.G_A(model.G_B(o, training, rng), training, rng)
            fake_oc = model.G_C(v, training, rng)
            fake_v = model.G_D(t, training, rng)
    if model.mode == "single":
        return {"L_D_A": critic_loss(model.D_A, fake_v, v), "L_D_B": critic_loss(model.D_B, fake_u, u)}
    return {"L_D_A": critic_loss(model.D_A, fake_o, o),
            "L_D_B": critic_loss(model.D_B, fake_u, u),
            "L_D_C": critic_loss(model.D_C, fake_oc, t),
            "L_D_D": critic_loss(model.D_D, fake_v, v)}


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    model: object
    config: RunConfig
    rng: np.random.Generator
    optimizers: dict
    step: int = 0
    loss_history: dict = field(default_factory=dict)
    manifest_hash: str = ""


def make_optimizers(model, cfg):
    h = cfg.model
    groups = {"critics": model.critic_params(), "gen1": model.generator_params(["G_A", "G_B"])}
    if model.mode != "single":
        groups["gen2"] = model.generator_params(["G_C", "G_D"])
    return {k: RMSProp(v, lr=h.lr, decay=h.rms_decay, eps=h.rms_eps) for k, v in groups.items()}


def init_state(model, cfg, seed):
    names = SINGLE_LOSSES if model.mode == "single" else DUAL_LOSSES
    return TrainState(model, cfg, np.random.default_rng(seed), make_optimizers(model, cfg), 0,
                      {n: [] for n in names})


def _frozen(nets, flag):
    for net in nets:
        net.set_requires_grad(not flag)


def _check_finite(values, step, dump_dir):
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if not bad:
        return
    msg = f"non-finite loss at step {step}: {bad}"
    if dump_dir:
        os.makedirs(dump_dir, exist_ok=True)
        with open(os.path.join(dump_dir, f"nan_dump_step{step}.txt"), "w") as fh:
            fh.write(msg + "\n")
            for k, v in sorted(values.items()):
                fh.write(f"{k}={v!r}\n")
    raise NumericalError(msg)


def train_step(state, data):
    model, cfg, rng = state.model, state.config, state.rng
    h = cfg.model
    dtype = np.float32 if h.dtype == "float32" else np.float64
    opt = state.optimizers
    critic_vals = {}
    for _ in range(h.n_critic):
        u, v, o = data.batch(rng.integers(len(data), size=h.batch_size), dtype)
        losses = critic_losses(u, v, o, model, True, rng)
        total = None
        for val in losses.values():
            total = val if total is None else total + val
        opt["critics"].zero_grad()
        total.backward()
        opt["critics"].step()
        clip_weights([p for _, p in model.critic_params()], h.clip)
        critic_vals = {k: val.item() for k, val in losses.items()}

    u, v, o = data.batch(rng.integers(len(data), size=h.batch_size), dtype)
    critics = list(model.critics.values())
    _frozen(critics, True)
    try:
        if model.mode == "single":
            loss, terms = generator_loss_single(u, v, model, True, rng)
            opt["gen1"].zero_grad()
            loss.backward()
            opt["gen1"].step()
            vals = {"L_G_UV": loss.item(), **{k: t.item() for k, t in terms.items()}}
        else:
            loss1, terms1 = generator_loss_1(u, o, model, True, rng)
            opt["gen1"].zero_grad()
            loss1.backward()
            opt["gen1"].step()
            loss2, terms2 = generator_loss_2(v, o, model, True, rng)
            opt["gen2"].zero_grad()
            if h.full_backflow:
                opt["gen1"].zero_grad()
            loss2.backward()
            opt["gen2"].step()
            if h.full_backflow:
                opt["gen1"].step()
            vals = {"L_G_UO": loss1.item(), "L_G_VO": loss2.item(),
                    **{k: t.item() for k, t in terms1.items()}, **{k: t.item() for k, t in terms2.items()}}
    finally:
        _frozen(critics, False)
    vals.update(critic_vals)
    return vals


def train(pairs, model, steps, seed=0, config=None, state=None, loss_log=None, dump_dir=None,
          callback=None, data=None):
    """Run ``steps`` outer steps; pass ``state`` to continue a previous run."""
    cfg = config or RunConfig()
    if state is None:
        state = init_state(model, cfg, seed)
    if data is None:
        data = to_matrices(pairs, cfg.generator.depth)
    for _ in range(steps):
        vals = train_step(state, data)
        _check_finite(vals, state.step, dump_dir)
        for k in state.loss_history:
            state.loss_history[k].append(vals[k])
        if loss_log is not None:
            with open(loss_log, "a") as fh:
                for k in state.loss_history:
                    fh.write(f"{state.step},{k},{vals[k]!r}\n")
        state.step += 1
        if callback is not None:
            callback(state)
    return state


def train_single_dualgan(pairs, steps, seed=0, config=None, **kwargs):
    """Baseline: one DualGAN trained directly between U and V."""
    from dataclasses import replace

    from .networks import build_model

    cfg = config or RunConfig()
    cfg = replace(cfg, model=replace(cfg.model, mode="single"))
    model = build_model(cfg, seed)
    return train(pairs, model, steps, seed, cfg, **kwargs)


def init_loss_log(path):
    with open(path, "w") as fh:
        fh.write("step,loss_name,value\n")

"""RMSProp updates and WGAN weight clipping."""
import numpy as np


class RMSProp:
    """RMSProp over a fixed, ordered list of named parameters.

    The squared-gradient accumulators are kept per parameter name so they can
    be checkpointed and restored exactly.
    """

    def __init__(self, named_params, lr=2e-4, decay=0.9, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.sq = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            rmsprop_step(p.data, p.grad, self.sq[name], self.lr, self.decay, self.eps)

    def state_arrays(self):
        return dict(self.sq)

    def load_state_arrays(self, arrays):
        for name in self.sq:
            self.sq[name][...] = arrays[name]


def rmsprop_step(param, grad, sq, lr, decay=0.9, eps=1e-8):
    """In-place update: ``sq <- decay*sq + (1-decay)*g^2``, ``param -= lr*g/(sqrt(sq)+eps)``."""
    sq *= decay
    sq += (1.0 - decay) * grad * grad
    param -= lr * grad / (np.sqrt(sq) + eps)


def clip_weights(params, c):
    for p in params:
        np.clip(p.data, -c, c, out=p.data)

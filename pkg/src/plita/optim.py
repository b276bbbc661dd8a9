"""Adam with decoupled weight decay.

Moment buffers are keyed by parameter name so optimizer state survives a
checkpoint round-trip independently of object identity. The update itself is
a backend kernel (see ``kernels``); both backends produce bitwise-identical
steps.
"""

import numpy as np

from . import kernels


class DivergedError(RuntimeError):
    """A gradient went NaN/inf; message names the offending parameter."""


class Adam:
    def __init__(self, params, lr=3e-4, weight_decay=1.5e-6, betas=(0.9, 0.999), eps=1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names; optimizer state would collide")
        for p in params:
            # in-place flat views require contiguous storage
            if not p.data.flags["C_CONTIGUOUS"]:
                raise ValueError(f"parameter {p.name!r} is not C-contiguous")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self):
        """Apply one update from the current grads; grads must be populated."""
        self.step_count += 1
        for p in self.params:
            if p.grad is None:
                raise RuntimeError(f"parameter {p.name!r} has no gradient; run backward first")
            if not np.all(np.isfinite(p.grad)):
                raise DivergedError(
                    f"non-finite gradient in parameter {p.name!r} at step {self.step_count}"
                )
            m = self.m[p.name]
            v = self.v[p.name]
            if m.shape != p.data.shape:
                raise ValueError(
                    f"optimizer state for {p.name!r} has shape {m.shape}, "
                    f"parameter has {p.data.shape}"
                )
            kernels.adam_update(
                p.data.reshape(-1),
                np.ascontiguousarray(p.grad.reshape(-1)),
                m.reshape(-1),
                v.reshape(-1),
                self.step_count,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        """Flat view of the moment buffers for checkpointing."""
        out = {}
        for name in sorted(self.m):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, step_count):
        for p in self.params:
            for prefix, store in (("adam.m.", self.m), ("adam.v.", self.v)):
                key = prefix + p.name
                if key not in arrays:
                    raise KeyError(f"checkpoint is missing optimizer buffer {key!r}")
                buf = arrays[key]
                if buf.shape != p.data.shape:
                    raise ValueError(
                        f"optimizer buffer {key!r} has shape {buf.shape}, "
                        f"parameter has {p.data.shape}"
                    )
                store[p.name] = buf.astype(p.data.dtype, copy=True)
        self.step_count = int(step_count)

"""Finite-difference gradient oracle shared by the train and acceptance tests."""

import numpy as np
from scipy.special import expit

from dlinoss.model import ModelConfig, init_weights
from dlinoss.param_init import clamp_bounds
from dlinoss.train import loss_and_grad


def richardson(f, x, h):
    """Central difference extrapolated to O(h^4)."""
    def central(step):
        return (f(x + step) - f(x - step)) / (2 * step)
    return (4 * central(h / 2) - central(h)) / 3


def random_model(rng, trial):
    variant = ("dlinoss", "linoss-imex", "linoss-im")[trial % 3]
    readout = ("per-step", "last-token", "mean-pool")[(trial // 3) % 3]
    cfg = ModelConfig(input_dim=2, output_dim=2, hidden_dim=int(rng.integers(1, 5)),
                      state_dim=int(rng.integers(1, 5)), num_blocks=int(rng.integers(1, 3)),
                      variant=variant, readout=readout, include_time=bool(trial % 2),
                      mixing="glu" if trial % 5 else "none", skip=bool(trial % 7))
    w = init_weights(cfg, rng=rng)
    for k in w:
        # spread raw SSM values so some A sit outside [L, U] and some G below 0
        if "A_bar" in k:
            w[k] = rng.uniform(0.1, 3, w[k].shape) * np.where(rng.random(w[k].shape) < 0.3, 5, 1)
        if "G_bar" in k:
            w[k] = rng.uniform(-1, 2, w[k].shape)
        if "dt_bar" in k:
            w[k] = rng.normal(size=w[k].shape)
        if k.endswith((".D", ".b", "b1", "b2")):
            w[k] = rng.normal(size=w[k].shape) * 0.3
    n = int(rng.integers(2, 9))
    x = rng.normal(size=(3, n, 2))
    mask = np.ones((3, n), dtype=bool)
    mask[1, n - 1:] = False
    target = rng.normal(size=(3, n, 2)) if readout == "per-step" else rng.normal(size=(3, 2))
    return cfg, w, x, target, mask


def near_kink(cfg, w, name, idx, h):
    """True when a step of size h could cross a ReLU or clamp kink."""
    if name.endswith("G_bar"):
        return abs(w[name][idx]) <= 2 * h
    if name.endswith("A_bar"):
        pre = name[: -len("A_bar")]
        dt = expit(w[pre + "dt_bar"][idx])
        G = max(w[pre + "G_bar"][idx], 0.0) if cfg.variant.damped else 0.0
        L, U = (float(v) for v in clamp_bounds(G, dt))
        a = w[name][idx]
        return min(abs(a - L), abs(a - U)) <= 2 * h
    return False


def gradient_check(n_models, seed):
    """Worst relative error of analytic vs finite-difference gradients and the number of scalars checked."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for trial in range(n_models):
        cfg, w, x, target, mask = random_model(rng, trial)
        _, grads = loss_and_grad(cfg, w, x, target, mask)
        gmax = max(float(np.abs(v).max()) for v in grads.values())
        for name in w:
            for idx in np.ndindex(w[name].shape):
                old = w[name][idx]
                h = 1e-3 * max(1.0, abs(old))
                if near_kink(cfg, w, name, idx, h):
                    continue

                def f(val):
                    w[name][idx] = val
                    try:
                        return loss_and_grad(cfg, w, x, target, mask)[0]
                    finally:
                        w[name][idx] = old

                fd = richardson(f, old, h)
                g = grads[name][idx]
                # floor: differences are accurate relative to the largest gradient entry
                err = abs(fd - g) / max(abs(fd), abs(g), 1e-8 * max(gmax, 1.0))
                worst = max(worst, err)
                checked += 1
    return worst, checked

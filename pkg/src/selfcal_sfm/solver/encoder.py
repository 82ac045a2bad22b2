"""Permutation-invariant two-branch point-set network, written in numpy.

Each column of the measurement matrix is one input point of dimension 3n.
A shared per-point MLP produces local and global features; the global
feature is the coordinate-wise max over points. The segmentation branch
scores every column from its local feature concatenated with the global
one, and the regression branch maps the global feature to the plane at
infinity.
"""
from __future__ import annotations

import numpy as np

HEAD_WIDTHS = (256, 128)


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _relu(x):
    return np.maximum(x, 0.0)


class PointSetEncoder:
    """Parameters live in ``self.params``; :meth:`backward` returns grads with the same keys."""

    def __init__(self, in_dim: int, widths=(64, 128, 1024), seed: int = 0):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 7])))
        self.in_dim = in_dim
        self.widths = tuple(widths)
        w1, w2, w3 = self.widths
        h1, h2 = HEAD_WIDTHS
        shapes = {
            "f1": (in_dim, w1),
            "f2": (w1, w2),
            "f3": (w2, w3),
            "s1": (w1 + w3, h1),
            "s2": (h1, h2),
            "s3": (h2, 1),
            "c1": (w3, h1),
            "c2": (h1, h2),
            "c3": (h2, 3),
        }
        self.params = {}
        for name, (fi, fo) in shapes.items():
            self.params["W" + name] = _glorot(rng, fi, fo)
            self.params["b" + name] = np.zeros(fo)

    def forward(self, B: np.ndarray):
        """Return per-column logits ``(m,)``, the plane at infinity ``(3,)`` and a cache."""
        p = self.params
        X = np.asarray(B, dtype=float).T
        if X.shape[1] != self.in_dim:
            raise ValueError(f"encoder expects {self.in_dim}-dimensional columns, got {X.shape[1]}")
        a1 = _relu(X @ p["Wf1"] + p["bf1"])
        a2 = _relu(a1 @ p["Wf2"] + p["bf2"])
        a3 = _relu(a2 @ p["Wf3"] + p["bf3"])
        arg = np.argmax(a3, axis=0)
        g = a3[arg, np.arange(a3.shape[1])]
        cat = np.hstack([a1, np.broadcast_to(g, (a1.shape[0], g.size))])
        s1 = _relu(cat @ p["Ws1"] + p["bs1"])
        s2 = _relu(s1 @ p["Ws2"] + p["bs2"])
        logits = (s2 @ p["Ws3"] + p["bs3"])[:, 0]
        c1 = _relu(g @ p["Wc1"] + p["bc1"])
        c2 = _relu(c1 @ p["Wc2"] + p["bc2"])
        n_inf = c2 @ p["Wc3"] + p["bc3"]
        cache = dict(X=X, a1=a1, a2=a2, a3=a3, arg=arg, g=g, cat=cat, s1=s1, s2=s2, c1=c1, c2=c2)
        return logits, n_inf, cache

    def backward(self, cache, dlogits: np.ndarray, dn_inf: np.ndarray) -> dict:
        p = self.params
        c = cache
        grads = {}
        w1 = self.widths[0]
        # segmentation branch
        ds = np.asarray(dlogits, dtype=float)[:, None]
        grads["Ws3"] = c["s2"].T @ ds
        grads["bs3"] = ds.sum(axis=0)
        d = (ds @ p["Ws3"].T) * (c["s2"] > 0)
        grads["Ws2"] = c["s1"].T @ d
        grads["bs2"] = d.sum(axis=0)
        d = (d @ p["Ws2"].T) * (c["s1"] > 0)
        grads["Ws1"] = c["cat"].T @ d
        grads["bs1"] = d.sum(axis=0)
        dcat = d @ p["Ws1"].T
        da1 = dcat[:, :w1].copy()
        dg = dcat[:, w1:].sum(axis=0)
        # regression branch
        dn = np.asarray(dn_inf, dtype=float)
        grads["Wc3"] = np.outer(c["c2"], dn)
        grads["bc3"] = dn.copy()
        d = (p["Wc3"] @ dn) * (c["c2"] > 0)
        grads["Wc2"] = np.outer(c["c1"], d)
        grads["bc2"] = d
        d = (p["Wc2"] @ d) * (c["c1"] > 0)
        grads["Wc1"] = np.outer(c["g"], d)
        grads["bc1"] = d
        dg = dg + p["Wc1"] @ d
        # max pool routes the gradient to the arg-max point of each channel
        da3 = np.zeros_like(c["a3"])
        da3[c["arg"], np.arange(da3.shape[1])] = dg
        d = da3 * (c["a3"] > 0)
        grads["Wf3"] = c["a2"].T @ d
        grads["bf3"] = d.sum(axis=0)
        d = (d @ p["Wf3"].T) * (c["a2"] > 0)
        grads["Wf2"] = c["a1"].T @ d
        grads["bf2"] = d.sum(axis=0)
        d = (d @ p["Wf2"].T + da1) * (c["a1"] > 0)
        grads["Wf1"] = c["X"].T @ d
        grads["bf1"] = d.sum(axis=0)
        return grads


def encoder_forward(B: np.ndarray, encoder: PointSetEncoder):
    """Logits and plane at infinity predicted for a measurement block."""
    logits, n_inf, _ = encoder.forward(B)
    return logits, n_inf

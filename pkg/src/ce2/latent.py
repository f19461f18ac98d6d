"""State embedding psi and decoder f_D, trained on reconstruction + temporal-distance geometry."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nets import MLP, make_optimizer


class _Coder:
    """Shared plumbing for embedder/decoder: an MLP with affine input/output maps."""

    def __init__(self, net: MLP, in_offset=0.0, in_scale=1.0, out_offset=0.0, out_scale=1.0):
        self.net = net
        self.in_offset = np.asarray(in_offset, dtype=float)
        self.in_scale = np.asarray(in_scale, dtype=float)
        self.out_offset = np.asarray(out_offset, dtype=float)
        self.out_scale = np.asarray(out_scale, dtype=float)

    def forward(self, x):
        out, cache = self.net.forward((x - self.in_offset) / self.in_scale)
        return out * self.out_scale + self.out_offset, cache

    def backward(self, cache, grad_out):
        grads, gx = self.net.backward(cache, grad_out * self.out_scale)
        return grads, gx / self.in_scale

    def _set_identity(self):
        n = self.net
        if not (n.n_in == n.n_hidden == n.n_out):
            raise ValueError("identity init needs equal layer widths")
        n.activation = "linear"
        n.params["W1"] = np.eye(n.n_in)
        n.params["W2"] = np.eye(n.n_in)
        n.params["b1"] = np.zeros(n.n_in)
        n.params["b2"] = np.zeros(n.n_in)


class Embedder(_Coder):
    def __init__(self, state_dim: int, dim: int = 50, hidden: int = 32, *, seed: int = 0,
                 init_scale: float = 0.1, low=None, high=None):
        net = MLP(state_dim, hidden, dim, rng=np.random.default_rng(seed), init_scale=init_scale)
        off, scale = _box_affine(state_dim, low, high)
        super().__init__(net, in_offset=off, in_scale=scale)
        self.state_dim, self.dim = state_dim, dim

    @classmethod
    def identity(cls, state_dim: int) -> "Embedder":
        e = cls(state_dim, state_dim, state_dim)
        e._set_identity()
        return e

    def embed(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.state_dim:
            raise ValueError(f"expected state of dim {self.state_dim}, got {s.shape[-1]}")
        out = self.forward(np.atleast_2d(s))[0]
        return out[0] if s.ndim == 1 else out


class Decoder(_Coder):
    def __init__(self, dim: int, state_dim: int, hidden: int = 32, *, seed: int = 1,
                 init_scale: float = 0.1, low=None, high=None):
        net = MLP(dim, hidden, state_dim, rng=np.random.default_rng(seed), init_scale=init_scale)
        off, scale = _box_affine(state_dim, low, high)
        super().__init__(net, out_offset=off, out_scale=scale)
        self.state_dim, self.dim = state_dim, dim

    @classmethod
    def identity(cls, state_dim: int) -> "Decoder":
        d = cls(state_dim, state_dim, state_dim)
        d._set_identity()
        return d

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = self.forward(np.atleast_2d(z))[0]
        return out[0] if z.ndim == 1 else out


def _box_affine(n, low, high):
    if low is None or high is None:
        return np.zeros(n), np.ones(n)
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    return (low + high) / 2.0, np.maximum((high - low) / 2.0, 1e-8)


class LatentSpace:
    """Embedder + decoder trained jointly with ``L_rec + L_dt``.

    The temporal-distance estimator is consulted as a constant target (no
    gradient flows into it from here); it is trained separately.
    """

    def __init__(self, embedder: Embedder, decoder: Decoder, *, lr: float = 3e-4,
                 optimizer: str = "momentum", low=None, high=None, linear_norm: bool = False):
        self.embedder = embedder
        self.decoder = decoder
        self.low = None if low is None else np.asarray(low, dtype=float)
        self.high = None if high is None else np.asarray(high, dtype=float)
        self.linear_norm = linear_norm
        self.opt = make_optimizer(optimizer, lr)

    @classmethod
    def build(cls, state_dim, dim, *, hidden=32, seed=0, low=None, high=None, **kw) -> "LatentSpace":
        emb = Embedder(state_dim, dim, hidden, seed=seed, low=low, high=high)
        dec = Decoder(dim, state_dim, hidden, seed=seed + 1, low=low, high=high)
        return cls(emb, dec, low=low, high=high, **kw)

    @property
    def dim(self) -> int:
        return self.embedder.dim

    def embed(self, s):
        return self.embedder.embed(s)

    # -- losses -------------------------------------------------------------
    def _geometry(self, z1, z2):
        delta = z1 - z2
        sq = np.sum(delta * delta, axis=1)
        if self.linear_norm:
            return np.sqrt(sq), delta
        return sq, delta

    def loss_dt(self, dist_est, s1, s2) -> float:
        z1 = self.embedder.embed(np.atleast_2d(s1))
        z2 = self.embedder.embed(np.atleast_2d(s2))
        return float(np.mean(_dt_residual(self, dist_est, z1, z2)[0] ** 2))

    def loss_rec(self, s) -> float:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        rec = self.decoder.decode(self.embedder.embed(s))
        return float(np.mean(np.sum((rec - s) ** 2, axis=1)))

    def loss_and_grads(self, dist_est, s1, s2, w_rec: float = 1.0, w_dt: float = 1.0):
        """Losses and gradients of ``w_rec * L_rec + w_dt * L_dt`` over a batch of state pairs.

        Returns ``(rec, dt, emb_grads, dec_grads)`` with the unweighted losses.
        """
        s1 = np.atleast_2d(np.asarray(s1, dtype=float))
        s2 = np.atleast_2d(np.asarray(s2, dtype=float))
        n = len(s1)
        x = np.concatenate([s1, s2])
        z, ecache = self.embedder.forward(x)
        y, dcache = self.decoder.forward(z)
        diff = y - x
        rec = float(np.mean(np.sum(diff * diff, axis=1)))
        dec_grads, gz = self.decoder.backward(dcache, w_rec * 2.0 * diff / len(x))

        z1, z2 = z[:n], z[n:]
        resid, delta, geo = _dt_residual(self, dist_est, z1, z2)
        dt = float(np.mean(resid ** 2))
        if self.linear_norm:
            dgeo = delta / np.maximum(geo, 1e-12)[:, None]
        else:
            dgeo = 2.0 * delta
        g1 = (w_dt * 2.0 * resid / n)[:, None] * dgeo
        gz = gz + np.concatenate([g1, -g1])
        emb_grads, _ = self.embedder.backward(ecache, gz)
        return rec, dt, emb_grads, dec_grads

    def train_step(self, dist_est, s1, s2) -> tuple[float, float]:
        """One optimizer step on ``L_rec + L_dt``; returns the pre-step ``(rec, dt)``."""
        if len(np.atleast_2d(s1)) == 0 or np.size(s1) == 0:
            raise ValueError("empty batch")
        rec, dt, eg, dg = self.loss_and_grads(dist_est, s1, s2)
        params = {**{f"e.{k}": v for k, v in self.embedder.net.params.items()},
                  **{f"d.{k}": v for k, v in self.decoder.net.params.items()}}
        grads = {**{f"e.{k}": v for k, v in eg.items()}, **{f"d.{k}": v for k, v in dg.items()}}
        self.opt.step(params, grads)
        for k in ("W1", "b1", "W2", "b2"):
            self.embedder.net.params[k] = params[f"e.{k}"]
            self.decoder.net.params[k] = params[f"d.{k}"]
        return rec, dt

    def decode_goal(self, z) -> np.ndarray:
        out = self.decoder.decode(z)
        if self.low is not None:
            out = np.clip(out, self.low, self.high)
        return out

    # -- persistence ----------------------------------------------------------
    def save(self, path: str | Path, seed: int | None = None) -> None:
        header = {
            "state_dim": self.embedder.state_dim,
            "dim": self.dim,
            "hidden": self.embedder.net.n_hidden,
            "activation": self.embedder.net.activation,
            "seed": seed,
        }
        body = {
            "header": header,
            "embedder": self.embedder.net.get_flat().tolist(),
            "decoder": self.decoder.net.get_flat().tolist(),
            "embedder_affine": [self.embedder.in_offset.tolist(), self.embedder.in_scale.tolist()],
            "decoder_affine": [self.decoder.out_offset.tolist(), self.decoder.out_scale.tolist()],
            "bounds": None if self.low is None else [self.low.tolist(), self.high.tolist()],
        }
        Path(path).write_text(json.dumps(body))

    @classmethod
    def load(cls, path: str | Path, **kw) -> "LatentSpace":
        body = json.loads(Path(path).read_text())
        h = body["header"]
        low, high = body["bounds"] if body["bounds"] else (None, None)
        ls = cls.build(h["state_dim"], h["dim"], hidden=h["hidden"], low=low, high=high, **kw)
        for coder, key in ((ls.embedder, "embedder"), (ls.decoder, "decoder")):
            coder.net.activation = h["activation"]
            coder.net.set_flat(np.array(body[key]))
        ls.embedder.in_offset, ls.embedder.in_scale = map(np.array, body["embedder_affine"])
        ls.decoder.out_offset, ls.decoder.out_scale = map(np.array, body["decoder_affine"])
        return ls


def _dt_residual(ls: LatentSpace, dist_est, z1, z2):
    geo, delta = ls._geometry(z1, z2)
    target = 0.5 * (dist_est.predict(z1, z2) + dist_est.predict(z2, z1))
    return geo - target, delta, geo

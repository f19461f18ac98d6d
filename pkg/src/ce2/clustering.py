"""Shared-variance isotropic Gaussian mixture over embeddings.

Centroids are seeded by farthest point sampling and refined by blended EM on
a MAP objective whose weight prior pulls the mixture toward uniform.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

SIGMA2_FLOOR = 1e-4


def fps(points: np.ndarray, n_samples: int, rng: np.random.Generator | None = None,
        first: int | None = None) -> np.ndarray:
    """Farthest point sampling; returns the selected indices.

    The first index is uniform at random (or ``first``); every later pick
    maximises the distance to its nearest already-selected point, ties going
    to the lowest index.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    if n == 0:
        raise ValueError("fps needs at least one point")
    if n_samples > n:
        raise ValueError(f"cannot select {n_samples} of {n} points")
    if first is None:
        first = int((rng or np.random.default_rng()).integers(n))
    chosen = [first]
    min_d = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(n_samples - 1):
        nxt = int(np.argmax(min_d))  # argmax returns the first maximum
        chosen.append(nxt)
        np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1), out=min_d)
    return np.array(chosen, dtype=int)


def fps_init(points, n_samples: int, rng=None, first: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts[fps(pts, n_samples, rng, first)]


@dataclass
class GMM:
    centroids: np.ndarray  # (n_components, dim)
    weights: np.ndarray
    sigma2: float
    prior_strength: float = 0.1
    step_size: float = 3e-4
    init_sigma2: float = 1.0
    sigma2_floor: float = SIGMA2_FLOOR

    @classmethod
    def create(cls, n_components: int, dim: int, **kw) -> "GMM":
        init = kw.get("init_sigma2", 1.0)
        return cls(np.zeros((n_components, dim)), np.full(n_components, 1.0 / n_components),
                   init, **kw)

    @property
    def n_components(self) -> int:
        return len(self.centroids)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    # -- densities -----------------------------------------------------------
    def component_log_pdf(self, z: np.ndarray) -> np.ndarray:
        """``log N(z | c_i, sigma2 I)`` as an ``(n, n_components)`` array."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        sq = (np.sum(z * z, axis=1)[:, None] - 2.0 * z @ self.centroids.T
              + np.sum(self.centroids ** 2, axis=1)[None, :])
        sq = np.maximum(sq, 0.0)
        return -0.5 * sq / self.sigma2 - 0.5 * self.dim * np.log(2.0 * np.pi * self.sigma2)

    def log_total_probability(self, z) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_log_pdf(z) + logw, axis=1)

    def total_probability(self, z) -> np.ndarray | float:
        z = np.asarray(z, dtype=float)
        out = np.exp(self.log_total_probability(z))
        return float(out[0]) if z.ndim == 1 else out

    def responsibilities(self, z) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lj = self.component_log_pdf(z) + np.log(self.weights)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    # -- fitting ---------------------------------------------------------------
    def assign_centroids(self, batch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Reset to FPS-chosen centroids, uniform weights and the initial variance."""
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        if len(batch) < self.n_components:
            raise ValueError(f"batch of {len(batch)} smaller than {self.n_components} components")
        idx = fps(batch, self.n_components, rng)
        self.centroids = batch[idx].copy()
        self.weights = np.full(self.n_components, 1.0 / self.n_components)
        self.sigma2 = max(self.init_sigma2, self.sigma2_floor)
        return idx

    def _prior_weight(self) -> float:
        lam = self.prior_strength
        return 1.0 if np.isinf(lam) else lam / (1.0 + lam)

    def objective(self, batch: np.ndarray) -> float:
        """Evidence bound at the exact posterior plus the uniform-pull weight prior."""
        val = float(np.mean(self.log_total_probability(batch)))
        lam = self.prior_strength
        if np.isfinite(lam) and lam > 0:
            with np.errstate(divide="ignore"):
                val += lam / self.n_components * float(np.sum(np.log(self.weights)))
        return val

    def elbo(self, batch: np.ndarray) -> float:
        """``E_q[log p(z|c) + log beta_c] + H(q)`` with ``q`` the current posterior."""
        z = np.atleast_2d(np.asarray(batch, dtype=float))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        comp = self.component_log_pdf(z)
        q = self.responsibilities(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(q > 0, q * np.log(q), 0.0).sum(axis=1)
            ll = np.where(q > 0, q * (comp + logw), 0.0).sum(axis=1)
        return float(np.mean(ll + ent))

    def elbo_step(self, batch: np.ndarray, step_size: float | None = None) -> float:
        """One blended EM step; returns the pre-step objective.

        E-step: posterior responsibilities. M-step: weights pulled toward
        uniform by the prior, centroids moved ``step_size`` of the way to the
        responsibility-weighted means, shared variance re-estimated and floored.
        """
        z = np.atleast_2d(np.asarray(batch, dtype=float))
        if z.size == 0:
            raise ValueError("empty batch")
        eta = self.step_size if step_size is None else step_size
        before = self.objective(z)
        q = self.responsibilities(z)
        nk = q.sum(axis=0)
        n = len(z)

        w = self._prior_weight()
        if w >= 1.0:
            beta = np.full(self.n_components, 1.0 / self.n_components)
        else:
            beta = (1.0 - w) * nk / n + w / self.n_components
        beta = np.maximum(beta, 0.0)
        self.weights = beta / beta.sum()

        safe = np.where(nk > 0, nk, 1.0)
        means = (q.T @ z) / safe[:, None]
        means = np.where(nk[:, None] > 0, means, self.centroids)
        self.centroids = self.centroids + eta * (means - self.centroids)

        sq = (np.sum(z * z, axis=1)[:, None] - 2.0 * z @ self.centroids.T
              + np.sum(self.centroids ** 2, axis=1)[None, :])
        sq = np.maximum(sq, 0.0)
        self.sigma2 = max(float(np.sum(q * sq) / (n * self.dim)), self.sigma2_floor)
        return before

    # -- sampling / edges -----------------------------------------------------
    def sample(self, n: int, rng: np.random.Generator, return_components: bool = False):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = self.centroids[comp] + rng.normal(size=(n, self.dim)) * np.sqrt(self.sigma2)
        return (z, comp) if return_components else z

    def snapshot(self) -> dict:
        return {"centroids": self.centroids.tolist(), "weights": self.weights.tolist(),
                "sigma2": self.sigma2}

    def to_json(self) -> str:
        return json.dumps(self.snapshot())

    @classmethod
    def from_snapshot(cls, snap: dict, **kw) -> "GMM":
        return cls(np.array(snap["centroids"], dtype=float), np.array(snap["weights"], dtype=float),
                   float(snap["sigma2"]), **kw)


def edge_indices(gmm: GMM, candidates: np.ndarray, n_edge: int) -> np.ndarray:
    """Indices of the ``n_edge`` lowest-density candidates, ascending; ties by index."""
    candidates = np.atleast_2d(candidates)
    if n_edge > len(candidates) or n_edge < 0:
        raise ValueError(f"n_edge={n_edge} not within [0, {len(candidates)}]")
    logp = gmm.log_total_probability(candidates)
    return np.argsort(logp, kind="stable")[:n_edge]


def select_edge(gmm: GMM, candidates: np.ndarray, n_edge: int) -> np.ndarray:
    candidates = np.atleast_2d(candidates)
    return candidates[edge_indices(gmm, candidates, n_edge)]

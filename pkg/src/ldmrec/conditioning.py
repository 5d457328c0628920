"""Guidance signals: collaborative vectors and modality preference vectors.

Collaborative signals come from a randomized SVD of the binary interaction
matrix, fused with degree-normalized one-hop propagation of the item-side
factors. Modality preference vectors are the same propagation applied to
pre-extracted per-item content features. Both are computed once from the
training split and frozen before training starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import InteractionMatrix
from .errors import ConfigError
from .fmx import load_matrix, save_matrix


def interactions_matmul(r: InteractionMatrix, x: np.ndarray) -> np.ndarray:
    """R @ x without materializing the dense interaction matrix."""
    out = np.zeros((r.num_users, x.shape[1]), dtype=np.float64)
    for u in range(r.num_users):
        if r.rows[u].size:
            out[u] = x[r.rows[u]].sum(axis=0)
    return out


def interactions_rmatmul(r: InteractionMatrix, x: np.ndarray) -> np.ndarray:
    """R.T @ x without materializing the dense interaction matrix."""
    out = np.zeros((r.num_items, x.shape[1]), dtype=np.float64)
    for u in range(r.num_users):
        if r.rows[u].size:
            out[r.rows[u]] += x[u]
    return out


def _inv_sqrt_degrees(deg: np.ndarray) -> np.ndarray:
    # zero-degree nodes contribute nothing instead of blowing up
    out = np.zeros(deg.shape, dtype=np.float64)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def propagate_to_users(r: InteractionMatrix, item_values: np.ndarray) -> np.ndarray:
    """Degree-normalized one-hop aggregation D_U^-1/2 R D_I^-1/2 X."""
    du = _inv_sqrt_degrees(r.degrees())
    di = _inv_sqrt_degrees(r.item_degrees())
    return du[:, None] * interactions_matmul(r, di[:, None] * item_values)


def propagate_to_items(r: InteractionMatrix, user_values: np.ndarray) -> np.ndarray:
    du = _inv_sqrt_degrees(r.degrees())
    di = _inv_sqrt_degrees(r.item_degrees())
    return di[:, None] * interactions_rmatmul(r, du[:, None] * user_values)


def jacobi_svd(b: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """One-sided Jacobi SVD of a tall-or-square matrix.

    Rotates column pairs until all are mutually orthogonal, then reads off
    singular values as column norms. Returns (U, sigma, V) with
    b = U @ diag(sigma) @ V.T, sigma descending.
    """
    a = np.array(b, dtype=np.float64)
    m, n = a.shape
    if m < n:
        u, s, v = jacobi_svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return v, s, u
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                x, y = a[:, i], a[:, j]
                aa = x @ x
                bb = y @ y
                cc = x @ y
                if abs(cc) <= tol * np.sqrt(aa * bb) or cc == 0.0:
                    continue
                with np.errstate(over="ignore"):
                    zeta = (bb - aa) / (2.0 * cc)
                if not np.isfinite(zeta) or abs(zeta) > 1e150:
                    continue  # rotation angle ~0: orthogonal at working precision
                rotated = True
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                a[:, i], a[:, j] = cs * x - sn * y, sn * x + cs * y
                vi, vj = v[:, i].copy(), v[:, j]
                v[:, i], v[:, j] = cs * vi - sn * vj, sn * vi + cs * vj
        if not rotated:
            break
    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(sigma)[::-1]
    sigma = sigma[order]
    a = a[:, order]
    v = v[:, order]
    u = np.zeros_like(a)
    nz = sigma > 1e-300
    u[:, nz] = a[:, nz] / sigma[nz]
    return u, sigma, v


def randomized_svd(
    r: InteractionMatrix,
    rank: int,
    oversample: int = 10,
    power_iters: int = 2,
    seed: int = 0,
):
    """Sketch-then-QR-then-small-SVD factorization of the interaction matrix.

    Returns (U, sigma, V): user factors (num_users x rank, orthonormal
    columns), singular values (descending), item factors (num_items x rank,
    orthonormal columns).
    """
    if rank < 1 or rank > min(r.num_users, r.num_items):
        raise ConfigError(
            f"rank must be in 1..min(users, items)={min(r.num_users, r.num_items)}, got {rank}"
        )
    if oversample < 0 or power_iters < 0:
        raise ConfigError("oversample and power_iters must be >= 0")
    rng = np.random.default_rng(seed)
    ell = min(rank + oversample, r.num_users, r.num_items)
    omega = rng.standard_normal((r.num_items, ell))
    y = interactions_matmul(r, omega)
    q, _ = np.linalg.qr(y)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(interactions_rmatmul(r, q))
        q, _ = np.linalg.qr(interactions_matmul(r, z))
    b_t = interactions_rmatmul(r, q)  # (num_items x ell) = B.T with B = Q.T R
    item_factors, sigma, v_small = jacobi_svd(b_t)
    user_factors = q @ v_small
    return user_factors[:, :rank], sigma[:rank], item_factors[:, :rank]


@dataclass
class ConditionSignals:
    """Frozen per-user guidance rows: collaborative and per-modality."""

    collaborative: np.ndarray  # num_users x (2 * d_svd)
    visual: np.ndarray  # num_users x visual_dim
    textual: np.ndarray  # num_users x text_dim

    @property
    def num_users(self) -> int:
        return self.collaborative.shape[0]

    def check_user(self, user: int) -> None:
        if not 0 <= user < self.num_users:
            raise IndexError(f"unknown user index {user}")


def collaborative_encode(
    r: InteractionMatrix, user_factors: np.ndarray, item_factors: np.ndarray
) -> np.ndarray:
    """Fuse user factors with degree-normalized propagated item factors."""
    if user_factors.shape[0] != r.num_users or item_factors.shape[0] != r.num_items:
        raise ConfigError("factor shapes inconsistent with interaction matrix")
    propagated = propagate_to_users(r, item_factors)
    return np.hstack([user_factors, propagated])


def modality_encode(r: InteractionMatrix, features: np.ndarray, hops: int = 1) -> np.ndarray:
    """Per-user preference vectors from clicked items' content features.

    One hop is the defined signal; extra hops bounce through the bipartite
    graph (users -> items -> users) and exist as an experiment knob only.
    """
    if features.shape[0] != r.num_items:
        raise ConfigError(
            f"feature rows ({features.shape[0]}) must match num_items ({r.num_items})"
        )
    if hops < 1:
        raise ConfigError("hops must be >= 1")
    item_values = np.asarray(features, dtype=np.float64)
    user_values = propagate_to_users(r, item_values)
    for _ in range(hops - 1):
        item_values = propagate_to_items(r, user_values)
        user_values = propagate_to_users(r, item_values)
    return user_values


def build_signals(
    train: InteractionMatrix,
    visual_features: np.ndarray,
    textual_features: np.ndarray,
    d_svd: int,
    oversample: int = 10,
    power_iters: int = 2,
    seed: int = 0,
    hops: int = 1,
) -> ConditionSignals:
    u, _, i = randomized_svd(train, d_svd, oversample, power_iters, seed)
    return ConditionSignals(
        collaborative=collaborative_encode(train, u, i),
        visual=modality_encode(train, visual_features, hops),
        textual=modality_encode(train, textual_features, hops),
    )


_SIGNAL_FILES = {
    "collaborative": "collaborative.fmx",
    "visual": "modality_visual.fmx",
    "textual": "modality_textual.fmx",
}


def save_signals(out_dir, signals: ConditionSignals) -> None:
    """Cache signals as FMX1 blocks for reuse across runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attr, name in _SIGNAL_FILES.items():
        save_matrix(out / name, getattr(signals, attr), dtype="f4")


def load_signals(in_dir) -> ConditionSignals:
    d = Path(in_dir)
    return ConditionSignals(
        **{attr: load_matrix(d / name) for attr, name in _SIGNAL_FILES.items()}
    )

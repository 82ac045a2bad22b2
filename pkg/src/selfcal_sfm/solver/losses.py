"""Loss terms of the robust self-calibrating objective and their gradients.

Every function works on the valid block of a measurement matrix, passed in
as a plain ``(3n, m)`` array ``B``. Weights ``w`` scale the columns of ``B``.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import DimensionError, GeometryError
from ..factorization import fourth_column_sign
from ..linalg import row_complement, signed_svd
from ..selfcalib import daq_from_calibration

EXP_CLAMP = 50.0
CLUSTER_GAP = 1e-10
DAQ_FAILURE_LOSS = 1e3


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def count_sum(w) -> float:
    """Soft inlier count ``sum_j sigmoid(w_j - 0.5)``."""
    return float(np.sum(sigmoid(np.asarray(w, dtype=float) - 0.5)))


def threshold_for_count(count: float, m: int) -> float:
    """Literal threshold at which ``count`` weights at one and the rest at zero balance the exponent."""
    return count * sigmoid(0.5) + (m - count) * sigmoid(-0.5)


def loss_num(w, t: float) -> float:
    """``exp(t - sum_j sigmoid(w_j - 0.5))``; the exponent is capped at 50 against overflow."""
    w = np.asarray(w, dtype=float)
    if np.any((w < 0) | (w > 1)):
        raise ValueError("weights must lie in [0, 1]")
    return float(np.exp(min(t - count_sum(w), EXP_CLAMP)))


def grad_loss_num(w, t: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    z = t - count_sum(w)
    if z > EXP_CLAMP:
        return np.zeros_like(w)
    s = sigmoid(w - 0.5)
    return -np.exp(z) * s * (1.0 - s)


def _proj_indices(variant: str, r: int):
    if variant == "tail_sum":
        if r < 5:
            raise DimensionError(f"tail_sum needs at least 5 singular values, got {r}")
        return np.arange(4, r)
    if variant == "sigma4":
        if r < 4:
            raise DimensionError("sigma4 needs at least 4 singular values")
        return np.array([3])
    raise ValueError(f"unknown projection-loss variant {variant!r}")


def loss_proj(w, B, variant: str = "tail_sum") -> float:
    """Sum of the singular values beyond the fourth (or the fourth alone) of ``B diag(w)``."""
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape != (B.shape[1],):
        raise DimensionError("weight vector does not match the matrix")
    s = np.linalg.svd(B * w, compute_uv=False)
    return float(np.sum(s[_proj_indices(variant, len(s))]))


def grad_weighted_singular_values(B, w, ks) -> np.ndarray:
    """Gradient of ``sum_{k in ks} sigma_k(B diag(w))`` with respect to ``w``.

    ``d sigma_k / d w_j = (u_k . B[:, j]) v_k[j]``. Singular values that are
    numerically tied form a cluster; a cluster only partly inside ``ks``
    contributes the cluster-average gradient times the number of its members
    in ``ks``.
    """
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    U, s, Vt = np.linalg.svd(B * w, full_matrices=False)
    return _sv_grad_from_svd(B, U, s, Vt, np.asarray(ks, dtype=int))


def _sv_grad_from_svd(B, U, s, Vt, ks) -> np.ndarray:
    per_k = np.einsum("ik,ij->kj", U, B) * Vt  # row k: d sigma_k / d w
    gap = CLUSTER_GAP * max(s[0], 1e-300)
    coeff = np.zeros(len(s))
    inside = np.zeros(len(s), bool)
    inside[ks] = True
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and s[stop - 1] - s[stop] <= gap:
            stop += 1
        members = inside[start:stop].sum()
        coeff[start:stop] = members / (stop - start)
        start = stop
    return coeff @ per_k


def grad_loss_proj(w, B, variant: str = "tail_sum", svd=None) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    w = np.asarray(w, dtype=float)
    U, s, Vt = np.linalg.svd(B * w, full_matrices=False) if svd is None else svd
    return _sv_grad_from_svd(B, U, s, Vt, _proj_indices(variant, len(s)))


# --- DAQ term -------------------------------------------------------------


CAMERA_SPLITS = ("orthonormal", "sqrt")


def _split_root(s, split):
    if split == "sqrt":
        return np.sqrt(s[:4])
    if split == "orthonormal":
        return np.ones(4)
    raise ValueError(f"camera split must be one of {CAMERA_SPLITS}, got {split!r}")


def weighted_cameras(Bw: np.ndarray, svd=None, split: str = "orthonormal"):
    """First-camera-normalised camera stack from the rank-4 factorization of ``Bw``.

    With ``split="orthonormal"`` the cameras are the leading four left
    singular vectors, so the projective frame depends only on the column
    space of ``Bw`` and not on how the weights rescale individual columns.
    ``split="sqrt"`` uses ``U_4 S_4^(1/2)`` as in plain factorization.

    Returns the ``(n, 3, 4)`` normalised cameras plus the intermediates that
    :func:`daq_weight_gradient` needs.
    """
    U, s, Vt = signed_svd(Bw) if svd is None else svd
    if len(s) < 4 or s[0] == 0 or s[3] < 1e-12 * s[0]:
        raise GeometryError("weighted measurement matrix has rank below 4")
    C = (U[:, :4] * _split_root(s, split)).reshape(-1, 3, 4)
    H = np.vstack([C[0], row_complement(C[0])])
    G = np.linalg.inv(H)
    P = C @ G
    sign = fourth_column_sign(P)
    if sign < 0:
        H[3] = -H[3]
        G[:, 3] = -G[:, 3]
        P[:, :, 3] = -P[:, :, 3]
    P[0] = np.eye(3, 4)
    return P, (U, s, C, H, G, sign)


def daq_terms_grad(P, K, n_inf):
    """Per-view DAQ residual and its gradient with respect to each camera."""
    Q = daq_from_calibration(K, n_inf)
    w1 = K @ K.T
    W = w1 / np.linalg.norm(w1)
    A = P @ Q @ P.transpose(0, 2, 1)
    a = np.sqrt(np.einsum("kij,kij->k", A, A))
    N = A / a[:, None, None]
    D = N - W
    d = np.sqrt(np.einsum("kij,kij->k", D, D))
    Nbar = np.where(d[:, None, None] > 0, D / np.where(d > 0, d, 1.0)[:, None, None], 0.0)
    inner = np.einsum("kij,kij->k", Nbar, N)
    Abar = (Nbar - inner[:, None, None] * N) / a[:, None, None]
    Pbar = (Abar + Abar.transpose(0, 2, 1)) @ P @ Q
    Pbar[0] = 0.0  # the first camera is pinned to [I | 0]
    return d, Pbar


def _complement_backward(C1, cbar, sign=1.0):
    """Pull a gradient on the unit row complement back onto the 3x4 camera."""
    raw = np.array([(-1.0) ** (k + 1) * np.linalg.det(np.delete(C1, k, axis=1)) for k in range(4)])
    norm = np.linalg.norm(raw)
    c = raw / norm
    rbar = sign * (cbar - (cbar @ c) * c) / norm
    C1bar = np.zeros((3, 4))
    for k in range(4):
        cols = [j for j in range(4) if j != k]
        Mk = C1[:, cols]
        m0, m1, m2 = Mk.T
        cof = np.stack([np.cross(m1, m2), np.cross(m2, m0), np.cross(m0, m1)], axis=1)
        C1bar[:, cols] += (-1.0) ** (k + 1) * rbar[k] * cof
    return C1bar


def daq_weight_gradient(B, w, K, n_inf, svd=None, split: str = "orthonormal"):
    """DAQ residual of ``B diag(w)`` and its exact gradient with respect to ``w``.

    The gradient flows back through the first-camera normalisation, the
    symmetric singular-value split and the SVD (via the eigen-decomposition
    of ``Bw Bw^T``). Pairs of numerically tied singular values get a zero
    coupling term.
    """
    Bw = B * w
    if svd is None:
        svd = signed_svd(Bw)
    P, (U, s, C, H, G, sign) = weighted_cameras(Bw, svd, split)
    d, Pbar = daq_terms_grad(P, K, n_inf)
    # P_i = C_i G
    Cbar = Pbar @ G.T
    Gbar = np.einsum("kia,kib->ab", C, Pbar)
    Hbar = -G.T @ Gbar @ G.T
    Cbar[0] += Hbar[:3]
    Cbar[0] += _complement_backward(C[0], Hbar[3], sign)
    # C = U4 diag(root); eigenvalues of Bw Bw^T are s^2
    Cbar = Cbar.reshape(-1, 4)
    root = _split_root(s, split)
    Ubar = Cbar * root
    if split == "sqrt":
        sbar = np.einsum("ik,ik->k", Cbar, U[:, :4]) * 0.5 / root
    else:
        sbar = np.zeros(4)
    lam = s**2
    lbar = sbar / (2.0 * s[:4])
    diff = lam[None, :4] - lam[:, None]  # (l, k) -> lam_k - lam_l
    tol = CLUSTER_GAP * lam[0]
    F = np.where(np.abs(diff) > tol, 1.0 / np.where(np.abs(diff) > tol, diff, 1.0), 0.0)
    inner = (U.T @ Ubar) * F
    inner[np.arange(4), np.arange(4)] = lbar
    Gram_bar = U @ inner @ U[:, :4].T
    if U.shape[1] < U.shape[0]:
        # directions outside the column space have eigenvalue zero
        rest = Ubar - U @ (U.T @ Ubar)
        Gram_bar += (rest / lam[:4]) @ U[:, :4].T
    Gram_bar = 0.5 * (Gram_bar + Gram_bar.T)
    Bw_bar = 2.0 * Gram_bar @ Bw
    return float(d.sum()), np.einsum("ij,ij->j", Bw_bar, B)


def loss_daq(w, B, K, n_inf, split: str = "orthonormal") -> float:
    """DAQ residual of the cameras factorized from ``B diag(w)``.

    Degenerate factorizations return :data:`DAQ_FAILURE_LOSS`.
    """
    try:
        P, _ = weighted_cameras(B * np.asarray(w, dtype=float), split=split)
        return float(daq_terms_grad(P, K, n_inf)[0].sum())
    except (GeometryError, np.linalg.LinAlgError, FloatingPointError):
        return DAQ_FAILURE_LOSS

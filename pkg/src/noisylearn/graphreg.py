"""Batch-level neighbor graph and the structural consistency penalty.

Within a mini-batch, an affinity graph is built from thresholded cosine
similarity of fixed embeddings: A_ij = max(cos(z_i, z_j) - tau, 0). The
penalty pulls each unlabeled sample's sharpened prediction toward the
labels of its labeled neighbors and toward the predictions of its
unlabeled neighbors, weighted by affinity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .numnet import Tensor, as_tensor

Array = np.ndarray


@dataclass
class NeighborGraph:
    """Symmetric affinity matrix over one batch plus each row's role."""

    affinity: Array          # (n, n); diagonal present but inert in the penalty
    roles: Array             # (n,) strings "labeled" | "unlabeled"
    tau: float

    @property
    def n_nodes(self) -> int:
        return self.affinity.shape[0]

    def labeled_nodes(self) -> Array:
        return np.flatnonzero(self.roles == "labeled")

    def unlabeled_nodes(self) -> Array:
        return np.flatnonzero(self.roles == "unlabeled")


def build_neighbor_graph(Z: Array, tau: float = 0.5, roles=None) -> NeighborGraph:
    """Thresholded-cosine affinity over embedding rows.

    Entries are max(cos - tau, 0) for every pair including i = j, so they
    lie in [0, 1 - tau]. Self-edges are kept (they contribute nothing to
    the penalty, where same-node distances vanish). The off-diagonal part
    is mirrored from the upper triangle so symmetry holds bitwise.

    `roles` tags each row "labeled" or "unlabeled" for the penalty;
    omitted, every row counts as unlabeled.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise ConfigError("build_neighbor_graph: Z must be 2-D")
    if roles is None:
        roles = np.full(Z.shape[0], "unlabeled", dtype=object)
    roles = np.asarray(roles, dtype=object).astype(str)
    if roles.shape != (Z.shape[0],):
        raise ConfigError("build_neighbor_graph: one role per row required")
    bad = set(roles) - {"labeled", "unlabeled"}
    if bad:
        raise ConfigError(f"unknown roles: {sorted(bad)}")
    if not 0.0 <= tau < 1.0:
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("build_neighbor_graph: zero-norm embedding row")
    Zn = Z / norms[:, None]
    cos = Zn @ Zn.T
    R = np.maximum(cos - tau, 0.0)
    upper = np.triu(R, 1)
    A = upper + upper.T + np.diag(np.diag(R))
    return NeighborGraph(affinity=A, roles=roles, tau=tau)


def sharpen(p: Array, temperature: float) -> Array:
    """Temperature-sharpen probability rows: p^(1/T), renormalized.

    T < 1 concentrates mass on the largest entries; T = 1 is the identity
    up to renormalization. The argmax of every row is preserved.
    """
    if temperature <= 0:
        raise ConfigError("sharpen: temperature must be positive")
    p = np.asarray(p, dtype=np.float64)
    powered = np.maximum(p, 0.0) ** (1.0 / temperature)
    total = powered.sum(axis=-1, keepdims=True)
    if np.any(total == 0.0):
        raise NumericError("sharpen: a row has no positive mass")
    return powered / total


def sharpen_t(p: Tensor, temperature: float) -> Tensor:
    """Tape version of `sharpen`; rows are clamped at 1e-12 before powering."""
    if temperature <= 0:
        raise ConfigError("sharpen: temperature must be positive")
    powered = p.clip_min(1e-12) ** (1.0 / temperature)
    return powered / powered.sum(axis=-1, keepdims=True)


def graph_regularizer(graph: NeighborGraph, p_unlabeled, labels_labeled: Array,
                      lam_lu: float, lam_uu: float,
                      count_ordered_pairs: bool = True):
    """Affinity-weighted disagreement penalty.

    p_unlabeled holds prediction rows for the graph's unlabeled nodes (in
    `unlabeled_nodes()` order) and labels_labeled holds target rows for the
    labeled nodes (in `labeled_nodes()` order). The penalty is

        lam_lu * sum_{u in U, v in L} A_uv ||p_u - y_v||^2
      + lam_uu * sum_{u != v in U}    A_uv ||p_u - p_v||^2

    with the unlabeled-unlabeled sum running over ordered pairs; pass
    count_ordered_pairs=False to count each unordered pair once. Accepts a
    tape Tensor for p_unlabeled (returns a scalar Tensor) or an ndarray
    (returns float). The result is zero exactly when all connected pairs
    agree.
    """
    if lam_lu < 0 or lam_uu < 0:
        raise ConfigError("graph penalty weights must be non-negative")
    U = graph.unlabeled_nodes()
    L = graph.labeled_nodes()
    is_tensor = isinstance(p_unlabeled, Tensor)
    p_data = p_unlabeled.data if is_tensor else np.asarray(p_unlabeled, dtype=np.float64)
    labels_labeled = np.asarray(labels_labeled, dtype=np.float64)
    if p_data.shape[0] != U.size:
        raise ConfigError(
            f"graph_regularizer: {U.size} unlabeled nodes but "
            f"{p_data.shape[0]} prediction rows")
    if labels_labeled.shape[0] != L.size:
        raise ConfigError(
            f"graph_regularizer: {L.size} labeled nodes but "
            f"{labels_labeled.shape[0]} label rows")
    if U.size == 0:
        return as_tensor(0.0) if is_tensor else 0.0

    A_ul = graph.affinity[np.ix_(U, L)]           # (u, l)
    A_uu = graph.affinity[np.ix_(U, U)].copy()    # (u, u), zero diagonal already
    uu_scale = 2.0 if count_ordered_pairs else 1.0

    p = p_unlabeled if is_tensor else as_tensor(p_data)
    # (u, l, C) and (u, u, C) difference stacks; exact zeros when rows agree
    if L.size and lam_lu > 0:
        diff_ul = p.reshape(U.size, 1, -1) - labels_labeled[None, :, :]
        lu_term = (as_tensor(A_ul) * (diff_ul * diff_ul).sum(axis=2)).sum()
    else:
        lu_term = as_tensor(0.0)
    if U.size > 1 and lam_uu > 0:
        diff_uu = p.reshape(U.size, 1, -1) - p.reshape(1, U.size, -1)
        # upper triangle only; halves the work and the diagonal is zero anyway
        W = np.triu(A_uu, 1) * uu_scale
        uu_term = (as_tensor(W) * (diff_uu * diff_uu).sum(axis=2)).sum()
    else:
        uu_term = as_tensor(0.0)
    total = lu_term * lam_lu + uu_term * lam_uu
    return total if is_tensor else float(total.data)

"""Learned graph over the 24 layer-sector regions.

The chain is: cosine-similarity kNN adjacency over node features, a
spectral-gap rewiring layer (learned pairwise gates plus a -lambda_2
connectivity loss), a commute-time rewiring layer (edges amplified by
exact effective resistance, then one symmetric-normalized graph
convolution), MinCUT pooling to k soft clusters, and a linear head.

Spectral quantities are exact: at 24 nodes a full eigendecomposition is
cheap, and the commute-time path stays differentiable by writing the
Laplacian pseudoinverse of a connected graph as (L + J/n)^-1 - J/n.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DomainError, ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)

N_NODES = 24
# layer-major node order shared by the readout, the pooling, and all exports
NODE_NAMES = tuple(
    f"{layer}·{sector}"
    for layer in ("SVC", "DVC", "CC")
    for sector in ("TI", "TE", "SI", "SE", "NI", "NE", "II", "IE")
)


@dataclass
class RegionGraph:
    adjacency: Tensor  # [n, n] symmetric, nonnegative, zero diagonal
    features: Tensor  # [n, F]


@dataclass
class RrmOutput:
    logits: Tensor
    pooled: Tensor  # X_cls, the pre-head feature vector
    node_features: Tensor  # final 24xF node matrix (pre-pooling)
    adjacency: Tensor  # final 24x24 adjacency (pre-pooling)
    cut_loss: Tensor
    ortho_loss: Tensor
    gap_loss: Tensor


# ---------------------------------------------------------------------------
# numpy-level spectral analysis (oracle-friendly, not differentiated)
# ---------------------------------------------------------------------------


def connected_components(adjacency: np.ndarray, tol: float = 0.0) -> list[np.ndarray]:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.flatnonzero(adjacency[u] > tol):
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(np.asarray(sorted(comp)))
    return comps


def laplacian_pinv(adjacency: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse of L = D - A via eigendecomposition.

    Disconnected graphs are handled per component (the result is block
    structured); an isolated node contributes an all-zero block, which
    shows up as infinite resistance downstream.
    """
    n = adjacency.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    for comp in connected_components(adjacency):
        sub = adjacency[np.ix_(comp, comp)].astype(np.float64)
        lap = np.diag(sub.sum(axis=1)) - sub
        vals, vecs = np.linalg.eigh(lap)
        scale = max(1.0, float(np.abs(vals).max()))
        inv = np.where(np.abs(vals) > 1e-10 * scale, 1.0 / np.where(vals == 0, 1.0, vals), 0.0)
        out[np.ix_(comp, comp)] = (vecs * inv) @ vecs.T
    return out


def effective_resistance(adjacency: np.ndarray) -> np.ndarray:
    """R_ij = (e_i - e_j)^T L+ (e_i - e_j); inf across components."""
    lp = laplacian_pinv(adjacency)
    d = np.diag(lp)
    r = d[:, None] + d[None, :] - 2.0 * lp
    comp_id = np.empty(adjacency.shape[0], dtype=int)
    for k, comp in enumerate(connected_components(adjacency)):
        comp_id[comp] = k
    cross = comp_id[:, None] != comp_id[None, :]
    r[cross] = np.inf
    np.fill_diagonal(r, 0.0)
    return r


def commute_times(adjacency: np.ndarray) -> np.ndarray:
    """vol(G) * effective resistance, with vol the sum of degrees."""
    return float(adjacency.sum()) * effective_resistance(adjacency)


def spectral_gap(adjacency: np.ndarray):
    """(lambda_2, v_2) of the normalized Laplacian, deterministic sign.

    A warning is emitted when the eigenvalue is (near) repeated, where
    its derivative is undefined.
    """
    lam2, v2, degenerate = T.fiedler_pair(np.asarray(adjacency, dtype=np.float64))
    if degenerate:
        warnings.warn("lambda_2 has multiplicity >= 2; gradient undefined here")
    return lam2, v2


def _check_adjacency(a: np.ndarray) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-6):
        raise DomainError("adjacency must be symmetric")
    if a.min() < -1e-8:
        raise DomainError("adjacency must be nonnegative")


# ---------------------------------------------------------------------------
# differentiable layers
# ---------------------------------------------------------------------------


def init_adjacency(features: Tensor, tau: float = 0.5, knn: int = 8) -> Tensor:
    """exp(cosine similarity / tau), kept for each node's knn strongest
    neighbors, symmetrized by max, zero diagonal."""
    n, _ = features.shape
    dtype = features.dtype
    norms = T.sqrt(T.tsum(features * features, axis=1, keepdims=True))
    zero_rows = norms.data[:, 0] < 1e-12
    if zero_rows.any():
        warnings.warn("zero-norm node features; treating their similarity as uniform")
    safe = T.maximum(norms, Tensor(np.full_like(norms.data, 1e-12)))
    unit = features / safe
    sims = unit @ T.transpose(unit)
    if zero_rows.any():
        # uniform similarity: zero out the affected rows/columns pre-exp
        keep = (~zero_rows).astype(dtype)
        sims = sims * Tensor(np.outer(keep, keep).astype(dtype))
    weights = T.exp(sims / Tensor(np.asarray(tau, dtype=dtype)))
    w = weights.data.copy()
    np.fill_diagonal(w, -np.inf)
    k = min(knn, n - 1)
    kept = np.zeros((n, n), dtype=bool)
    idx = np.argpartition(-w, k - 1, axis=1)[:, :k]
    kept[np.arange(n)[:, None], idx] = True
    mask = (kept | kept.T) & ~np.eye(n, dtype=bool)
    return weights * Tensor(mask.astype(dtype))


@dataclass
class GapRewireParams:
    w_lin: Tensor  # [F, F]
    b_lin: Tensor  # [F]
    bilinear: Tensor  # [F, F]
    bias: Tensor  # scalar [1]


def gap_rewire(g: RegionGraph, params: GapRewireParams):
    """Gate edges with a sigmoid bilinear score on linearly mapped features.

    Returns the rewired graph plus the connectivity loss -lambda_2; a
    degenerate eigenpair contributes zero gradient for the step (logged
    inside the eigenvalue op).
    """
    x = T.linear(g.features, params.w_lin, params.b_lin)
    p = (x @ params.bilinear) @ T.transpose(x)
    sym = (p + T.transpose(p)) * Tensor(np.asarray(0.5, dtype=x.dtype))
    scores = T.sigmoid(sym + params.bias)
    adj = g.adjacency * scores  # zero diagonal is preserved by the product
    gap_loss = -T.fiedler_value(adj)
    return RegionGraph(adjacency=adj, features=x), gap_loss


@dataclass
class CtRewireParams:
    w_gcn: Tensor  # [F, F]
    b_gcn: Tensor  # [F]


def ct_rewire(g: RegionGraph, params: CtRewireParams) -> RegionGraph:
    """Amplify edges by commute time and apply one graph convolution.

    A'_ij = A_ij * CT_ij / mean(CT), renormalized to preserve total edge
    volume; X' = ReLU(D^-1/2 (A'+I) D^-1/2 X W + b).  On a connected
    graph the commute times are differentiable through
    (L + J/n)^-1 - J/n; if the graph is disconnected the commute-time
    factor is treated as a constant for the step.
    """
    a = g.adjacency
    n = a.shape[0]
    dtype = a.dtype
    eye = Tensor(np.eye(n, dtype=dtype))
    ones_n = np.full((n, n), 1.0 / n, dtype=dtype)
    if len(connected_components(a.data)) == 1:
        deg = T.tsum(a, axis=1)
        lap = eye * T.reshape(deg, (n, 1)) - a
        minv = T.inverse(lap + Tensor(ones_n))
        lplus = minv - Tensor(ones_n)
        diag = T.tsum(lplus * eye, axis=1)
        resist = T.reshape(diag, (n, 1)) + T.reshape(diag, (1, n)) - lplus * Tensor(np.asarray(2.0, dtype=dtype))
        ct = T.tsum(a) * resist
    else:
        log.warning("disconnected region graph; commute times detached this step")
        ct = Tensor(np.nan_to_num(commute_times(a.data), posinf=0.0).astype(dtype))
    ct_mean = T.tsum(ct) / Tensor(np.asarray(n * (n - 1), dtype=dtype))
    amplified = a * ct / ct_mean
    rescale = T.tsum(a) / T.tsum(amplified)
    adj = amplified * rescale
    with_self = adj + eye
    deg = T.tsum(with_self, axis=1)
    dinv = Tensor(np.asarray(1.0, dtype=dtype)) / T.sqrt(deg)
    norm = with_self * T.reshape(dinv, (n, 1)) * T.reshape(dinv, (1, n))
    x = T.relu(T.linear(norm @ g.features, params.w_gcn, params.b_gcn))
    return RegionGraph(adjacency=adj, features=x)


def mincut_pool(g: RegionGraph, assignment: Tensor):
    """Soft-cluster pooling (A, X) -> (A_k, X_k) with cut and ortho losses.

    ``assignment`` is row-stochastic [n, k].  L_cut = -Tr(S'AS)/Tr(S'DS)
    lies in [-1, 0]; L_ortho = ||S'S/||S'S||_F - I_k/sqrt(k)||_F lies in
    [0, sqrt(2)].  The pooled adjacency has its diagonal zeroed.
    """
    a, x = g.adjacency, g.features
    n, k = assignment.shape
    dtype = a.dtype
    if a.data.sum() <= 0:
        raise DomainError("zero-volume graph cannot be pooled")
    s_t = T.transpose(assignment)
    x_k = s_t @ x
    a_k_full = s_t @ (a @ assignment)
    eye_n = Tensor(np.eye(n, dtype=dtype))
    eye_k = Tensor(np.eye(k, dtype=dtype))
    deg = T.tsum(a, axis=1)
    d_mat = eye_n * T.reshape(deg, (n, 1))
    cut_num = T.tsum(a_k_full * eye_k)
    cut_den = T.tsum((s_t @ (d_mat @ assignment)) * eye_k)
    cut_loss = -(cut_num / cut_den)
    ss = s_t @ assignment
    ss_norm = T.sqrt(T.tsum(ss * ss))
    target = Tensor((np.eye(k) / np.sqrt(k)).astype(dtype))
    diff = ss / ss_norm - target
    ortho_loss = T.sqrt(T.tsum(diff * diff))
    off_diag = Tensor((1.0 - np.eye(k)).astype(dtype))
    a_k = a_k_full * off_diag
    a_k = (a_k + T.transpose(a_k)) * Tensor(np.asarray(0.5, dtype=dtype))
    return a_k, x_k, cut_loss, ortho_loss


@dataclass
class RrmParams:
    gap: GapRewireParams
    ct: CtRewireParams
    assign_w1: Tensor  # [F, Fh]
    assign_b1: Tensor
    assign_w2: Tensor  # [Fh, k]
    assign_b2: Tensor
    post_w: Tensor  # [F, F]
    post_b: Tensor
    head_w: Tensor  # [F, n_classes]
    head_b: Tensor
    tau: float = 0.5
    knn: int = 8

    def named(self, prefix: str = "rrm") -> dict:
        return {
            f"{prefix}.gap.w_lin": self.gap.w_lin,
            f"{prefix}.gap.b_lin": self.gap.b_lin,
            f"{prefix}.gap.bilinear": self.gap.bilinear,
            f"{prefix}.gap.bias": self.gap.bias,
            f"{prefix}.ct.w_gcn": self.ct.w_gcn,
            f"{prefix}.ct.b_gcn": self.ct.b_gcn,
            f"{prefix}.assign.w1": self.assign_w1,
            f"{prefix}.assign.b1": self.assign_b1,
            f"{prefix}.assign.w2": self.assign_w2,
            f"{prefix}.assign.b2": self.assign_b2,
            f"{prefix}.post.w": self.post_w,
            f"{prefix}.post.b": self.post_b,
            f"{prefix}.head.w": self.head_w,
            f"{prefix}.head.b": self.head_b,
        }


def init_rrm_params(
    rng: np.random.Generator,
    feature_dim: int,
    n_classes: int = 2,
    clusters: int = 6,
    tau: float = 0.5,
    knn: int = 8,
    dtype=np.float32,
) -> RrmParams:
    f = feature_dim
    fh = max(2, f // 2)

    def glorot(shape):
        bound = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    return RrmParams(
        gap=GapRewireParams(glorot((f, f)), zeros((f,)), glorot((f, f)), zeros((1,))),
        ct=CtRewireParams(glorot((f, f)), zeros((f,))),
        assign_w1=glorot((f, fh)),
        assign_b1=zeros((fh,)),
        assign_w2=glorot((fh, clusters)),
        assign_b2=zeros((clusters,)),
        post_w=glorot((f, f)),
        post_b=zeros((f,)),
        head_w=glorot((f, n_classes)),
        head_b=zeros((n_classes,)),
        tau=tau,
        knn=knn,
    )


def rrm_forward(nodes: Tensor, params: RrmParams) -> RrmOutput:
    """Full region-relationship pass from a [24, F] node matrix to logits.

    The exported adjacency is the pre-pooling one (24 region nodes, as
    visualized), taken after both rewiring layers.
    """
    if nodes.ndim != 2:
        raise ShapeError(f"rrm_forward expects [n, F] nodes, got {nodes.shape}")
    g = RegionGraph(adjacency=init_adjacency(nodes, params.tau, params.knn), features=nodes)
    g, gap_loss = gap_rewire(g, params.gap)
    g = ct_rewire(g, params.ct)
    hidden = T.relu(T.linear(g.features, params.assign_w1, params.assign_b1))
    assignment = T.softmax(T.linear(hidden, params.assign_w2, params.assign_b2), axis=1)
    a_k, x_k, cut_loss, ortho_loss = mincut_pool(g, assignment)
    pooled_nodes = T.relu(T.linear(x_k, params.post_w, params.post_b))
    x_cls = T.tmean(pooled_nodes, axis=0)
    logits = T.reshape(
        T.linear(T.reshape(x_cls, (1, x_cls.shape[0])), params.head_w, params.head_b),
        (params.head_b.shape[0],),
    )
    return RrmOutput(
        logits=logits,
        pooled=x_cls,
        node_features=g.features,
        adjacency=g.adjacency,
        cut_loss=cut_loss,
        ortho_loss=ortho_loss,
        gap_loss=gap_loss,
    )

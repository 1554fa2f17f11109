"""NumPy reference kernels.

The compiled module (`_speedups`) mirrors these functions. Dijkstra results
are bit-identical across backends; the actor-critic kernels may differ in the
last ulps because NumPy's matmul reduction order is backend-defined.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

BACKEND = "python"

# Additive mask value: largest-magnitude negative logit that still leaves
# ordinary logits finite when stored alongside it. exp(MASKED_LOGIT - max)
# underflows to exactly 0.0, so masked-out probabilities are exact zeros.
MASKED_LOGIT = -1e300


def dijkstra_csr(
    indptr: np.ndarray,
    indices: np.ndarray,
    weights: np.ndarray,
    source: int,
    n: int,
) -> np.ndarray:
    """Single-source shortest-path costs over a CSR adjacency; inf = unreachable."""
    dist = np.full(n, math.inf, dtype=np.float64)
    if n == 0:
        return dist
    iptr = indptr.tolist()
    idx = indices.tolist()
    w = weights.tolist()
    d = dist.tolist()
    d[source] = 0.0
    heap = [(0.0, source)]
    pop, push = heapq.heappop, heapq.heappush
    while heap:
        du, u = pop(heap)
        if du > d[u]:
            continue
        for e in range(iptr[u], iptr[u + 1]):
            v = idx[e]
            nd = du + w[e]
            if nd < d[v]:
                d[v] = nd
                push(heap, (nd, v))
    return np.asarray(d, dtype=np.float64)


def _as_batch(cats, feats, mask):
    cats = np.ascontiguousarray(cats, dtype=np.int64)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=bool)
    return cats, feats, mask


def ac_forward(C, F, fb, Q, K, W1, b1, w2, b2, cats, feats, mask):
    """Batched attention actor-critic forward pass.

    Returns (logits, log_probs, probs, values, contexts). Masked-out entries
    carry MASKED_LOGIT / -inf / exactly-zero probability.
    """
    cats, feats, mask = _as_batch(cats, feats, mask)
    d = C.shape[1]
    scale = math.sqrt(d)
    ec = C[cats]  # (B, d)
    q = ec @ Q.T  # (B, d)
    e = feats @ F + fb  # (B, n, d)
    k = e @ np.ascontiguousarray(K.T)  # (B, n, d)
    zr = np.einsum("bd,bnd->bn", q, k) / scale
    zlow = np.where(mask, zr, -np.inf)
    mx = zlow.max(axis=1, keepdims=True)
    if not np.isfinite(mx).all():
        raise ValueError("forward pass given a state with an all-false action mask")
    ex = np.exp(zlow - mx)  # exactly 0.0 on masked-out entries
    sx = ex.sum(axis=1, keepdims=True)
    p = ex / sx
    lp = np.where(mask, (zr - mx) - np.log(sx), -np.inf)
    ctx = np.einsum("bn,bnd->bd", p, k)
    h = np.tanh(ctx @ W1.T + b1)
    v = h @ w2 + float(b2)
    logits = np.where(mask, zr, MASKED_LOGIT)
    return logits, lp, p, v, ctx


def ac_backward(
    C, F, fb, Q, K, W1, b1, w2, b2,
    cats, feats, mask,
    actions, advantages, critic_targets,
    critic_weight, entropy_coef,
):
    """Mean-over-batch gradients of the A2C loss.

    Loss per sample: -A * log pi(a|s) + critic_weight * (target - V)^2
    - entropy_coef * H(pi). The advantage is a constant input, so no gradient
    flows from the actor term into the value head.

    Returns (grads, actor_loss, critic_loss, entropy) with grads ordered as
    (C, F, fb, Q, K, W1, b1, w2, b2).
    """
    cats, feats, mask = _as_batch(cats, feats, mask)
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    advantages = np.ascontiguousarray(advantages, dtype=np.float64)
    targets = np.ascontiguousarray(critic_targets, dtype=np.float64)
    B = cats.shape[0]
    d = C.shape[1]
    scale = math.sqrt(d)

    # Forward (same operations as ac_forward).
    ec = C[cats]
    q = ec @ Q.T
    e = feats @ F + fb
    k = e @ np.ascontiguousarray(K.T)
    zr = np.einsum("bd,bnd->bn", q, k) / scale
    zlow = np.where(mask, zr, -np.inf)
    mx = zlow.max(axis=1, keepdims=True)
    if not np.isfinite(mx).all():
        raise ValueError("backward pass given a state with an all-false action mask")
    ex = np.exp(zlow - mx)
    sx = ex.sum(axis=1, keepdims=True)
    p = ex / sx
    lp_safe = np.where(mask, (zr - mx) - np.log(sx), 0.0)
    ctx = np.einsum("bn,bnd->bd", p, k)
    u1 = ctx @ W1.T + b1
    h = np.tanh(u1)
    v = h @ w2 + float(b2)

    H = -(p * lp_safe).sum(axis=1)
    rows = np.arange(B)
    # d/dz of the actor term and the -entropy_coef * H term.
    g_z = advantages[:, None] * p
    g_z[rows, actions] -= advantages
    g_z += entropy_coef * p * (lp_safe + H[:, None])
    # Critic chain: V -> tanh hidden -> context -> (attention weights, keys).
    resid = targets - v
    g_v = -2.0 * critic_weight * resid
    g_w2 = h.T @ g_v
    g_b2 = g_v.sum()
    g_u = (g_v[:, None] * w2) * (1.0 - h * h)
    g_W1 = g_u.T @ ctx
    g_b1 = g_u.sum(axis=0)
    g_ctx = g_u @ W1
    g_p = np.einsum("bd,bnd->bn", g_ctx, k)
    g_k = p[:, :, None] * g_ctx[:, None, :]
    g_z += p * (g_p - (p * g_p).sum(axis=1, keepdims=True))
    # Attention score chain into q, k and the embeddings.
    g_k += g_z[:, :, None] * (q[:, None, :] / scale)
    g_q = np.einsum("bn,bnd->bd", g_z, k) / scale
    g_Q = g_q.T @ ec
    g_ec = g_q @ Q
    g_C = np.zeros_like(C)
    np.add.at(g_C, cats, g_ec)
    g_K = g_k.reshape(-1, d).T @ e.reshape(-1, d)
    g_e = g_k @ K
    g_F = feats.reshape(-1, 3).T @ g_e.reshape(-1, d)
    g_fb = g_e.sum(axis=(0, 1))

    inv = 1.0 / B
    grads = (
        g_C * inv,
        g_F * inv,
        g_fb * inv,
        g_Q * inv,
        g_K * inv,
        g_W1 * inv,
        g_b1 * inv,
        g_w2 * inv,
        np.asarray(g_b2 * inv, dtype=np.float64),
    )
    actor_loss = float(-(advantages * lp_safe[rows, actions]).mean())
    critic_loss = float((resid * resid).mean())
    entropy = float(H.mean())
    return grads, actor_loss, critic_loss, entropy

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: CSR Dijkstra and the attention actor-critic passes.

Mirrors `_pure`; Dijkstra output is bit-identical, the actor-critic kernels
agree to the last few ulps (BLAS reduction order differs).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log, sqrt, tanh

cnp.import_array()

BACKEND = "cython"

MASKED_LOGIT = -1e300
cdef double _MASKED = -1e300


# ---------------------------------------------------------------------------
# Dijkstra over CSR


cdef inline void _heap_push(double* keys, cnp.int64_t* nodes, Py_ssize_t* size, double key, cnp.int64_t node) noexcept nogil:
    cdef Py_ssize_t i = size[0]
    cdef Py_ssize_t parent
    keys[i] = key
    nodes[i] = node
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[i], keys[parent] = keys[parent], keys[i]
        nodes[i], nodes[parent] = nodes[parent], nodes[i]
        i = parent


cdef inline void _heap_pop(double* keys, cnp.int64_t* nodes, Py_ssize_t* size, double* out_key, cnp.int64_t* out_node) noexcept nogil:
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t child, last
    out_key[0] = keys[0]
    out_node[0] = nodes[0]
    last = size[0] - 1
    keys[0] = keys[last]
    nodes[0] = nodes[last]
    size[0] = last
    while True:
        child = 2 * i + 1
        if child >= last:
            break
        if child + 1 < last and keys[child + 1] < keys[child]:
            child += 1
        if keys[i] <= keys[child]:
            break
        keys[i], keys[child] = keys[child], keys[i]
        nodes[i], nodes[child] = nodes[child], nodes[i]
        i = child


def dijkstra_csr(indptr, indices, weights, source, n):
    """Single-source shortest-path costs over a CSR adjacency; inf = unreachable."""
    cdef cnp.int64_t[::1] iptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] idx = np.ascontiguousarray(indices, dtype=np.int64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nn = int(n)
    cdef Py_ssize_t src = int(source)
    out = np.full(nn, np.inf, dtype=np.float64)
    if nn == 0:
        return out
    cdef double[::1] dist = out
    # The heap cannot outgrow one entry per successful relaxation plus the seed.
    cap = len(idx) + nn + 1
    keys_arr = np.empty(cap, dtype=np.float64)
    nodes_arr = np.empty(cap, dtype=np.int64)
    cdef double[::1] keys = keys_arr
    cdef cnp.int64_t[::1] nodes = nodes_arr
    cdef Py_ssize_t size = 0
    cdef double du, nd
    cdef cnp.int64_t u, v
    cdef Py_ssize_t e
    with nogil:
        dist[src] = 0.0
        _heap_push(&keys[0], &nodes[0], &size, 0.0, src)
        while size > 0:
            _heap_pop(&keys[0], &nodes[0], &size, &du, &u)
            if du > dist[u]:
                continue
            for e in range(iptr[u], iptr[u + 1]):
                v = idx[e]
                nd = du + w[e]
                if nd < dist[v]:
                    dist[v] = nd
                    _heap_push(&keys[0], &nodes[0], &size, nd, v)
    return out


# ---------------------------------------------------------------------------
# Attention actor-critic


cdef void _forward_one(
    double[:, ::1] C, double[:, ::1] F, double[::1] fb,
    double[:, ::1] Q, double[:, ::1] K,
    double[:, ::1] W1, double[::1] b1, double[::1] w2, double b2,
    cnp.int64_t cat, double[:, ::1] feats, cnp.uint8_t[::1] mask,
    double[::1] q, double[:, ::1] e, double[:, ::1] k,
    double[::1] z, double[::1] p, double[::1] lp,
    double[::1] ctx, double[::1] h, double* value,
) noexcept nogil:
    cdef Py_ssize_t d = C.shape[1]
    cdef Py_ssize_t n = feats.shape[0]
    cdef Py_ssize_t f, t, s
    cdef double acc, mx, sx, lsx, scale
    scale = sqrt(<double> d)
    for t in range(d):
        acc = 0.0
        for s in range(d):
            acc += Q[t, s] * C[cat, s]
        q[t] = acc
    for f in range(n):
        for t in range(d):
            e[f, t] = feats[f, 0] * F[0, t] + feats[f, 1] * F[1, t] + feats[f, 2] * F[2, t] + fb[t]
        for t in range(d):
            acc = 0.0
            for s in range(d):
                acc += K[t, s] * e[f, s]
            k[f, t] = acc
        acc = 0.0
        for t in range(d):
            acc += q[t] * k[f, t]
        z[f] = acc / scale
    mx = -INFINITY
    for f in range(n):
        if mask[f] and z[f] > mx:
            mx = z[f]
    sx = 0.0
    for f in range(n):
        if mask[f]:
            p[f] = exp(z[f] - mx)
            sx += p[f]
        else:
            p[f] = 0.0
    lsx = log(sx)
    for f in range(n):
        if mask[f]:
            lp[f] = (z[f] - mx) - lsx
            p[f] = p[f] / sx
        else:
            lp[f] = -INFINITY
    for t in range(d):
        acc = 0.0
        for f in range(n):
            if mask[f]:
                acc += p[f] * k[f, t]
        ctx[t] = acc
    for t in range(d):
        acc = 0.0
        for s in range(d):
            acc += W1[t, s] * ctx[s]
        h[t] = tanh(acc + b1[t])
    acc = 0.0
    for t in range(d):
        acc += h[t] * w2[t]
    value[0] = acc + b2


def _coerce(C, F, fb, Q, K, W1, b1, w2, b2, cats, feats, mask):
    return (
        np.ascontiguousarray(C, dtype=np.float64),
        np.ascontiguousarray(F, dtype=np.float64),
        np.ascontiguousarray(fb, dtype=np.float64),
        np.ascontiguousarray(Q, dtype=np.float64),
        np.ascontiguousarray(K, dtype=np.float64),
        np.ascontiguousarray(W1, dtype=np.float64),
        np.ascontiguousarray(b1, dtype=np.float64),
        np.ascontiguousarray(w2, dtype=np.float64),
        float(b2),
        np.ascontiguousarray(cats, dtype=np.int64),
        np.ascontiguousarray(feats, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.uint8),
    )


def ac_forward(C, F, fb, Q, K, W1, b1, w2, b2, cats, feats, mask):
    """Batched forward pass; see the pure-NumPy kernel for the contract."""
    C, F, fb, Q, K, W1, b1, w2, b2f, cats, feats, mask = _coerce(
        C, F, fb, Q, K, W1, b1, w2, b2, cats, feats, mask
    )
    cdef double[:, ::1] Cv = C
    cdef double[:, ::1] Fv = F
    cdef double[::1] fbv = fb
    cdef double[:, ::1] Qv = Q
    cdef double[:, ::1] Kv = K
    cdef double[:, ::1] W1v = W1
    cdef double[::1] b1v = b1
    cdef double[::1] w2v = w2
    cdef double b2c = b2f
    cdef cnp.int64_t[::1] catv = cats
    cdef double[:, :, ::1] featv = feats
    cdef cnp.uint8_t[:, ::1] maskv = mask
    cdef Py_ssize_t B = featv.shape[0]
    cdef Py_ssize_t n = featv.shape[1]
    cdef Py_ssize_t d = Cv.shape[1]
    logits = np.empty((B, n), dtype=np.float64)
    lps = np.empty((B, n), dtype=np.float64)
    ps = np.empty((B, n), dtype=np.float64)
    values = np.empty(B, dtype=np.float64)
    ctxs = np.empty((B, d), dtype=np.float64)
    cdef double[:, ::1] logit_v = logits
    cdef double[:, ::1] lp_v = lps
    cdef double[:, ::1] p_v = ps
    cdef double[::1] val_v = values
    cdef double[:, ::1] ctx_v = ctxs
    q_b = np.empty(d); e_b = np.empty((n, d)); k_b = np.empty((n, d))
    z_b = np.empty(n); p_b = np.empty(n); lp_b = np.empty(n)
    ctx_b = np.empty(d); h_b = np.empty(d)
    cdef double[::1] q = q_b
    cdef double[:, ::1] e = e_b
    cdef double[:, ::1] k = k_b
    cdef double[::1] z = z_b
    cdef double[::1] p = p_b
    cdef double[::1] lp = lp_b
    cdef double[::1] ctx = ctx_b
    cdef double[::1] h = h_b
    cdef double value
    cdef Py_ssize_t b, f
    cdef bint any_mask
    for b in range(B):
        any_mask = False
        for f in range(n):
            if maskv[b, f]:
                any_mask = True
                break
        if not any_mask:
            raise ValueError("forward pass given a state with an all-false action mask")
        _forward_one(
            Cv, Fv, fbv, Qv, Kv, W1v, b1v, w2v, b2c,
            catv[b], featv[b], maskv[b],
            q, e, k, z, p, lp, ctx, h, &value,
        )
        for f in range(n):
            logit_v[b, f] = z[f] if maskv[b, f] else _MASKED
            lp_v[b, f] = lp[f]
            p_v[b, f] = p[f]
        for f in range(d):
            ctx_v[b, f] = ctx[f]
        val_v[b] = value
    return logits, lps, ps, values, ctxs


def ac_backward(
    C, F, fb, Q, K, W1, b1, w2, b2,
    cats, feats, mask,
    actions, advantages, critic_targets,
    critic_weight, entropy_coef,
):
    """Batched mean-loss gradients; see the pure-NumPy kernel for the contract."""
    C, F, fb, Q, K, W1, b1, w2, b2f, cats, feats, mask = _coerce(
        C, F, fb, Q, K, W1, b1, w2, b2, cats, feats, mask
    )
    acts = np.ascontiguousarray(actions, dtype=np.int64)
    advs = np.ascontiguousarray(advantages, dtype=np.float64)
    tgts = np.ascontiguousarray(critic_targets, dtype=np.float64)
    cdef double cw = float(critic_weight)
    cdef double ce = float(entropy_coef)
    cdef double[:, ::1] Cv = C
    cdef double[:, ::1] Fv = F
    cdef double[::1] fbv = fb
    cdef double[:, ::1] Qv = Q
    cdef double[:, ::1] Kv = K
    cdef double[:, ::1] W1v = W1
    cdef double[::1] b1v = b1
    cdef double[::1] w2v = w2
    cdef double b2c = b2f
    cdef cnp.int64_t[::1] catv = cats
    cdef double[:, :, ::1] featv = feats
    cdef cnp.uint8_t[:, ::1] maskv = mask
    cdef cnp.int64_t[::1] actv = acts
    cdef double[::1] advv = advs
    cdef double[::1] tgtv = tgts
    cdef Py_ssize_t B = featv.shape[0]
    cdef Py_ssize_t n = featv.shape[1]
    cdef Py_ssize_t d = Cv.shape[1]
    cdef double scale = sqrt(<double> d)

    gC = np.zeros_like(C); gF = np.zeros_like(F); gfb = np.zeros_like(fb)
    gQ = np.zeros_like(Q); gK = np.zeros_like(K)
    gW1 = np.zeros_like(W1); gb1 = np.zeros_like(b1); gw2 = np.zeros_like(w2)
    cdef double[:, ::1] gCv = gC
    cdef double[:, ::1] gFv = gF
    cdef double[::1] gfbv = gfb
    cdef double[:, ::1] gQv = gQ
    cdef double[:, ::1] gKv = gK
    cdef double[:, ::1] gW1v = gW1
    cdef double[::1] gb1v = gb1
    cdef double[::1] gw2v = gw2
    cdef double gb2 = 0.0

    q_b = np.empty(d); e_b = np.empty((n, d)); k_b = np.empty((n, d))
    z_b = np.empty(n); p_b = np.empty(n); lp_b = np.empty(n)
    ctx_b = np.empty(d); h_b = np.empty(d)
    gz_b = np.empty(n); gctx_b = np.empty(d); gu_b = np.empty(d)
    gq_b = np.empty(d); gec_b = np.empty(d)
    gk_b = np.empty((n, d)); ge_b = np.empty((n, d))
    cdef double[::1] q = q_b
    cdef double[:, ::1] e = e_b
    cdef double[:, ::1] k = k_b
    cdef double[::1] z = z_b
    cdef double[::1] p = p_b
    cdef double[::1] lp = lp_b
    cdef double[::1] ctx = ctx_b
    cdef double[::1] h = h_b
    cdef double[::1] g_z = gz_b
    cdef double[::1] g_ctx = gctx_b
    cdef double[::1] g_u = gu_b
    cdef double[::1] g_q = gq_b
    cdef double[::1] g_ec = gec_b
    cdef double[:, ::1] g_k = gk_b
    cdef double[:, ::1] g_e = ge_b

    cdef double value, H, A, resid, g_v, acc, dot_pg, gh
    cdef double actor_sum = 0.0, critic_sum = 0.0, entropy_sum = 0.0
    cdef Py_ssize_t b, f, t, s, a
    cdef cnp.int64_t cat
    cdef bint any_mask
    for b in range(B):
        any_mask = False
        for f in range(n):
            if maskv[b, f]:
                any_mask = True
                break
        if not any_mask:
            raise ValueError("backward pass given a state with an all-false action mask")
        cat = catv[b]
        _forward_one(
            Cv, Fv, fbv, Qv, Kv, W1v, b1v, w2v, b2c,
            cat, featv[b], maskv[b],
            q, e, k, z, p, lp, ctx, h, &value,
        )
        a = actv[b]
        A = advv[b]
        H = 0.0
        for f in range(n):
            if maskv[b, f]:
                H -= p[f] * lp[f]
        resid = tgtv[b] - value
        actor_sum += -A * lp[a]
        critic_sum += resid * resid
        entropy_sum += H
        # d loss / d logits: actor + entropy terms
        for f in range(n):
            if maskv[b, f]:
                g_z[f] = A * p[f] + ce * p[f] * (lp[f] + H)
            else:
                g_z[f] = 0.0
        g_z[a] -= A
        # critic chain
        g_v = -2.0 * cw * resid
        gb2 += g_v
        for t in range(d):
            gw2v[t] += g_v * h[t]
            gh = g_v * w2v[t]
            g_u[t] = gh * (1.0 - h[t] * h[t])
        for t in range(d):
            gb1v[t] += g_u[t]
            for s in range(d):
                gW1v[t, s] += g_u[t] * ctx[s]
        for t in range(d):
            acc = 0.0
            for s in range(d):
                acc += g_u[s] * W1v[s, t]
            g_ctx[t] = acc
        # context -> attention weights (through softmax) and keys;
        # the z buffer is no longer needed, reuse it for g_p
        dot_pg = 0.0
        for f in range(n):
            if maskv[b, f]:
                acc = 0.0
                for t in range(d):
                    acc += g_ctx[t] * k[f, t]
                z[f] = acc
                dot_pg += p[f] * acc
        for f in range(n):
            if maskv[b, f]:
                g_z[f] += p[f] * (z[f] - dot_pg)
                for t in range(d):
                    g_k[f, t] = p[f] * g_ctx[t] + g_z[f] * (q[t] / scale)
            else:
                for t in range(d):
                    g_k[f, t] = 0.0
        # scores -> query
        for t in range(d):
            acc = 0.0
            for f in range(n):
                if maskv[b, f]:
                    acc += g_z[f] * k[f, t]
            g_q[t] = acc / scale
        for t in range(d):
            acc = 0.0
            for s in range(d):
                gQv[t, s] += g_q[t] * Cv[cat, s]
                acc += g_q[s] * Qv[s, t]
            g_ec[t] = acc
        for t in range(d):
            gCv[cat, t] += g_ec[t]
        # keys -> key projection and facility embeddings
        for f in range(n):
            if not maskv[b, f]:
                for t in range(d):
                    g_e[f, t] = 0.0
                continue
            for t in range(d):
                acc = 0.0
                for s in range(d):
                    gKv[t, s] += g_k[f, t] * e[f, s]
                    acc += g_k[f, s] * Kv[s, t]
                g_e[f, t] = acc
        for f in range(n):
            if not maskv[b, f]:
                continue
            for t in range(d):
                gFv[0, t] += featv[b, f, 0] * g_e[f, t]
                gFv[1, t] += featv[b, f, 1] * g_e[f, t]
                gFv[2, t] += featv[b, f, 2] * g_e[f, t]
                gfbv[t] += g_e[f, t]

    inv = 1.0 / B
    grads = (
        gC * inv, gF * inv, gfb * inv, gQ * inv, gK * inv,
        gW1 * inv, gb1 * inv, gw2 * inv, np.asarray(gb2 * inv, dtype=np.float64),
    )
    return grads, actor_sum / B, critic_sum / B, entropy_sum / B

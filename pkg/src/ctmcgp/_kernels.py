"""Compiled inner loops for tree traversals and gradient accumulation.

All partial-likelihood vectors are stored rescaled so that their largest
entry is 1; the logarithm of the removed factor is tracked per node.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def postorder_pass(children, P, tip_states, n_tips, post, post_scale):
    """Fill post-order partials for every node; returns False on a zero partial."""
    n_nodes, S = post.shape
    for v in range(n_tips):
        for k in range(S):
            post[v, k] = 0.0
        post[v, tip_states[v]] = 1.0
        post_scale[v] = 0.0
    for v in range(n_tips, n_nodes):
        a = children[v, 0]
        b = children[v, 1]
        m = 0.0
        for k in range(S):
            sa = 0.0
            sb = 0.0
            for l in range(S):
                sa += P[a, k, l] * post[a, l]
                sb += P[b, k, l] * post[b, l]
            x = sa * sb
            post[v, k] = x
            if x > m:
                m = x
        if m <= 0.0:
            return False
        for k in range(S):
            post[v, k] /= m
        post_scale[v] = post_scale[a] + post_scale[b] + np.log(m)
    return True


@njit(cache=True)
def preorder_pass(children, P, post, post_scale, root_dist, pre, pre_scale, sib, sib_scale):
    """Fill pre-order partials and the sibling-weighted parent vectors.

    ``sib[c] = pre[pa(c)] * (P[sibling] @ post[sibling])`` is the vector that
    branch ``c`` is propagated against; ``pre[c] = P[c].T @ sib[c]``.
    """
    n_nodes, S = post.shape
    root = n_nodes - 1
    for k in range(S):
        pre[root, k] = root_dist[k]
        sib[root, k] = 0.0
    pre_scale[root] = 0.0
    sib_scale[root] = 0.0
    tmp = np.empty(S)
    for v in range(root, -1, -1):
        a = children[v, 0]
        if a < 0:
            continue
        b = children[v, 1]
        for side in range(2):
            c = a if side == 0 else b
            z = b if side == 0 else a
            m = 0.0
            for k in range(S):
                s = 0.0
                for l in range(S):
                    s += P[z, k, l] * post[z, l]
                x = pre[v, k] * s
                tmp[k] = x
                if x > m:
                    m = x
            if m <= 0.0:
                m = 1.0
            for k in range(S):
                sib[c, k] = tmp[k] / m
            sib_scale[c] = pre_scale[v] + post_scale[z] + np.log(m)
            m2 = 0.0
            for l in range(S):
                s = 0.0
                for k in range(S):
                    s += P[c, k, l] * sib[c, k]
                pre[c, l] = s
                if s > m2:
                    m2 = s
            if m2 <= 0.0:
                m2 = 1.0
            for l in range(S):
                pre[c, l] /= m2
            pre_scale[c] = sib_scale[c] + np.log(m2)


@njit(cache=True)
def approx_pair_accumulate(lengths, post, pre, n_branches, out):
    """``out[i, j] = sum_c b_c post[c, j] pre[c, i] / (post[c] . pre[c])``.

    One O(N) reduction per ordered pair ``(i, j)``, diagonal included.
    """
    S = post.shape[1]
    w = np.empty(n_branches)
    for c in range(n_branches):
        d = 0.0
        for k in range(S):
            d += post[c, k] * pre[c, k]
        w[c] = lengths[c] / d if d > 0.0 else 0.0
    for i in range(S):
        for j in range(S):
            s = 0.0
            for c in range(n_branches):
                s += w[c] * pre[c, i] * post[c, j]
            out[i, j] = s
    return out

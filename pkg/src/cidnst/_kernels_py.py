"""Pure numpy/Python versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def ctc_forward_backward(logp, labels, blank):
    """Negative log-likelihood of ``labels`` and its gradient w.r.t. ``logp``."""
    logp = np.asarray(logp, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    L, K = logp.shape
    S = 2 * len(labels) + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = labels
    # transitions s-2 -> s allowed only onto a label that differs from the one two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((L, S), -np.inf)
    alpha[0, 0] = logp[0, blank]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, L):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + logp[t, ext]

    loglik = alpha[L - 1, S - 1]
    if S > 1:
        loglik = np.logaddexp(loglik, alpha[L - 1, S - 2])

    beta = np.full((L, S), -np.inf)
    beta[L - 1, S - 1] = 0.0
    if S > 1:
        beta[L - 1, S - 2] = 0.0
    for t in range(L - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b

    occ = alpha + beta
    grad = np.zeros((L, K))
    with np.errstate(divide="ignore"):
        for k in np.unique(ext):
            cols = occ[:, ext == k]
            grad[:, k] = -np.exp(np.logaddexp.reduce(cols, axis=1) - loglik)
    return float(-loglik), grad


def levenshtein_align(ref, hyp):
    """Unit-cost edit distance and script (0=match, 1=sub, 2=ins, 3=del)."""
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, up = cost[i], cost[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(up[j - 1] + (r != hyp[j - 1]), row[j - 1] + 1, up[j] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(0 if ref[i - 1] == hyp[j - 1] else 1)
            i -= 1
            j -= 1
        elif j > 0 and cost[i][j] == cost[i][j - 1] + 1:
            ops.append(2)
            j -= 1
        else:
            ops.append(3)
            i -= 1
    ops.reverse()
    return int(cost[n][m]), np.asarray(ops, dtype=np.int8)

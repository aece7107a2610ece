"""Pure numpy implementations of the hot kernels.

Same algorithms and tie-breaking as the compiled ``_kernels`` module; used
when the extension is not built or ``REGIMEFIT_PURE_PYTHON`` is set.
"""

import numpy as np


def segment_rss_table(t, x, p, min_len):
    """Least-squares residual sum of squares of a degree-``p`` polynomial
    on every segment of indexes ``(a, b]``.

    Returns an ``(n + 1, n + 1)`` array; entries with ``b - a < min_len``
    are ``inf``. Moments are accumulated from each segment start with
    ``t`` and ``x`` shifted to that start for conditioning.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    n = t.size
    m = p + 1
    out = np.full((n + 1, n + 1), np.inf)
    hankel = np.add.outer(np.arange(m), np.arange(m))
    for a in range(n - min_len + 1):
        u = t[a:] - t[a]
        y = x[a:] - x[a]
        powers = np.vander(u, 2 * p + 1, increasing=True)
        s = np.cumsum(powers, axis=0)
        sx = np.cumsum(powers[:, :m] * y[:, None], axis=0)
        sxx = np.cumsum(y * y)
        first = min_len - 1
        gram = s[first:, hankel]
        rhs = sx[first:]
        try:
            chol = np.linalg.cholesky(gram)
            z = np.linalg.solve(chol, rhs[:, :, None])
            fitted = np.einsum("ij,ij->i", z[:, :, 0], z[:, :, 0])
        except np.linalg.LinAlgError:
            coef = np.stack([np.linalg.lstsq(g, r, rcond=None)[0] for g, r in zip(gram, rhs)])
            fitted = np.einsum("ij,ij->i", coef, rhs)
        rss = np.maximum(sxx[first:] - fitted, 0.0)
        out[a, a + min_len:] = rss
    return out


def dp_sweep(cost, K):
    """Forward dynamic program over (segment count, end index).

    ``best[k, b]`` is the minimal total cost of splitting ``[0, b)`` into
    ``k + 1`` segments; ``back[k, b]`` the start of the last one (first
    minimizer on ties).
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0] - 1
    best = np.full((K, n + 1), np.inf)
    back = np.zeros((K, n + 1), dtype=np.int64)
    best[0] = cost[0]
    for k in range(1, K):
        prev = best[k - 1]
        for b in range(k + 1, n + 1):
            cand = prev[:b] + cost[:b, b]
            a = int(np.argmin(cand))
            best[k, b] = cand[a]
            back[k, b] = a
    return best, back


def forward_backward(emission, pi, A):
    """Scaled forward-backward recursions.

    ``emission`` holds per-step likelihoods (any positive row scaling).
    Returns normalized forward variables (filtering probabilities),
    scaled backward variables and the per-step normalizers ``c`` with
    ``log p(x) = sum(log c)`` relative to the emission scaling.
    """
    emission = np.asarray(emission, dtype=float)
    n, K = emission.shape
    alpha = np.empty((n, K))
    beta = np.empty((n, K))
    c = np.empty(n)
    a = pi * emission[0]
    c[0] = a.sum()
    if not c[0] > 0:
        raise FloatingPointError("zero likelihood at step 0")
    alpha[0] = a / c[0]
    for i in range(1, n):
        a = (alpha[i - 1] @ A) * emission[i]
        c[i] = a.sum()
        if not c[i] > 0:
            raise FloatingPointError(f"zero likelihood at step {i}")
        alpha[i] = a / c[i]
    beta[n - 1] = 1.0
    for i in range(n - 2, -1, -1):
        beta[i] = (A @ (emission[i + 1] * beta[i + 1])) / c[i + 1]
    return alpha, beta, c

"""Matrix-exponential actions for rate matrices.

``expm_action`` uses uniformization: with ``L >= max |q_ii|`` and
``P = I + Q / L``, ``v exp(Qt) = sum_k Pois(k; L t) v P^k``.  The series is
truncated once the remaining Poisson tail mass drops below ``tol``.  It works
on dense arrays and scipy sparse matrices alike and never produces negative
entries for a non-negative ``v``.
"""
import numpy as np
import scipy.linalg
import scipy.sparse
from scipy import stats

# Poisson means above this are split into several steps to keep the number
# of terms per step bounded.
_MAX_MEAN = 200.0


def uniformization_rate(q):
    d = q.diagonal() if scipy.sparse.issparse(q) else np.diagonal(q)
    return float(np.max(-d)) if d.size else 0.0


def _poisson_weights(mu, tol):
    kmax = int(stats.poisson.isf(tol, mu)) + 1
    k = np.arange(kmax + 1)
    return stats.poisson.pmf(k, mu)


def expm_action(q, v, t, tol=1e-12, left=True):
    """Return ``v @ expm(q t)`` (``left=True``) or ``expm(q t) @ v``.

    ``v`` may be a vector or a 2-d block of vectors (rows when ``left``,
    columns otherwise).
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    v = np.array(v, dtype=float)
    lam = uniformization_rate(q)
    if t == 0 or lam == 0:
        return v
    n_steps = max(1, int(np.ceil(lam * t / _MAX_MEAN)))
    h = t / n_steps
    if scipy.sparse.issparse(q):
        p = scipy.sparse.identity(q.shape[0], format="csr") + q / lam
        p = p.tocsr()
        pt = p.T.tocsr()
    else:
        p = np.eye(q.shape[0]) + np.asarray(q) / lam
        pt = p.T
    w = _poisson_weights(lam * h, tol / n_steps)
    for _ in range(n_steps):
        term = v
        acc = w[0] * v
        for wk in w[1:]:
            if left:
                term = (pt @ term.T).T if term.ndim == 2 else pt @ term
            else:
                term = p @ term
            acc = acc + wk * term
        v = acc
    return v


def expm_dense(q, t):
    """Dense ``expm(q t)`` by scaling and squaring (scipy)."""
    return scipy.linalg.expm(np.asarray(q, dtype=float) * t)


def transition_matrix(q, t, tol=1e-12):
    """``expm(q t)``, dense, choosing the method by representation."""
    if scipy.sparse.issparse(q):
        eye = np.eye(q.shape[0])
        return expm_action(q, eye, t, tol=tol, left=False)
    return expm_dense(q, t)

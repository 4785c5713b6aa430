"""Dense real linear algebra: thin SVD, pivoted Householder QR and linear solves.

Everything here works on 2-D ``float64`` numpy arrays and is deterministic:
identical inputs give bit-identical outputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, IllConditionedError, InvalidArgumentError, InvalidInputError

MAX_SWEEPS = 60
JACOBI_TOL = 1e-12
# relative singular-value floor below which left vectors are completed, not divided out
ZERO_GUARD = 1e-12
# residual Frobenius norm (relative to the input) at which the SVD pre-reduction stops
RANK_CUTOFF = 1e-14
SINGULAR_TOL = 1e-12


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(singular_values) @ v.T``.

    ``u`` is (m, p), ``v`` is (n, p) with ``p = min(m, n)``, both with
    orthonormal columns, and singular values sorted nonincreasing.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return len(self.singular_values)

    def reconstruct(self):
        return (self.u * self.singular_values) @ self.v.T


@dataclass(frozen=True)
class PivotedQrResult:
    """``a[:, pivots] = q @ r`` with nonnegative, nonincreasing ``|diag(r)|``."""

    q: np.ndarray
    r: np.ndarray
    pivots: np.ndarray


def as_matrix(a, name="a"):
    """Validate and convert to a 2-D float64 array (copy-free when possible)."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# Householder QR with column pivoting


def _householder_pivoted(a, stop_norm=None):
    """Core pivoted Householder loop.

    Returns ``(reflectors, r, pivots, steps)`` where ``r`` is the fully
    transformed copy of ``a`` (upper trapezoid in its first ``steps`` rows)
    and ``reflectors`` the unit Householder vectors. When ``stop_norm`` is
    given the loop ends as soon as the residual Frobenius norm drops below it.
    """
    m, n = a.shape
    r = a.copy()
    piv = np.arange(n)
    reflectors = []
    steps = min(m, n)
    for k in range(steps):
        # residual norms recomputed explicitly, no downdating
        norms = np.einsum("ij,ij->j", r[k:, k:], r[k:, k:])
        if stop_norm is not None and np.sqrt(norms.sum()) <= stop_norm:
            break
        top = norms.max()
        if top == 0.0:
            break
        cand = np.flatnonzero(norms == top)
        j = k + cand[np.argmin(piv[k + cand])]
        if j != k:
            r[:, [k, j]] = r[:, [j, k]]
            piv[[k, j]] = piv[[j, k]]
        x = r[k:, k]
        normx = np.sqrt(top)
        v = x.copy()
        v[0] += normx if x[0] >= 0 else -normx
        v /= np.linalg.norm(v)
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        r[k + 1:, k] = 0.0
        reflectors.append(v)
    else:
        k = steps
        return reflectors, r, piv, k
    # remaining columns have zero residual; keep them in original index order
    rest = np.argsort(piv[k:], kind="stable") + k
    r[:, k:] = r[:, rest]
    piv[k:] = piv[rest]
    return reflectors, r, piv, k


def _form_q(reflectors, m, ncols):
    """Apply stored reflectors to the first ``ncols`` columns of the identity."""
    q = np.eye(m, ncols)
    for k in range(len(reflectors) - 1, -1, -1):
        v = reflectors[k]
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    return q


def qr_pivoted(a):
    """Householder QR with greedy column pivoting.

    At each elimination step the remaining column with the largest residual
    norm is moved to the front (ties go to the lowest original column index).

    Parameters
    ----------
    a : array_like, shape (m, n)

    Returns
    -------
    PivotedQrResult
        ``q`` is (m, p) with orthonormal columns, ``r`` is (p, n) upper
        triangular with a nonnegative diagonal, ``p = min(m, n)``.
    """
    a = as_matrix(a)
    m, n = a.shape
    p = min(m, n)
    reflectors, r, piv, _ = _householder_pivoted(a)
    q = _form_q(reflectors, m, p)
    r = np.triu(r[:p, :])
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return PivotedQrResult(q=q * signs, r=r * signs[:, None], pivots=piv)


# ---------------------------------------------------------------------------
# one-sided Jacobi SVD


def _round_robin(n):
    """Tournament schedule: n - 1 rounds of n / 2 disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    half = n // 2
    for _ in range(n - 1):
        rounds.append((np.array(players[:half]), np.array(players[half:][::-1])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(b):
    """Orthogonalize the columns of square ``b`` by plane rotations.

    Returns ``(w, v)`` with ``b @ v = w`` and mutually orthogonal columns of
    ``w`` (to ``JACOBI_TOL`` relative). Pairs are processed in a round-robin
    order so each round is a single vectorized update.
    """
    m, k = b.shape
    if k == 1:
        return b.copy(), np.eye(1)
    # row j holds [column j of w | column j of v], rotated together
    z = np.hstack([b.T, np.eye(k)])
    size = k + (k % 2)
    rounds = []
    for p, q in _round_robin(size):
        keep = (p < k) & (q < k)
        rounds.append((p[keep], q[keep]))
    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            zp, zq = z[p], z[q]
            wp, wq = zp[:, :m], zq[:, :m]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            active = np.abs(gamma) > JACOBI_TOL * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                p, q = p[active], q[active]
                zp, zq = zp[active], zq[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            z[p] = c * zp - s * zq
            z[q] = s * zp + c * zq
        if not rotated:
            return z[:, :m].T.copy(), z[:, m:].T.copy()
    raise ConvergenceError("one-sided Jacobi SVD did not converge", MAX_SWEEPS)


def _complete_columns(basis, missing):
    """Fill the columns listed in ``missing`` with unit vectors orthogonal to the rest."""
    n = basis.shape[0]
    out = basis.copy()
    have = [j for j in range(out.shape[1]) if j not in set(missing)]
    for j in missing:
        cur = out[:, have]
        # try coordinate directions least represented by the current basis first
        order = np.argsort(np.einsum("ij,ij->i", cur, cur), kind="stable")
        for i in order:
            e = np.zeros(n)
            e[i] = 1.0
            for _ in range(2):
                e -= cur @ (cur.T @ e)
            nrm = np.linalg.norm(e)
            if nrm > 0.5:
                out[:, j] = e / nrm
                have.append(j)
                break
    return out


def _svd_square(b):
    """SVD of a square full-rank-ish matrix by one-sided Jacobi."""
    w, v = _jacobi_columns(b)
    s = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-s, kind="stable")
    s, w, v = s[order], w[:, order], v[:, order]
    smax = s[0] if s.size else 0.0
    good = s > ZERO_GUARD * smax
    u = np.zeros_like(w)
    u[:, good] = w[:, good] / s[good]
    missing = list(np.flatnonzero(~good))
    if missing:
        u = _complete_columns(u, missing)
    return u, s, v


def _svd_tall(a):
    m, n = a.shape
    fro = np.linalg.norm(a)
    if fro == 0.0:
        return np.eye(m, n), np.zeros(n), np.eye(n)
    # rank-revealing reduction: a[:, piv] = Q [R_k; ~0]
    refl, r, piv, k = _householder_pivoted(a, stop_norm=RANK_CUTOFF * fro)
    k = max(k, 1)
    q_full = _form_q(refl, m, n)
    rk = np.triu(r[:k, :])
    # second reduction of R_k^T (n x k) down to a k x k triangle
    refl2, r2, piv2, k2 = _householder_pivoted(rk.T)
    r2 = np.triu(r2[:k, :])
    u3, s, v3 = _svd_square(r2)
    q2_full = _form_q(refl2, n, n)
    # rk.T[:, piv2] = q2 r2 = (q2 u3) s v3^T
    ub = q2_full[:, :k] @ u3
    vb = np.empty_like(v3)
    vb[piv2] = v3
    # a[:, piv] = q[:, :k] rk = (q[:, :k] vb) s ub^T
    u = np.hstack([q_full[:, :k] @ vb, q_full[:, k:n]])
    v_perm = np.hstack([ub, q2_full[:, k:n]])
    v = np.empty_like(v_perm)
    v[piv] = v_perm
    s = np.concatenate([s, np.zeros(n - k)])
    return u, s, v


def svd_thin(a):
    """Thin singular value decomposition.

    A rank-revealing pivoted QR first reduces the input to a small triangle
    whose SVD is then found with one-sided Jacobi rotations. Rank deficiency
    shows up as exact zero singular values with completed orthonormal vectors.

    Parameters
    ----------
    a : array_like, shape (m, n)

    Returns
    -------
    SvdResult
    """
    a = as_matrix(a)
    m, n = a.shape
    if m >= n:
        u, s, v = _svd_tall(a)
    else:
        v, s, u = _svd_tall(a.T)
    return SvdResult(u=u, singular_values=s, v=v)


def truncate(svd, r):
    """Keep the leading ``r`` singular triplets."""
    p = len(svd.singular_values)
    if not 1 <= r <= p:
        raise InvalidArgumentError(f"truncation rank {r} outside [1, {p}]")
    return SvdResult(u=svd.u[:, :r], singular_values=svd.singular_values[:r], v=svd.v[:, :r])


# ---------------------------------------------------------------------------
# linear solves


def _back_substitute(r, y):
    n = r.shape[0]
    x = np.zeros_like(y)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - r[i, i + 1:] @ x[i + 1:]) / r[i, i]
    return x


def solve_linear(a, b):
    """Minimum-residual solution of ``a x = b`` through pivoted QR.

    ``a`` is (n, r) with ``n >= r``; ``b`` may be a vector or an (n, k) block
    of right-hand sides. Square nonsingular systems are solved exactly.

    Raises
    ------
    IllConditionedError
        When the smallest diagonal entry of the triangular factor is below
        ``1e-12`` times the largest.
    """
    a = as_matrix(a)
    n, r = a.shape
    if n < r:
        raise InvalidArgumentError(f"underdetermined system: {n} equations for {r} unknowns")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != n:
        raise InvalidArgumentError(f"right-hand side has {b.shape[0]} rows, expected {n}")
    fact = qr_pivoted(a)
    diag = np.abs(np.diag(fact.r))
    if diag[-1] <= SINGULAR_TOL * diag[0]:
        cond = np.inf if diag[-1] == 0 else diag[0] / diag[-1]
        raise IllConditionedError("numerically singular system", cond)
    z = _back_substitute(fact.r[:, :r], fact.q.T @ b)
    x = np.empty_like(z)
    x[fact.pivots] = z
    return x

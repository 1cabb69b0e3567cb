"""Compiled Ryser kernels.

Ryser's formula over row subsets S, visited in Gray-code order so each step
toggles one row:

    Perm(M) = (-1)^n  sum_S (-1)^|S|  prod_j  sum_{k in S} M[k, j].

``ryser_dd`` carries column sums, products and the signed total in
double-double arithmetic (about 32 significant digits), which keeps the
inclusion-exclusion cancellation from eating the answer at n ~ 12.

``ryser_oracle_dd`` is the same all-columns pass in double-double, used
for single likelihood matrices.

``ryser_oracle_batch`` is the plain-double workhorse for the compound
oracles.  One pass yields Perm(M), every column-weighted permanent for a
common row-weight vector, and the column-0 row-indicator permanents.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.extending import intrinsic


@njit(inline="always", cache=True)
def _two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


@intrinsic
def _fma(typingctx, a, b, c):
    sig = types.float64(types.float64, types.float64, types.float64)

    def codegen(context, builder, signature, args):
        return builder.fma(*args)

    return sig, codegen


@njit(inline="always", cache=True)
def _two_prod(a, b):
    p = a * b
    return p, _fma(a, b, -p)


@njit(inline="always", cache=True)
def _dd_add(ah, al, bh, bl):
    s, e = _two_sum(ah, bh)
    e += al + bl
    return _two_sum(s, e)


@njit(inline="always", cache=True)
def _dd_mul(ah, al, bh, bl):
    p, e = _two_prod(ah, bh)
    e += ah * bl + al * bh
    return _two_sum(p, e)


@njit(cache=True)
def _trailing_zeros(k):
    j = 0
    while (k & 1) == 0:
        k >>= 1
        j += 1
    return j


@njit(cache=True, nogil=True)
def ryser_dd(m, w, col):
    """Permanent of ``m`` with column ``col`` reweighted row-wise by ``w``.

    ``col = -1`` disables the weighting.  Returns the double-double pair
    (hi, lo).
    """
    n = m.shape[0]
    rh = np.zeros(n)
    rl = np.zeros(n)
    in_s = np.zeros(n, dtype=np.bool_)
    # weighted entries of the reweighted column, exact as double-doubles
    wh = np.empty(n)
    wl = np.empty(n)
    for k in range(n):
        if col >= 0:
            wh[k], wl[k] = _two_prod(w[k], m[k, col])
        else:
            wh[k], wl[k] = 0.0, 0.0
    th = 0.0
    tl = 0.0
    size = 0
    total = 1 << n
    for g in range(1, total):
        k = _trailing_zeros(g)
        if in_s[k]:
            in_s[k] = False
            size -= 1
            for j in range(n):
                if j == col:
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], -wh[k], -wl[k])
                else:
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], -m[k, j], 0.0)
        else:
            in_s[k] = True
            size += 1
            for j in range(n):
                if j == col:
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], wh[k], wl[k])
                else:
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], m[k, j], 0.0)
        ph = 1.0
        pl = 0.0
        for j in range(n):
            ph, pl = _dd_mul(ph, pl, rh[j], rl[j])
        if size % 2 == 1:
            ph = -ph
            pl = -pl
        th, tl = _dd_add(th, tl, ph, pl)
    if n % 2 == 1:
        th = -th
        tl = -tl
    return th, tl


@njit(cache=True, nogil=True)
def _oracle_one(m, w, out_perm, out_num, out_post0, b):
    n = m.shape[0]
    r = np.zeros(n)
    rw = np.zeros(n)
    in_s = np.zeros(n, dtype=np.bool_)
    pre = np.empty(n + 1)
    suf = np.empty(n + 1)
    perm = 0.0
    num = np.zeros(n)
    post0 = np.zeros(n)
    total = 1 << n
    size = 0
    for g in range(1, total):
        k = _trailing_zeros(g)
        if in_s[k]:
            in_s[k] = False
            size -= 1
        else:
            in_s[k] = True
            size += 1
        if (g & 1023) == 0:
            # periodic exact recomputation bounds Gray-code drift for large n
            for j in range(n):
                s = 0.0
                sw = 0.0
                for kk in range(n):
                    if in_s[kk]:
                        s += m[kk, j]
                        sw += w[kk] * m[kk, j]
                r[j] = s
                rw[j] = sw
        else:
            sgn = 1.0 if in_s[k] else -1.0
            for j in range(n):
                r[j] += sgn * m[k, j]
                rw[j] += sgn * w[k] * m[k, j]
        pre[0] = 1.0
        for j in range(n):
            pre[j + 1] = pre[j] * r[j]
        suf[n] = 1.0
        for j in range(n - 1, -1, -1):
            suf[j] = suf[j + 1] * r[j]
        sign = -1.0 if size % 2 == 1 else 1.0
        perm += sign * pre[n]
        for j in range(n):
            num[j] += sign * rw[j] * pre[j] * suf[j + 1]
        e0 = sign * suf[1]
        for kk in range(n):
            if in_s[kk]:
                post0[kk] += e0 * m[kk, 0]
    flip = -1.0 if n % 2 == 1 else 1.0
    out_perm[b] = flip * perm
    for j in range(n):
        out_num[b, j] = flip * num[j]
        out_post0[b, j] = flip * post0[j]


@njit(cache=True, nogil=True)
def ryser_oracle_batch(ms, ws, out_perm, out_num, out_post0):
    """Fill per-matrix outputs for a batch of (n, n) matrices.

    out_perm[b]     = Perm(ms[b])
    out_num[b, i]   = Perm(ms[b] with column i scaled row-wise by ws[b])
    out_post0[b, k] = Perm(ms[b] with column 0 replaced by e_k * ms[b][:, 0])
    """
    for b in range(ms.shape[0]):
        _oracle_one(ms[b], ws[b], out_perm, out_num, out_post0, b)


@njit(cache=True)
def jacobi_eigh(a, rel_tol, max_sweeps):
    """Cyclic Jacobi on a symmetric matrix.

    Returns (eigenvalues, eigenvectors as columns, sweeps used, final
    off-diagonal Frobenius norm).  Rotations follow the stable
    t = sgn(theta) / (|theta| + sqrt(theta^2 + 1)) choice.
    """
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += a[i, j] * a[i, j]
    norm = np.sqrt(norm)
    target = rel_tol * norm
    off = 0.0
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        off = np.sqrt(off)
        if off <= target:
            return np.diag(a).copy(), v, sweeps - 1, off
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    off = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            off += 2.0 * a[i, j] * a[i, j]
    return np.diag(a).copy(), v, sweeps, np.sqrt(off)


@njit(cache=True, nogil=True)
def _log_sinkhorn(lm, sweeps):
    """Balance exp(lm) towards doubly stochastic in place; False if a line is all zero."""
    n = lm.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            mx = -np.inf
            for j in range(n):
                if lm[i, j] > mx:
                    mx = lm[i, j]
            if mx == -np.inf:
                return False
            s = 0.0
            for j in range(n):
                s += np.exp(lm[i, j] - mx)
            off = mx + np.log(s)
            for j in range(n):
                lm[i, j] -= off
        for j in range(n):
            mx = -np.inf
            for i in range(n):
                if lm[i, j] > mx:
                    mx = lm[i, j]
            if mx == -np.inf:
                return False
            s = 0.0
            for i in range(n):
                s += np.exp(lm[i, j] - mx)
            off = mx + np.log(s)
            for i in range(n):
                lm[i, j] -= off
    return True


@njit(cache=True, nogil=True)
def balanced_oracle_batch(ls, w, sweeps, out_perm, out_num, out_post0):
    """``ryser_oracle_batch`` on log-likelihood matrices, after log-domain balancing.

    Row and column rescaling cancels from every ratio the oracles need, and a
    nearly doubly stochastic matrix keeps Ryser's cancellation mild.  Rows
    that carry zero likelihood everywhere leave out_perm[b] = 0.
    """
    nb = ls.shape[0]
    n = ls.shape[1]
    for b in range(nb):
        lm = ls[b].copy()
        if not _log_sinkhorn(lm, sweeps):
            out_perm[b] = 0.0
            for j in range(n):
                out_num[b, j] = 0.0
                out_post0[b, j] = 0.0
            continue
        m = np.exp(lm)
        _oracle_one(m, w, out_perm, out_num, out_post0, b)


@njit(cache=True, nogil=True)
def ryser_oracle_dd(m, w, out_hi, out_lo):
    """Double-double version of one ``ryser_oracle_batch`` entry.

    out_hi/out_lo have shape (2n + 1,): [perm, num_0..num_{n-1}, post0_0..post0_{n-1}].
    """
    n = m.shape[0]
    rh = np.zeros(n)
    rl = np.zeros(n)
    sh = np.zeros(n)  # column sums of w_k * m[k, j]
    sl = np.zeros(n)
    ph_pre = np.empty(n + 1)
    pl_pre = np.empty(n + 1)
    ph_suf = np.empty(n + 1)
    pl_suf = np.empty(n + 1)
    in_s = np.zeros(n, dtype=np.bool_)
    acc_h = np.zeros(2 * n + 1)
    acc_l = np.zeros(2 * n + 1)
    size = 0
    for g in range(1, 1 << n):
        k = _trailing_zeros(g)
        sgn = -1.0 if in_s[k] else 1.0
        in_s[k] = not in_s[k]
        size += 1 if in_s[k] else -1
        for j in range(n):
            rh[j], rl[j] = _dd_add(rh[j], rl[j], sgn * m[k, j], 0.0)
            ph, pl = _two_prod(w[k], m[k, j])
            sh[j], sl[j] = _dd_add(sh[j], sl[j], sgn * ph, sgn * pl)
        ph_pre[0], pl_pre[0] = 1.0, 0.0
        for j in range(n):
            ph_pre[j + 1], pl_pre[j + 1] = _dd_mul(ph_pre[j], pl_pre[j], rh[j], rl[j])
        ph_suf[n], pl_suf[n] = 1.0, 0.0
        for j in range(n - 1, -1, -1):
            ph_suf[j], pl_suf[j] = _dd_mul(ph_suf[j + 1], pl_suf[j + 1], rh[j], rl[j])
        sign = -1.0 if size % 2 == 1 else 1.0
        acc_h[0], acc_l[0] = _dd_add(acc_h[0], acc_l[0], sign * ph_pre[n], sign * pl_pre[n])
        for j in range(n):
            eh, el = _dd_mul(ph_pre[j], pl_pre[j], ph_suf[j + 1], pl_suf[j + 1])
            th, tl = _dd_mul(eh, el, sh[j], sl[j])
            acc_h[1 + j], acc_l[1 + j] = _dd_add(acc_h[1 + j], acc_l[1 + j], sign * th, sign * tl)
        e0h, e0l = sign * ph_suf[1], sign * pl_suf[1]
        for kk in range(n):
            if in_s[kk]:
                th, tl = _dd_mul(e0h, e0l, m[kk, 0], 0.0)
                acc_h[1 + n + kk], acc_l[1 + n + kk] = _dd_add(acc_h[1 + n + kk], acc_l[1 + n + kk], th, tl)
    flip = -1.0 if n % 2 == 1 else 1.0
    for i in range(2 * n + 1):
        out_hi[i] = flip * acc_h[i]
        out_lo[i] = flip * acc_l[i]


@njit(cache=True, nogil=True)
def glynn_dd(m):
    """Permanent by Glynn's formula in double-double, returned as (hi, lo).

    Perm(M) = 2^{1-n} sum_d (prod_k d_k) prod_j sum_k d_k M[k, j] over sign
    vectors with d_0 = +1, so only 2^{n-1} terms are visited.  The product
    runs as four interleaved chains to shorten the dependency path.
    """
    n = m.shape[0]
    rh = np.zeros(n)
    rl = np.zeros(n)
    for j in range(n):
        for k in range(n):
            rh[j], rl[j] = _dd_add(rh[j], rl[j], m[k, j], 0.0)
    neg = np.zeros(n, dtype=np.bool_)
    th, tl = 0.0, 0.0
    parity = 1.0
    for g in range(0, 1 << (n - 1)):
        if g > 0:
            k = _trailing_zeros(g) + 1
            if neg[k]:
                neg[k] = False
                for j in range(n):
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], 2.0 * m[k, j], 0.0)
            else:
                neg[k] = True
                for j in range(n):
                    rh[j], rl[j] = _dd_add(rh[j], rl[j], -2.0 * m[k, j], 0.0)
            parity = -parity
        a0h, a0l = 1.0, 0.0
        a1h, a1l = 1.0, 0.0
        a2h, a2l = 1.0, 0.0
        a3h, a3l = 1.0, 0.0
        j = 0
        while j + 3 < n:
            a0h, a0l = _dd_mul(a0h, a0l, rh[j], rl[j])
            a1h, a1l = _dd_mul(a1h, a1l, rh[j + 1], rl[j + 1])
            a2h, a2l = _dd_mul(a2h, a2l, rh[j + 2], rl[j + 2])
            a3h, a3l = _dd_mul(a3h, a3l, rh[j + 3], rl[j + 3])
            j += 4
        while j < n:
            a0h, a0l = _dd_mul(a0h, a0l, rh[j], rl[j])
            j += 1
        a0h, a0l = _dd_mul(a0h, a0l, a1h, a1l)
        a2h, a2l = _dd_mul(a2h, a2l, a3h, a3l)
        a0h, a0l = _dd_mul(a0h, a0l, a2h, a2l)
        th, tl = _dd_add(th, tl, parity * a0h, parity * a0l)
    scale = 2.0 ** (1 - n)
    return th * scale, tl * scale

"""Compiled fixed-step loops for the tanh MLP delay field.

These replicate ``solver.solve_dde(..., fixed_h=h)`` and the costate loop of
``adjoint.backward_pass(..., fixed_h=h)`` step for step (same landing rule,
same stage formulas, same one-sided costate limits); only the floating-point
summation order inside the small matrix products differs. States are batched
as ``(B, d)``. Falls back to plain Python when numba is unavailable, which is
correct but slow.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


@njit(cache=True)
def _mlp(W1, b1, W2, b2, concat, lam, use_t, t, z, v, act, out):
    B, d = z.shape
    H = W1.shape[0]
    tcol = W1.shape[1] - 1
    for b in range(B):
        for j in range(H):
            s = 0.0
            if concat:
                for i in range(d):
                    s += W1[j, i] * z[b, i]
                for i in range(d):
                    s += W1[j, d + i] * v[b, i]
            else:
                for i in range(d):
                    s += W1[j, i] * (lam * z[b, i] + (1.0 - lam) * v[b, i])
            if use_t:
                s += W1[j, tcol] * t
            act[b, j] = math.tanh(s + b1[j])
        for i in range(d):
            s = 0.0
            for j in range(H):
                s += W2[i, j] * act[b, j]
            out[b, i] = s + b2[i]


@njit(cache=True)
def _vjp_u(W1, W2, act, a, g_u):
    """g_u = a^T df/du for the combined input (time column excluded)."""
    B, d = a.shape
    H = W1.shape[0]
    n = g_u.shape[1]
    for b in range(B):
        for k in range(n):
            g_u[b, k] = 0.0
        for j in range(H):
            g = 0.0
            for i in range(d):
                g += a[b, i] * W2[i, j]
            g *= 1.0 - act[b, j] * act[b, j]
            for k in range(n):
                g_u[b, k] += g * W1[j, k]


@njit(cache=True)
def _interp(tf, zf, n, t0, phi, s, out):
    """Linear interpolation on the first ``n`` knots; history at or before t0."""
    if s <= t0:
        out[:, :] = phi
        return
    if s > tf[n - 1]:
        raise ValueError("query beyond the forward trajectory")
    i = np.searchsorted(tf[:n], s)
    if tf[i] == s:
        out[:, :] = zf[i]
        return
    w = (s - tf[i - 1]) / (tf[i] - tf[i - 1])
    lo = zf[i - 1]
    hi = zf[i]
    for b in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[b, c] = lo[b, c] + (hi[b, c] - lo[b, c]) * w


@njit(cache=True)
def _interp_mono(tf, zf, n, t0, phi, s, j, out):
    """``_interp`` for non-decreasing query sequences; ``j`` is the previous
    bracket index and the updated one is returned (same result as a search)."""
    if s <= t0:
        out[:, :] = phi
        return j
    if s > tf[n - 1]:
        raise ValueError("query beyond the forward trajectory")
    while tf[j] < s:
        j += 1
    if tf[j] == s:
        out[:, :] = zf[j]
        return j
    w = (s - tf[j - 1]) / (tf[j] - tf[j - 1])
    for b in range(out.shape[0]):
        for c in range(out.shape[1]):
            lo = zf[j - 1, b, c]
            out[b, c] = lo + (zf[j, b, c] - lo) * w
    return j


@njit(cache=True)
def fixed_forward(W1, b1, W2, b2, concat, lam, use_t, tau, t0, z0, targets, h):
    B, d = z0.shape
    H = W1.shape[0]
    cap = int((targets[-1] - t0) / h) + targets.shape[0] + 2
    tf = np.empty(cap)
    zf = np.empty((cap, B, d))
    tf[0] = t0
    zf[0] = z0
    n = 1
    act = np.empty((B, H))
    k1 = np.empty((B, d))
    k2 = np.empty((B, d))
    v = np.empty((B, d))
    zp = np.empty((B, d))
    t = t0
    j1 = 0  # bracket hints: both delayed query sequences are non-decreasing
    j2 = 0
    for target in targets:
        while t < target:
            gap = target - t
            landing = gap <= h * (1.0 + 1e-9) and gap <= tau
            hs = gap if landing else h
            z = zf[n - 1]
            j1 = _interp_mono(tf, zf, n, t0, z0, t - tau, j1, v)
            _mlp(W1, b1, W2, b2, concat, lam, use_t, t, z, v, act, k1)
            for b in range(B):
                for c in range(d):
                    zp[b, c] = z[b, c] + hs * k1[b, c]
            j2 = _interp_mono(tf, zf, n, t0, z0, min(t + hs - tau, t), j2, v)
            _mlp(W1, b1, W2, b2, concat, lam, use_t, t + hs, zp, v, act, k2)
            znew = zf[n]
            for b in range(B):
                for c in range(d):
                    znew[b, c] = z[b, c] + hs * (0.5 * k1[b, c] + 0.5 * k2[b, c])
            t = target if landing else t + hs
            tf[n] = t
            n += 1
    return tf[:n].copy(), zf[:n].copy()


@njit(cache=True)
def _adj_query(ta, above, below, k, t_end, s, side_below, out):
    if s > t_end or (s == t_end and not side_below):
        out[:, :] = 0.0
        return
    # knots ta[0] > ta[1] > ... > ta[k-1]; find the first with ta[j] <= s
    lo, hi = 0, k
    while lo < hi:
        mid = (lo + hi) // 2
        if ta[mid] <= s:
            hi = mid
        else:
            lo = mid + 1
    j = lo
    if j == k:
        raise ValueError("costate not yet available")
    if ta[j] == s:
        if side_below:
            out[:, :] = below[j]
        else:
            out[:, :] = above[j]
        return
    w = (s - ta[j]) / (ta[j - 1] - ta[j])
    lo = above[j]
    hi = below[j - 1]
    for b in range(out.shape[0]):
        for c in range(out.shape[1]):
            out[b, c] = lo[b, c] + (hi[b, c] - lo[b, c]) * w


@njit(cache=True)
def _act_at(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf, nf, s, z, v, act, tmp):
    """Hidden activations of the field at forward time ``s`` (from checkpoints)."""
    _interp(tf, zf, nf, t0, phi, s, z)
    _interp(tf, zf, nf, t0, phi, s - tau, v)
    _mlp(W1, b1, W2, b2, concat, lam, use_t, s, z, v, act, tmp)


@njit(cache=True)
def _adj_rhs(W1, W2, concat, lam, tau, ta, above, below, k, t_end, s, a, side_below,
             act_loc, act_adv, out, adv, g_u):
    d = a.shape[1]
    _vjp_u(W1, W2, act_loc, a, g_u)
    scale = 1.0 if concat else lam
    for b in range(a.shape[0]):
        for i in range(d):
            out[b, i] = -(scale * g_u[b, i])
    sa = s + tau
    if sa < t_end or (sa == t_end and side_below):
        _adj_query(ta, above, below, k, t_end, sa, side_below, adv)
        _vjp_u(W1, W2, act_adv, adv, g_u)
        for b in range(a.shape[0]):
            for i in range(d):
                if concat:
                    out[b, i] = out[b, i] - g_u[b, d + i]
                else:
                    out[b, i] = out[b, i] - (1.0 - lam) * g_u[b, i]


@njit(cache=True)
def fixed_backward(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf,
                   targets, jump_t, jump_v, alpha_end, h):
    """Costate knots (descending times, above, below) for a fixed step ``h``.

    ``targets`` descend and end at t0; ``jump_t`` descend and are a subset of
    the targets (the jump at the final time is already folded into alpha_end).
    """
    nf = tf.shape[0]
    t_end = tf[nf - 1]
    B, d = alpha_end.shape
    H = W1.shape[0]
    n_u = W1.shape[1] - (1 if use_t else 0)
    cap = int((t_end - t0) / h) + targets.shape[0] + 2
    ta = np.empty(cap)
    above = np.empty((cap, B, d))
    below = np.empty((cap, B, d))
    ta[0] = t_end
    above[0] = 0.0
    below[0] = alpha_end
    k = 1
    z = np.empty((B, d))
    v = np.empty((B, d))
    tmp = np.empty((B, d))
    adv = np.empty((B, d))
    g_u = np.empty((B, n_u))
    k1 = np.empty((B, d))
    k2 = np.empty((B, d))
    ap = np.empty((B, d))
    # activations at the stage times; stage 2 of one step is usually stage 1 of the next
    act_l1 = np.empty((B, H))
    act_a1 = np.empty((B, H))
    act_l2 = np.empty((B, H))
    act_a2 = np.empty((B, H))
    t_l1 = np.nan
    t_a1 = np.nan
    jp = 0
    t = t_end
    for target in targets:
        while t > target:
            gap = t - target
            landing = gap <= h * (1.0 + 1e-9) and gap <= tau
            hs = gap if landing else h
            a = below[k - 1]
            if t != t_l1:
                _act_at(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf, nf, t, z, v, act_l1, tmp)
                t_l1 = t
            sa = t + tau
            if sa <= t_end and sa != t_a1:
                _act_at(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf, nf, sa, z, v, act_a1, tmp)
                t_a1 = sa
            _adj_rhs(W1, W2, concat, lam, tau, ta, above, below, k, t_end, t, a, True,
                     act_l1, act_a1, k1, adv, g_u)
            for b in range(B):
                for c in range(d):
                    ap[b, c] = a[b, c] - hs * k1[b, c]
            s2 = t - hs
            _act_at(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf, nf, s2, z, v, act_l2, tmp)
            sa2 = s2 + tau
            if sa2 < t_end:
                _act_at(W1, b1, W2, b2, concat, lam, use_t, tau, t0, phi, tf, zf, nf, sa2, z, v, act_a2, tmp)
            _adj_rhs(W1, W2, concat, lam, tau, ta, above, below, k, t_end, s2, ap, False,
                     act_l2, act_a2, k2, adv, g_u)
            # hand the stage-2 activations to the next step
            act_l1, act_l2 = act_l2, act_l1
            t_l1 = s2
            if sa2 < t_end:
                act_a1, act_a2 = act_a2, act_a1
                t_a1 = sa2
            t = target if landing else t - hs
            ta[k] = t
            a_new = above[k]
            for b in range(B):
                for c in range(d):
                    a_new[b, c] = a[b, c] - hs * (0.5 * k1[b, c] + 0.5 * k2[b, c])
            while jp < jump_t.shape[0] and jump_t[jp] > t:
                jp += 1
            a_below = below[k]
            if jp < jump_t.shape[0] and jump_t[jp] == t:
                for b in range(B):
                    for c in range(d):
                        a_below[b, c] = a_new[b, c] + jump_v[jp, b, c]
            else:
                a_below[:, :] = a_new
            k += 1
    return ta[:k].copy(), above[:k].copy(), below[:k].copy()

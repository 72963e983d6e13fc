"""NumPy reference implementation of the hot kernels.

This is the import-time fallback when the compiled extension is missing and
the ground truth the extension is tested against.  Every function here has a
signature-identical twin in ``_core.pyx``; keep the two in lockstep.

Array conventions: everything is C-contiguous float64.  Weight matrices map
inputs on the right (``h = tanh(x @ W.T + b)``), batches are stacked along
axis 0, and the time input is one scalar per instance.
"""

from __future__ import annotations

import math

import numpy as np


def jacobi_sweeps(g: np.ndarray, v: np.ndarray, max_sweeps: int, tol: float) -> int:
    """Run one-sided Jacobi orthogonalization sweeps in place.

    Rotates column pairs of ``g`` (and accumulates the same rotations into
    ``v``) until every pair satisfies ``|g_p . g_q| <= tol * |g_p| |g_q|``.
    Returns the number of sweeps performed, or -1 if the cap was hit while
    rotations were still being applied.
    """
    n = g.shape[1]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                gp = g[:, p]
                gq = g[:, q]
                alpha = float(gp @ gp)
                beta = float(gq @ gq)
                gamma = float(gp @ gq)
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * gp - s * gq
                new_q = s * gp + c * gq
                g[:, p] = new_p
                g[:, q] = new_q
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            return sweep
    return -1


def forward_pair(
    w_vh: np.ndarray,
    b_vh: np.ndarray,
    w_th: np.ndarray,
    b_th: np.ndarray,
    w_time: np.ndarray,
    b_time: np.ndarray,
    w_vo: np.ndarray,
    b_vo: np.ndarray,
    w_to: np.ndarray,
    b_to: np.ndarray,
    xv: np.ndarray,
    xt: np.ndarray,
    u: np.ndarray,
):
    """Project a batch through both modality branches at times ``u``.

    Returns ``(hv, ht, tau, zv, zt, nv, nt, ev, et)``: hidden activations,
    the shared time embedding, pre-normalization outputs, their norms, and
    the unit embeddings.  All intermediates are kept for the backward pass.
    """
    hv = np.tanh(xv @ w_vh.T + b_vh)
    ht = np.tanh(xt @ w_th.T + b_th)
    tau = np.tanh(u[:, None] * w_time[:, 0][None, :] + b_time)
    zv = np.tanh(np.concatenate([hv, tau], axis=1) @ w_vo.T + b_vo)
    zt = np.tanh(np.concatenate([ht, tau], axis=1) @ w_to.T + b_to)
    nv = np.sqrt((zv * zv).sum(axis=1))
    nt = np.sqrt((zt * zt).sum(axis=1))
    # degenerate norms are the caller's error to raise; keep the kernel quiet
    with np.errstate(divide="ignore", invalid="ignore"):
        ev = zv / nv[:, None]
        et = zt / nt[:, None]
    return hv, ht, tau, zv, zt, nv, nt, ev, et


def accumulate_triplets(
    ev: np.ndarray,
    et: np.ndarray,
    a_idx: np.ndarray,
    a_vis: np.ndarray,
    o_idx: np.ndarray,
    weight: np.ndarray,
    margin: np.ndarray,
    is_intra: np.ndarray,
):
    """Hinge losses and embedding-level gradients for a triplet batch.

    Each triplet is (anchor instance, other instance) with the anchor's own
    cross-modal counterpart in the positive slot: for anchor embedding A,
    counterpart P and other O (both on the opposite modality side),
    ``contribution = weight * max(0, margin - A.P + A.O)``.  ``weight`` is 1
    for category-separation triplets and the temporal-decay factor (possibly
    0 inside the alignment window) for same-category ones.  Subgradient 0 is
    used exactly at the hinge kink.

    Returns ``(inter_sum, intra_sum, active_count, d_ev, d_et)``.
    """
    d_ev = np.zeros_like(ev)
    d_et = np.zeros_like(et)
    inter_sum = 0.0
    intra_sum = 0.0
    active = 0
    for k in range(a_idx.shape[0]):
        w = float(weight[k])
        if w <= 0.0:
            continue
        a = int(a_idx[k])
        o = int(o_idx[k])
        if a_vis[k]:
            anc, cpt, oth = ev[a], et[a], et[o]
        else:
            anc, cpt, oth = et[a], ev[a], ev[o]
        viol = float(margin[k]) - float(anc @ cpt) + float(anc @ oth)
        if viol <= 0.0:
            continue
        if is_intra[k]:
            intra_sum += w * viol
        else:
            inter_sum += w * viol
        active += 1
        if a_vis[k]:
            d_ev[a] += w * (oth - cpt)
            d_et[a] -= w * anc
            d_et[o] += w * anc
        else:
            d_et[a] += w * (oth - cpt)
            d_ev[a] -= w * anc
            d_ev[o] += w * anc
    return inter_sum, intra_sum, active, d_ev, d_et


def backward_pair(
    w_vo: np.ndarray,
    w_to: np.ndarray,
    xv: np.ndarray,
    xt: np.ndarray,
    u: np.ndarray,
    hv: np.ndarray,
    ht: np.ndarray,
    tau: np.ndarray,
    zv: np.ndarray,
    zt: np.ndarray,
    nv: np.ndarray,
    nt: np.ndarray,
    ev: np.ndarray,
    et: np.ndarray,
    d_ev: np.ndarray,
    d_et: np.ndarray,
):
    """Backpropagate embedding gradients to parameter gradients.

    Chains through L2 normalization (whose Jacobian is (I - e e^T)/|z|),
    the output tanh, the concatenation split, and the hidden/time tanh
    layers.  The time layer receives contributions from both modalities.
    Returns gradients in parameter order: (w_vh, b_vh, w_th, b_th, w_time,
    b_time, w_vo, b_vo, w_to, b_to).
    """
    hidden = hv.shape[1]

    dzv = (d_ev - (d_ev * ev).sum(axis=1, keepdims=True) * ev) / nv[:, None]
    dav = dzv * (1.0 - zv * zv)
    g_wvo = np.concatenate([dav.T @ hv, dav.T @ tau], axis=1)
    g_bvo = dav.sum(axis=0)
    dcv = dav @ w_vo
    dahv = dcv[:, :hidden] * (1.0 - hv * hv)
    g_wvh = dahv.T @ xv
    g_bvh = dahv.sum(axis=0)

    dzt = (d_et - (d_et * et).sum(axis=1, keepdims=True) * et) / nt[:, None]
    dat = dzt * (1.0 - zt * zt)
    g_wto = np.concatenate([dat.T @ ht, dat.T @ tau], axis=1)
    g_bto = dat.sum(axis=0)
    dct = dat @ w_to
    daht = dct[:, :hidden] * (1.0 - ht * ht)
    g_wth = daht.T @ xt
    g_bth = daht.sum(axis=0)

    dtau = dcv[:, hidden:] + dct[:, hidden:]
    datime = dtau * (1.0 - tau * tau)
    g_wtime = (datime.T @ u)[:, None]
    g_btime = datime.sum(axis=0)

    return (g_wvh, g_bvh, g_wth, g_bth, g_wtime, g_btime, g_wvo, g_bvo, g_wto, g_bto)

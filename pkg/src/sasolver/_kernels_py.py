"""Pure-numpy implementation of the coefficient kernel (fallback backend)."""
import numpy as np


def weights_table(lam_start, lam_end, alpha_end, nodes, counts, seg_ptr,
                  seg_lo, seg_hi, seg_tau2, gl_x, gl_w):
    """Exponentially weighted Lagrange integrals for a batch of steps.

    For step ``m`` and basis ``j`` this returns

        alpha_end * int (1 + tau^2) exp(lam - lam_end - int_lam^lam_end tau^2) l_j(lam) dlam

    over ``[lam_start[m], lam_end[m]]``.  The integrand is split into the segments
    ``seg_ptr[m]:seg_ptr[m+1]`` (ascending, constant ``tau^2`` each) and every
    segment gets the Gauss-Legendre rule ``(gl_x, gl_w)``.  The Lagrange nodes of
    step ``m`` are ``nodes[m, :counts[m]]``.
    """
    M, K = nodes.shape
    out = np.zeros((M, K))
    for m in range(M):
        a, b = seg_ptr[m], seg_ptr[m + 1]
        lo, hi, t2 = seg_lo[a:b], seg_hi[a:b], seg_tau2[a:b]
        widths = hi - lo
        later = np.cumsum((t2 * widths)[::-1])[::-1]
        tail = np.append(later[1:], 0.0)
        half = 0.5 * widths
        lam = (0.5 * (lo + hi))[:, None] + half[:, None] * gl_x[None, :]
        expo = (lam - lam_end[m]) - tail[:, None] - t2[:, None] * (hi[:, None] - lam)
        w = (alpha_end[m] * (1.0 + t2) * half)[:, None] * gl_w[None, :] * np.exp(expo)
        lam, w = lam.ravel(), w.ravel()
        n = counts[m]
        nd = nodes[m, :n]
        for j in range(n):
            basis = np.ones_like(lam)
            for k in range(n):
                if k != j:
                    basis *= (lam - nd[k]) / (nd[j] - nd[k])
            out[m, j] = np.dot(w, basis)
    return out

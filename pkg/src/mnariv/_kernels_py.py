"""Pure numpy implementations of the hot per-row kernels.

These are the reference versions; ``_ckernels.pyx`` must agree with them to
rounding error.  Cell layout for the efficiency kernel is ``z*4 + y*2 + r``.
"""
import numpy as np

N_CELLS = 8


def expit(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def _min_observed(pi, r):
    obs = r == 1
    return float(pi[obs].min()) if obs.any() else 1.0


def propensity_weights(r, lin, yfill, zeta):
    """Inverse extended-propensity weights ``r / expit(lin + zeta*y)``.

    Returns the weights and the smallest propensity among rows with r == 1.
    """
    pi = expit(lin + zeta * yfill)
    # r == 1 rows with pi == 0 give inf, as in the compiled kernel; positivity is checked by the caller
    with np.errstate(divide="ignore", over="ignore"):
        w = np.divide(1.0, pi, out=np.zeros_like(pi), where=r == 1)
    return w, _min_observed(pi, r)


def dr_terms(r, yfill, lin_base, lin_outcome, zeta):
    """Weights, tilted missing-case means and augmented terms for u(x, y) = y."""
    w, min_pi = propensity_weights(r, lin_base, yfill, zeta)
    m = expit(lin_outcome - zeta)
    g = w * (yfill - m) + m
    return w, m, g, min_pi


def efficiency_cells(q1, lam0, lam1, th0, th1, zeta):
    """W statistic, cell probabilities and augmented terms on the 8-cell support.

    Parameters are per-row arrays: ``q1 = P(Z=1|x)``, baseline log-odds
    ``lam{z}`` and complete-case outcome log-odds ``th{z}`` at ``Z = z``.
    """
    n = q1.shape[0]
    W = np.empty((n, N_CELLS))
    P = np.empty((n, N_CELLS))
    G = np.empty((n, N_CELLS))
    qz = (1.0 - q1, q1)
    lam = (lam0, lam1)
    th = (th0, th1)
    parts = []
    ey = np.zeros(n)
    for z in (0, 1):
        p = expit(th[z])
        m = expit(th[z] - zeta)
        pi0 = expit(lam[z])
        pi1 = expit(lam[z] + zeta)
        rho = 1.0 / (p / pi1 + (1.0 - p) / pi0)
        mu = p * rho / pi1
        ey += qz[z] * mu
        parts.append((m, pi0, pi1, mu))
    for z in (0, 1):
        m, pi0, pi1, mu = parts[z]
        dz = z - q1
        a = (m - ey) * dz
        for y in (0, 1):
            pi = pi1 if y else pi0
            py = mu if y else 1.0 - mu
            d = (y - ey) * dz
            c1 = z * 4 + y * 2 + 1
            c0 = c1 - 1
            W[:, c1] = (d - (1.0 - pi) * a) / pi
            W[:, c0] = a
            P[:, c1] = qz[z] * py * pi
            P[:, c0] = qz[z] * py * (1.0 - pi)
            G[:, c1] = (y - m) / pi + m
            G[:, c0] = m
    return W, P, G

"""Pure numpy implementation of the angular moment kernel."""

import numpy as np


def power_log_moments(rho, big, theta, weights, p0, nterms, with_log=True, threads=1, chunk=2048):
    """Angular moments of D^(p0+n) and D^(p0+n) log D.

    Same contract as the compiled kernel; processes pairs in chunks to bound
    memory. ``threads`` is accepted for signature parity and ignored.
    """
    rho = np.ascontiguousarray(rho, dtype=float)
    big = np.ascontiguousarray(big, dtype=float)
    npairs = rho.shape[0]
    pow_out = np.zeros((nterms, npairs))
    log_out = np.zeros((nterms, npairs))
    s2 = np.sin(0.5 * np.asarray(theta)) ** 2
    w = np.asarray(weights, dtype=float)
    for start in range(0, npairs, chunk):
        sl = slice(start, min(start + chunk, npairs))
        a = rho[sl, None]
        b = big[sl, None]
        dist = np.sqrt((b - a) ** 2 + 4.0 * a * b * s2[None, :])
        good = dist > 0
        safe = np.where(good, dist, 1.0)
        term = np.where(good, safe ** p0, 0.0) * w[None, :]
        ld = np.log(safe)
        for n in range(nterms):
            pow_out[n, sl] = term.sum(axis=1)
            if with_log:
                log_out[n, sl] = (term * ld).sum(axis=1)
            term = term * safe
    return pow_out, log_out

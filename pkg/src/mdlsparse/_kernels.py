"""Hot inner loop for candidate scoring, JIT-compiled when numba is present.

Scoring a round of forward selection needs, for every (atom, patch) pair, the
error-coding bits of the residual that would remain after the candidate step.
Materializing that m x p x N tensor in numpy is memory-bound; the fused loop
below avoids the temporaries. Out-of-table residual indices are clamped here
and recomputed exactly for the accepted candidate by the caller.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dependency, belt and braces
    njit = None


def _candidate_residual_bits_numpy(E, D, Delta, valid, table, inv_step, out):
    kmax = table.shape[0] - 1
    cand = E[:, None, :] - D[:, :, None] * Delta[None, :, :]
    idx = np.minimum((np.abs(cand) * inv_step + 0.5).astype(np.int64), kmax)
    np.sum(table[idx], axis=0, out=out)
    out[~valid] = np.inf
    return out


if njit is not None:

    @njit(cache=True, nogil=True)
    def _candidate_residual_bits_numba(E, D, Delta, valid, table, inv_step, out):
        m, n = E.shape
        p = D.shape[1]
        kmax = table.shape[0] - 1
        for j in range(n):
            for i in range(p):
                if not valid[i, j]:
                    out[i, j] = np.inf
                    continue
                step = Delta[i, j]
                s = 0.0
                for k in range(m):
                    x = E[k, j] - step * D[k, i]
                    idx = int(abs(x) * inv_step + 0.5)
                    if idx > kmax:
                        idx = kmax
                    s += table[idx]
                out[i, j] = s
        return out

    candidate_residual_bits = _candidate_residual_bits_numba
else:  # pragma: no cover
    candidate_residual_bits = _candidate_residual_bits_numpy

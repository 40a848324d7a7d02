"""Fused loops for the training hot path.

Rows are visited sequentially and reductions happen in a fixed order, so
results are bitwise reproducible for identical inputs. ``inv_g`` and
``inv_eta`` are the reciprocals of the basis widths and normalizers.
"""

import math

from numba import njit


@njit(cache=True)
def block_forward(U, feats, b, inv_g, inv_eta, beta, out, S):
    """Add the block's contribution to ``out`` and store the sigmoids in ``S``.

    ``S`` has shape ``(n, C, K, r)``.
    """
    n = U.shape[0]
    C, K, r = b.shape
    for i in range(n):
        acc = 0.0
        for c in range(C):
            for k in range(K):
                prod = 1.0
                for j in range(r):
                    z = (U[i, feats[c, j]] - b[c, k, j]) * inv_g[c, k, j]
                    s = 1.0 / (1.0 + math.exp(-z))
                    S[i, c, k, j] = s
                    prod *= 1.0 - s * inv_eta[c, k, j]
                acc += beta[c, k] * prod
        out[i] += acc


@njit(cache=True)
def block_backward(U, feats, b, inv_g, inv_eta, beta, g, S, d_beta, T0, T1, T2):
    """Accumulate the row sums needed for the block gradient.

    With ``A = g_i beta prod_{l != j} phi_l * s_j / eta_j`` this adds
    ``T0 = sum A``, ``T1 = sum A (1 - s)``, ``T2 = sum A (1 - s) z`` and
    ``d_beta = sum g_i prod_j phi_j``.
    """
    n = U.shape[0]
    C, K, r = b.shape
    phi = [0.0] * 8
    for i in range(n):
        gi = g[i]
        for c in range(C):
            for k in range(K):
                prod = 1.0
                for j in range(r):
                    ph = 1.0 - S[i, c, k, j] * inv_eta[c, k, j]
                    phi[j] = ph
                    prod *= ph
                d_beta[c, k] += gi * prod
                G = gi * beta[c, k]
                for j in range(r):
                    other = 1.0
                    for l in range(r):
                        if l != j:
                            other *= phi[l]
                    s = S[i, c, k, j]
                    A = G * other * s * inv_eta[c, k, j]
                    om = A * (1.0 - s)
                    z = (U[i, feats[c, j]] - b[c, k, j]) * inv_g[c, k, j]
                    T0[c, k, j] += A
                    T1[c, k, j] += om
                    T2[c, k, j] += om * z

"""Shared test helpers: independent reference solvers and generators.

The reference solvers deliberately avoid the library's computational route
(no fixed-effect concentration, no Schur complement, no projection formulas):
they build the fully stacked least-squares systems and hand them to lstsq.
"""

from __future__ import annotations

import numpy as np
import pytest

import groupfx as gx


def dense_md_reference(theta, omega, W, spec, weights=None):
    """Stacked weighted LS with one explicit lambda block per selected group."""
    theta = np.asarray(theta, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    G, k = theta.shape
    q, m = spec.q, spec.m
    sel = np.flatnonzero(np.asarray(omega).astype(bool))
    w = np.ones(G) if weights is None else np.asarray(weights, dtype=float)
    ncols = spec.k_proj + m + q * sel.size
    rows, rhs = [], []
    for pos, g in enumerate(sel):
        block = np.zeros((k, ncols))
        block[:, : spec.k_proj] = spec.U
        for j in range(m):
            block[:, spec.k_proj + j] = spec.b0_basis[j] @ W[g]
        if q:
            start = spec.k_proj + m + q * pos
            block[:, start : start + q] = spec.gamma
        rows.append(np.sqrt(w[g]) * block)
        rhs.append(np.sqrt(w[g]) * theta[g])
    A = np.vstack(rows)
    y = np.concatenate(rhs)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    alpha = spec.U @ sol[: spec.k_proj]
    if m:
        B = sum(sol[spec.k_proj + j] * spec.b0_basis[j] for j in range(m))
    else:
        B = np.zeros((k, spec.p))
    return alpha, np.asarray(B)


def dense_population_reference(scn):
    """Population limit by stacked weighted LS over the scenario states.

    Factors each prob * Atilde as L L' and stacks L'-premultiplied rows, with
    a separate lambda block per state; returns the fitted effect matrix.
    """
    spec = scn.spec
    S = scn.n_states
    k, q, m, p = spec.k, spec.q, spec.m, spec.p
    theta = scn.alpha + scn.W @ scn.B0_true.T
    ncols = spec.k_proj + m + q * S
    rows, rhs = [], []
    for s in range(S):
        A = scn.prob[s] * scn.atilde[s]
        evals, evecs = np.linalg.eigh((A + A.T) / 2)
        L = evecs * np.sqrt(np.clip(evals, 0.0, None))
        block = np.zeros((k, ncols))
        block[:, : spec.k_proj] = spec.U
        for j in range(m):
            block[:, spec.k_proj + j] = spec.b0_basis[j] @ scn.W[s]
        if q:
            start = spec.k_proj + m + q * s
            block[:, start : start + q] = spec.gamma
        rows.append(L.T @ block)
        rhs.append(L.T @ theta[s])
    Amat = np.vstack(rows)
    y = np.concatenate(rhs)
    sol, *_ = np.linalg.lstsq(Amat, y, rcond=None)
    if m:
        B = sum(sol[spec.k_proj + j] * spec.b0_basis[j] for j in range(m))
    else:
        B = np.zeros((k, p))
    return np.asarray(B)


def random_spec(rng, k=None, q=None, p=None, gamma_compatible=True):
    """Random valid design; effect basis projected orthogonal to gamma."""
    while True:
        kk = int(rng.integers(1, 5)) if k is None else k
        qq = int(rng.integers(0, kk)) if q is None else q
        pp = int(rng.integers(1, 4)) if p is None else p
        gamma = rng.standard_normal((kk, qq)) if qq else np.zeros((kk, 0))
        proj = gx.gamma_perp_projector(gamma) if gamma_compatible else np.eye(kk)
        nb = int(rng.integers(1, (kk - qq) * pp + 1))
        basis = [proj @ rng.standard_normal((kk, pp)) for _ in range(nb)]
        try:
            return gx.OracleSpec(gamma, basis)
        except gx.exceptions.InvalidDesignError:
            continue


def random_psd(rng, k, ridge=0.3):
    M = rng.standard_normal((k, k))
    return M @ M.T + ridge * np.eye(k)


def did_group(group_id, pairs):
    """GroupSample from (delta_y, e) pairs."""
    units = [gx.build_did_unit(dy, e) for dy, e in pairs]
    return gx.GroupSample.from_units(group_id, units)


def iv_group(group_id, triples):
    """GroupSample from (delta_y, e, z) triples."""
    units = [gx.build_iv_unit(dy, e, z) for dy, e, z in triples]
    return gx.GroupSample.from_units(group_id, units)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

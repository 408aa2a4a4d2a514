"""Sparse finite-difference operators on a FastGrid.

``generator_matrix`` discretizes L₀u = cᵏ∂ₖu + ½αᵏˡ∂ₖₗu with central differences
(second-order one-sided rows at the edges). ``fokker_planck_matrix`` discretizes
the adjoint L₀*ρ = −∇·J, J = cρ − ½∇·(αρ), in conservative flux form with
exponentially fitted (Scharfetter–Gummel) fluxes and zero flux through the box
boundary, so every column sums to zero.
"""
from __future__ import annotations

from typing import Callable, List

import numpy as np
import scipy.sparse as sp

from cells.grid import FastGrid


def bernoulli(z: np.ndarray) -> np.ndarray:
    """B(z) = z / (eᶻ − 1), B(0) = 1."""
    z = np.asarray(z, float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    out[small] = 1.0 - 0.5 * z[small]
    zs = z[~small]
    out[~small] = zs / np.expm1(zs)
    return out


def _first_1d(nodes: int, h: float) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(1, nodes - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0]
    cols += [0, 1, 2]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h]
    last = nodes - 1
    rows += [last, last, last]
    cols += [last, last - 1, last - 2]
    vals += [1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nodes, nodes))


def _second_1d(nodes: int, h: float) -> sp.csr_matrix:
    h2 = h * h
    rows, cols, vals = [], [], []
    for i in range(1, nodes - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0 / h2, -2.0 / h2, 1.0 / h2]
    for edge, step in ((0, 1), (nodes - 1, -1)):
        rows += [edge] * 4
        cols += [edge, edge + step, edge + 2 * step, edge + 3 * step]
        vals += [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nodes, nodes))


def _along_axis(op: sp.csr_matrix, axis: int, grid: FastGrid) -> sp.csr_matrix:
    eye = sp.identity(grid.nodes, format="csr")
    mats = [eye] * grid.n
    mats[axis] = op
    out = mats[0]
    for mat in mats[1:]:
        out = sp.kron(out, mat, format="csr")
    return sp.csr_matrix(out)


def first_derivatives(grid: FastGrid) -> List[sp.csr_matrix]:
    return [_along_axis(_first_1d(grid.nodes, grid.spacing[k]), k, grid) for k in range(grid.n)]


def second_derivatives(grid: FastGrid) -> List[sp.csr_matrix]:
    return [_along_axis(_second_1d(grid.nodes, grid.spacing[k]), k, grid) for k in range(grid.n)]


def generator_matrix(c_nodes: np.ndarray, alpha_nodes: np.ndarray, grid: FastGrid) -> sp.csr_matrix:
    """Matrix of L₀ from drift c (N, n) and diffusion α (N, n, n) at the nodes."""
    d1 = first_derivatives(grid)
    d2 = second_derivatives(grid)
    n = grid.n
    L = sp.csr_matrix((grid.size, grid.size))
    for k in range(n):
        L = L + sp.diags(c_nodes[:, k]) @ d1[k]
        L = L + sp.diags(0.5 * alpha_nodes[:, k, k]) @ d2[k]
        for l in range(k + 1, n):
            mixed = 0.5 * (alpha_nodes[:, k, l] + alpha_nodes[:, l, k])
            L = L + sp.diags(mixed) @ (d1[k] @ d1[l])
    return sp.csr_matrix(L)


def fokker_planck_matrix(
    drift: Callable[[np.ndarray], np.ndarray],
    diffusion: Callable[[np.ndarray], np.ndarray],
    grid: FastGrid,
) -> sp.csr_matrix:
    """Matrix M with Mρ ≈ L₀*ρ; ``drift``/``diffusion`` map points (P, n) to (P, n)/(P, n, n)."""
    pts = grid.points
    size = grid.size
    alpha_nodes = np.asarray(diffusion(pts), float)
    d1 = first_derivatives(grid) if grid.n > 1 else None
    idx = np.arange(size).reshape(grid.shape)
    M = sp.csr_matrix((size, size))
    for k in range(grid.n):
        h = grid.spacing[k]
        lower = np.take(idx, np.arange(grid.nodes - 1), axis=k).ravel()
        upper = np.take(idx, np.arange(1, grid.nodes), axis=k).ravel()
        n_faces = lower.size
        faces = 0.5 * (pts[lower] + pts[upper])
        c_face = np.asarray(drift(faces), float)[:, k]
        a_face = np.asarray(diffusion(faces), float)[:, k, k]
        v = 2.0 * c_face * h / a_face
        face_ids = np.arange(n_faces)
        s_lower = sp.csr_matrix((np.ones(n_faces), (face_ids, lower)), shape=(n_faces, size))
        s_upper = sp.csr_matrix((np.ones(n_faces), (face_ids, upper)), shape=(n_faces, size))
        coef_lower = bernoulli(-v) * alpha_nodes[lower, k, k] / (2.0 * h)
        coef_upper = -bernoulli(v) * alpha_nodes[upper, k, k] / (2.0 * h)
        flux = sp.diags(coef_lower) @ s_lower + sp.diags(coef_upper) @ s_upper
        for l in range(grid.n):
            if l == k:
                continue
            cross = 0.5 * (s_lower + s_upper) @ d1[l] @ sp.diags(alpha_nodes[:, k, l])
            flux = flux - 0.5 * cross
        M = M + (s_upper - s_lower).T @ flux / h
    return sp.csr_matrix(M)

"""Second-order averaging integrals of a slow system against a cell density.

For a system with slow components i = 1..M (the first m of which are the
physical slow variables) the reduced drift and diffusion are

    w^i   = ∫ρ (bⁱ + ∂ₓⱼφⁱ fʲ + ∂ᵧₖφⁱ gᵏ + ∂ₓⱼᵧₖφⁱ hʲᵏ)
    A^ij  = ∫ρ (aⁱʲ + φⁱfʲ + φʲfⁱ + ∂ᵧₖφⁱ hʲᵏ + ∂ᵧₖφʲ hⁱᵏ)

with j ≤ m in the ∂ₓ terms. The averaged model and both extended systems go
through this one routine.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np


def average_generator(
    weights: np.ndarray,
    rho: np.ndarray,
    b: np.ndarray,
    f: np.ndarray,
    g: np.ndarray,
    a: np.ndarray,
    h: np.ndarray,
    phi: np.ndarray,
    dphi_dx: np.ndarray,
    dphi_dy: np.ndarray,
    dphi_dxy: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Node arrays: b, f, phi (N, M); g (N, n); a (N, M, M); h (N, M, n);
    dphi_dx (N, M, m); dphi_dy (N, M, n); dphi_dxy (N, M, m, n)."""
    m = dphi_dx.shape[2]
    w_integrand = (
        b
        + np.einsum("nij,nj->ni", dphi_dx, f[:, :m])
        + np.einsum("nik,nk->ni", dphi_dy, g)
        + np.einsum("nijk,njk->ni", dphi_dxy, h[:, :m, :])
    )
    corr = np.einsum("ni,nj->nij", phi, f) + np.einsum("nik,njk->nij", dphi_dy, h)
    A_integrand = a + corr + np.swapaxes(corr, 1, 2)
    mass = weights * rho
    w = np.tensordot(mass, w_integrand, axes=(0, 0))
    A = np.tensordot(mass, A_integrand, axes=(0, 0))
    return w, 0.5 * (A + A.T)

"""Interpolation of xt-grid tables: cubic in x (m = 1), multilinear otherwise, linear in t."""
from __future__ import annotations

from typing import List

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from averaging.xt import XTGrid
from model.coefficients import as_batch


class XTInterpolator:
    """``values`` has shape ``xt.shape + component_shape``."""

    def __init__(self, xt: XTGrid, values: np.ndarray):
        values = np.asarray(values, float)
        self.xt = xt
        self.component_shape = values.shape[len(xt.shape) :]
        flat = values.reshape(xt.shape + (-1,))
        self._per_t: List = []
        for k in range(xt.t_axis.size):
            table = flat[..., k, :]
            if xt.m == 1:
                self._per_t.append(CubicSpline(xt.x_axes[0], table, axis=0, extrapolate=True))
            else:
                self._per_t.append(RegularGridInterpolator(tuple(xt.x_axes), table, bounds_error=False, fill_value=None))

    def _eval(self, k: int, x: np.ndarray) -> np.ndarray:
        if self.xt.m == 1:
            return self._per_t[k](x[:, 0])
        return self._per_t[k](x)

    def __call__(self, x, t: float) -> np.ndarray:
        x = as_batch(x, self.xt.m)
        lo, hi, theta = self.xt.locate_t(t)
        out = self._eval(lo, x)
        if theta > 0.0:
            out = (1.0 - theta) * out + theta * self._eval(hi, x)
        return out.reshape((x.shape[0],) + self.component_shape)

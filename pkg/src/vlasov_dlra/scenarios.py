"""The three benchmark scenarios: Landau damping in 1D/2D and free transport."""

from __future__ import annotations

import math

import numpy as np

from .dg import DgSpace, GAUSS_WEIGHT, UNIT_WEIGHT
from .lowrank import init_state
from .mesh import build_uniform

LANDAU_ALPHA = 1e-2
LANDAU_K = 0.5
LANDAU_GAMMA = 0.153   # linear decay rate of the electric field for k = 1/2


def landau_1d(nx=32, nv=64, p=2, m=2, q=None, rank=None):
    """f0 = (2 pi)^(-1/2) exp(-v^2/2) (1 + alpha cos(k x)) on [0,4pi] x [-6,6]."""
    sx = DgSpace(build_uniform(1, [(0.0, 4 * np.pi)], [nx]), p, q)
    sv = DgSpace(build_uniform(1, [(-6.0, 6.0)], [nv]), p, q)
    h = lambda v: np.exp(-0.5 * v[..., 0] ** 2) / math.sqrt(2 * math.pi)
    terms = [
        (lambda x: np.ones(x.shape[:-1]), h),
        (lambda x: LANDAU_ALPHA * np.cos(LANDAU_K * x[..., 0]), h),
    ]
    return init_state(terms, sx, sv, m=m, weight=GAUSS_WEIGHT, rank=rank)


def landau_2d(nx=16, nv=32, p=2, m=3, q=None, rank=None):
    """f0 = (2 pi)^(-1) exp(-|v|^2/2) (1 + a cos(k x1) + a cos(k x2))."""
    sx = DgSpace(build_uniform(2, [(0.0, 4 * np.pi)] * 2, [nx, nx]), p, q)
    sv = DgSpace(build_uniform(2, [(-6.0, 6.0)] * 2, [nv, nv]), p, q)
    h = lambda v: np.exp(-0.5 * np.sum(v ** 2, axis=-1)) / (2 * math.pi)
    terms = [
        (lambda x: np.ones(x.shape[:-1]), h),
        (lambda x: LANDAU_ALPHA * np.cos(LANDAU_K * x[..., 0]), h),
        (lambda x: LANDAU_ALPHA * np.cos(LANDAU_K * x[..., 1]), h),
    ]
    return init_state(terms, sx, sv, m=m, weight=GAUSS_WEIGHT, rank=rank)


FT_SIGMA_X = 0.5
FT_SIGMA_V = 0.25
FT_MU_X = (np.pi, 2 * np.pi)
FT_MU_V = (np.pi, 0.0)


def free_transport_2d(nx=16, nv=32, p=2, q=None, rank=None):
    """Free motion of a Maxwellian bump; E = 0 at all times, no weight, m = 0."""
    sx = DgSpace(build_uniform(2, [(0.0, 4 * np.pi)] * 2, [nx, nx]), p, q)
    sv = DgSpace(build_uniform(2, [(-6.0, 6.0)] * 2, [nv, nv]), p, q)
    g = lambda x: np.exp(-((x[..., 0] - FT_MU_X[0]) ** 2
                           + (x[..., 1] - FT_MU_X[1]) ** 2)
                         / (2 * FT_SIGMA_X ** 2)) / (2 * math.pi)
    h = lambda v: np.exp(-((v[..., 0] - FT_MU_V[0]) ** 2
                           + (v[..., 1] - FT_MU_V[1]) ** 2)
                         / (2 * FT_SIGMA_V ** 2)) / (2 * math.pi)
    return init_state([(g, h)], sx, sv, m=0, weight=UNIT_WEIGHT, rank=rank)


def free_transport_exact(state, t):
    """Quadrature values of f(t,x,v) = f0(x - v t, v) on the tensor grid.

    Returns a callable (x_points, v_points) -> values for chunked evaluation.
    """
    def f0(xp, vp):
        gx = np.exp(-((xp[..., 0] - FT_MU_X[0]) ** 2
                      + (xp[..., 1] - FT_MU_X[1]) ** 2)
                    / (2 * FT_SIGMA_X ** 2)) / (2 * math.pi)
        hv = np.exp(-((vp[..., 0] - FT_MU_V[0]) ** 2
                      + (vp[..., 1] - FT_MU_V[1]) ** 2)
                    / (2 * FT_SIGMA_V ** 2)) / (2 * math.pi)
        return gx * hv

    ext = 4 * np.pi

    def values(x_points, v_points):
        # x (Nx, 2), v (Nv, 2) -> (Nx, Nv), with periodic wrap of the shift
        shift = (x_points[:, None, :] - t * v_points[None, :, :]) % ext
        return f0(shift, np.broadcast_to(v_points[None, :, :], shift.shape))

    return values

"""Vertical-stretch maps from the fixed channel onto the moving domain.

The reference domain is the unit-height channel O = (0, L) x (0, 1).  The
moving domain at wall displacement eta is obtained by the map

    A(z, r) = (z, (R + eta(z)) * r),

whose Jacobian determinant is R + eta(z).  All differential operators of
the flow problem are pulled back onto O; the pulled-back gradient acts as

    d_z^eta = d_z - r * eta'(z)/(R + eta(z)) * d_r,
    d_r^eta = 1/(R + eta(z)) * d_r.

Wall displacements are C^1 piecewise cubics (Hermite interpolants) on a
uniform partition of (0, L) with clamped ends, so eta(0) = eta(L) =
eta'(0) = eta'(L) = 0 holds exactly by construction.

Everything in this module is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateJacobian


@dataclass(frozen=True)
class ReferenceDomain:
    """Fixed computational channel O = (0, L) x (0, 1).

    The physical wall sits at height R in the rest configuration; R enters
    the equations only through the Jacobian weight R + eta.
    """

    L: float
    R: float
    nz: int
    nr: int

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError(f"domain.L: must be > 0, got {self.L}")
        if not self.R > 0:
            raise ConfigError(f"domain.R: must be > 0, got {self.R}")
        if self.nz < 1:
            raise ConfigError(f"domain.nz: must be >= 1, got {self.nz}")
        if self.nr < 1:
            raise ConfigError(f"domain.nr: must be >= 1, got {self.nr}")


class WallProfile:
    """Clamped C^1 wall displacement on a uniform partition of (0, L).

    Stored as nodal values and nodal slopes of a cubic Hermite interpolant.
    The first and last node carry zero value and zero slope; constructors
    overwrite whatever was passed there, which is what makes the clamped
    boundary conditions exact rather than approximate.
    """

    __slots__ = ("L", "n_el", "h", "nodes", "vals", "slopes")

    def __init__(self, L: float, vals, slopes):
        vals = np.asarray(vals, dtype=float).copy()
        slopes = np.asarray(slopes, dtype=float).copy()
        if vals.shape != slopes.shape or vals.ndim != 1 or vals.size < 2:
            raise ConfigError("wall profile: vals/slopes must be equal-length 1D arrays, >= 2 nodes")
        vals[0] = vals[-1] = 0.0
        slopes[0] = slopes[-1] = 0.0
        self.L = float(L)
        self.n_el = vals.size - 1
        self.h = self.L / self.n_el
        self.nodes = np.linspace(0.0, self.L, vals.size)
        self.vals = vals
        self.slopes = slopes

    @classmethod
    def zero(cls, L: float, n_el: int) -> "WallProfile":
        return cls(L, np.zeros(n_el + 1), np.zeros(n_el + 1))

    @classmethod
    def from_callable(cls, L: float, n_el: int, f, fp) -> "WallProfile":
        """Interpolate a smooth displacement (values and slopes at nodes)."""
        z = np.linspace(0.0, L, n_el + 1)
        return cls(L, f(z), fp(z))

    def _locate(self, z):
        z = np.asarray(z, dtype=float)
        idx = np.clip(np.floor(z / self.h).astype(int), 0, self.n_el - 1)
        xi = z / self.h - idx
        return idx, xi

    def value(self, z):
        """eta(z); vectorized over z in [0, L]."""
        idx, xi = self._locate(z)
        h = self.h
        v0, v1 = self.vals[idx], self.vals[idx + 1]
        s0, s1 = self.slopes[idx], self.slopes[idx + 1]
        h00 = 1 + xi * xi * (2 * xi - 3)
        h10 = xi * (1 + xi * (xi - 2))
        h01 = xi * xi * (3 - 2 * xi)
        h11 = xi * xi * (xi - 1)
        return h00 * v0 + h * h10 * s0 + h01 * v1 + h * h11 * s1

    def slope(self, z):
        """eta'(z) from the interpolant itself, never a difference quotient."""
        idx, xi = self._locate(z)
        h = self.h
        v0, v1 = self.vals[idx], self.vals[idx + 1]
        s0, s1 = self.slopes[idx], self.slopes[idx + 1]
        d00 = 6 * xi * (xi - 1) / h
        d10 = 1 + xi * (3 * xi - 4)
        d01 = 6 * xi * (1 - xi) / h
        d11 = xi * (3 * xi - 2)
        return d00 * v0 + d10 * s0 + d01 * v1 + d11 * s1

    def curvature(self, z):
        """eta''(z) (piecewise linear, discontinuous at nodes)."""
        idx, xi = self._locate(z)
        h = self.h
        v0, v1 = self.vals[idx], self.vals[idx + 1]
        s0, s1 = self.slopes[idx], self.slopes[idx + 1]
        c00 = (12 * xi - 6) / (h * h)
        c10 = (6 * xi - 4) / h
        c01 = (6 - 12 * xi) / (h * h)
        c11 = (6 * xi - 2) / h
        return c00 * v0 + c10 * s0 + c01 * v1 + c11 * s1

    def min_value(self) -> float:
        """Exact minimum of eta over [0, L] via per-element cubic critical points."""
        h = self.h
        v0, v1 = self.vals[:-1], self.vals[1:]
        s0, s1 = self.slopes[:-1], self.slopes[1:]
        # eta'(xi)*h is quadratic in xi: a*xi^2 + b*xi + c
        a = 6 * (v0 - v1) + 3 * h * (s0 + s1)
        b = 6 * (v1 - v0) - 2 * h * (2 * s0 + s1)
        c = h * s0
        best = np.minimum(v0, v1)
        disc = b * b - 4 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sign in (1.0, -1.0):
                xi = np.where(
                    np.abs(a) > 0,
                    (-b + sign * sq) / (2 * a),
                    np.where(np.abs(b) > 0, -c / b, np.nan),
                )
                ok = np.isfinite(xi) & (disc >= 0) & (xi > 0) & (xi < 1)
                xi_ok = np.where(ok, xi, 0.0)
                h00 = 1 + xi_ok**2 * (2 * xi_ok - 3)
                h10 = xi_ok * (1 + xi_ok * (xi_ok - 2))
                h01 = xi_ok**2 * (3 - 2 * xi_ok)
                h11 = xi_ok**2 * (xi_ok - 1)
                val = h00 * v0 + h * h10 * s0 + h01 * v1 + h * h11 * s1
                best = np.minimum(best, np.where(ok, val, np.inf))
        return float(best.min())


def ale_map(profile: WallProfile, R: float, point):
    """Map a reference point (z, r) in [0,L]x[0,1] to the moving domain."""
    z, r = point
    return (z, (R + float(profile.value(z))) * r)


def ale_jacobian(profile: WallProfile, R: float, z) -> float:
    """Jacobian R + eta(z) of the vertical-stretch map.

    Positivity is not checked here; admissibility is the cutoff's job.
    """
    return R + profile.value(z)


def _pullback_coeffs(profile: WallProfile, R: float, point):
    z, r = point
    w = R + float(profile.value(z))
    if w <= 0.0:
        raise DegenerateJacobian(f"R + eta({z}) = {w} <= 0")
    return w, float(profile.slope(z)), r


def transformed_gradient(du_dz, du_dr, profile: WallProfile, R: float, point):
    """Pulled-back gradient of a 2-vector field at one reference point.

    ``du_dz`` and ``du_dr`` hold the reference-domain partials of the two
    components.  Row i of the result is (d_z^eta u_i, d_r^eta u_i).
    """
    w, s, r = _pullback_coeffs(profile, R, point)
    du_dz = np.asarray(du_dz, dtype=float)
    du_dr = np.asarray(du_dr, dtype=float)
    gz = du_dz - r * (s / w) * du_dr
    gr = du_dr / w
    return np.column_stack([gz, gr])


def transformed_divergence(du_dz, du_dr, profile: WallProfile, R: float, point) -> float:
    """Trace of the pulled-back gradient (same expression, summed on the diagonal)."""
    w, s, r = _pullback_coeffs(profile, R, point)
    return float((du_dz[0] - r * (s / w) * du_dr[0]) + du_dr[1] / w)


def transformed_sym_gradient(du_dz, du_dr, profile: WallProfile, R: float, point):
    """Symmetric part of the pulled-back gradient."""
    g = transformed_gradient(du_dz, du_dr, profile, R, point)
    return 0.5 * (g + g.T)

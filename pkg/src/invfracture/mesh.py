"""Uniform 1D mesh with cubic Hermite elements.

Each node carries two dofs, the value ``u_k`` and the physical derivative
``u'_k``; the global dof vector is ``[u_0, u'_0, u_1, u'_1, ...]``.  The
element-length factor lives in the shape functions, so derivative dofs
are stored unscaled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre points and weights mapped to the reference element [0, 1]."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss(cls, npts: int = 4) -> "QuadratureRule":
        x, w = np.polynomial.legendre.leggauss(npts)
        return cls(0.5 * (x + 1.0), 0.5 * w)

    @property
    def degree(self) -> int:
        return 2 * len(self.points) - 1


GAUSS4 = QuadratureRule.gauss(4)


def shape_eval(xi, elem_length: float):
    """Hermite basis on an element of length ``elem_length``.

    Returns ``(N, dN, d2N)`` each of shape ``xi.shape + (4,)``; derivatives
    are with respect to the physical coordinate.  Basis order matches the
    element dofs ``(u_a, u'_a, u_b, u'_b)``.
    """
    xi = np.asarray(xi, dtype=float)
    h = elem_length
    x2 = xi * xi
    x3 = x2 * xi
    N = np.stack([1 - 3 * x2 + 2 * x3, h * (xi - 2 * x2 + x3), 3 * x2 - 2 * x3, h * (x3 - x2)], axis=-1)
    dN = np.stack([(-6 * xi + 6 * x2) / h, 1 - 4 * xi + 3 * x2, (6 * xi - 6 * x2) / h, 3 * x2 - 2 * xi], axis=-1)
    d2N = np.stack([(-6 + 12 * xi) / h**2, (-4 + 6 * xi) / h, (6 - 12 * xi) / h**2, (6 * xi - 2) / h], axis=-1)
    return N, dN, d2N


def shape_third(elem_length: float) -> np.ndarray:
    """Constant third derivatives of the four Hermite shape functions."""
    h = elem_length
    return np.array([12.0 / h**3, 6.0 / h**2, -12.0 / h**3, 6.0 / h**2])


@dataclass(frozen=True)
class Mesh:
    n_elems: int
    s_min: float = 0.0
    s_max: float = 1.0

    def __post_init__(self):
        if self.n_elems < 2:
            raise ValueError(f"need at least 2 elements, got {self.n_elems}")
        if not self.s_max > self.s_min:
            raise ValueError("empty domain")

    @property
    def h(self) -> float:
        return (self.s_max - self.s_min) / self.n_elems

    @property
    def n_nodes(self) -> int:
        return self.n_elems + 1

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def nodes(self) -> np.ndarray:
        return self.s_min + self.h * np.arange(self.n_nodes)

    @property
    def length(self) -> float:
        return self.s_max - self.s_min

    def element_dofs(self) -> np.ndarray:
        """``(n_elems, 4)`` global dof indices per element."""
        e = np.arange(self.n_elems)
        return np.stack([2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3], axis=1)

    def locate(self, s):
        """Element index and reference coordinate for points ``s``."""
        s = np.asarray(s, dtype=float)
        tol = 1e-12 * max(1.0, abs(self.s_max))
        if np.any(s < self.s_min - tol) or np.any(s > self.s_max + tol):
            raise ValueError(f"point outside [{self.s_min}, {self.s_max}]")
        t = (s - self.s_min) / self.h
        e = np.clip(np.floor(t).astype(int), 0, self.n_elems - 1)
        return e, np.clip(t - e, 0.0, 1.0)

    def quad_points(self, rule: QuadratureRule = GAUSS4) -> np.ndarray:
        """Physical quadrature points, shape ``(n_elems, n_qp)``."""
        left = self.s_min + self.h * np.arange(self.n_elems)
        return left[:, None] + self.h * rule.points[None, :]


@dataclass
class HermiteField:
    """Piecewise-cubic C1 field on ``mesh`` with interleaved nodal dofs."""

    mesh: Mesh
    dofs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.dofs is None:
            self.dofs = np.zeros(self.mesh.n_dofs)
        self.dofs = np.asarray(self.dofs, dtype=float)
        if self.dofs.shape != (self.mesh.n_dofs,):
            raise ValueError(f"dof vector has shape {self.dofs.shape}, expected ({self.mesh.n_dofs},)")

    @classmethod
    def interpolate(cls, mesh: Mesh, f, df) -> "HermiteField":
        s = mesh.nodes
        d = np.empty(mesh.n_dofs)
        d[0::2] = f(s)
        d[1::2] = df(s)
        return cls(mesh, d)

    @property
    def values(self) -> np.ndarray:
        return self.dofs[0::2]

    @property
    def slopes(self) -> np.ndarray:
        return self.dofs[1::2]

    def copy(self) -> "HermiteField":
        return HermiteField(self.mesh, self.dofs.copy())

    def element_coeffs(self) -> np.ndarray:
        return self.dofs[self.mesh.element_dofs()]

    def third_derivative(self) -> np.ndarray:
        """Element-wise constant ``u'''``, shape ``(n_elems,)``."""
        return self.element_coeffs() @ shape_third(self.mesh.h)

    def nodal_curvature(self) -> np.ndarray:
        """``u''`` at nodes, averaged over the two adjacent elements."""
        c = self.element_coeffs()
        _, _, d2a = shape_eval(0.0, self.mesh.h)
        _, _, d2b = shape_eval(1.0, self.mesh.h)
        left = c @ d2a
        right = c @ d2b
        out = np.empty(self.mesh.n_nodes)
        out[0] = left[0]
        out[-1] = right[-1]
        out[1:-1] = 0.5 * (right[:-1] + left[1:])
        return out


def eval_field(field: HermiteField, s):
    """Interpolated ``(u, u', u'')`` at computational coordinates ``s``."""
    e, xi = field.mesh.locate(s)
    N, dN, d2N = shape_eval(xi, field.mesh.h)
    c = field.element_coeffs()[e]
    return (np.sum(N * c, axis=-1), np.sum(dN * c, axis=-1), np.sum(d2N * c, axis=-1))

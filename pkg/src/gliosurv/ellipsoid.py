"""Minimum-volume enclosing ellipsoid and the relative invasiveness coefficient (RIC).

The RIC is the second-longest semi-axis of the tumour-core ellipsoid divided by
the second-longest semi-axis of the whole-tumour ellipsoid, each ellipsoid being
the minimum-volume ellipsoid around the ROI's boundary voxel centres.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ._kernels import khachiyan
from .exceptions import ConvergenceError, DegenerateInputError, DegenerateSubjectError
from .volume import boundary_mask, roi_mask, voxel_centers


@dataclass(frozen=True)
class Ellipsoid:
    """``{x : (x - center)^T shape_matrix (x - center) <= 1}``.

    ``semi_axes`` are sorted descending; column ``k`` of ``orientation`` is the
    direction of semi-axis ``k``.
    """

    center: np.ndarray
    semi_axes: np.ndarray
    orientation: np.ndarray
    shape_matrix: np.ndarray
    n_iter: int = 0
    residual: float = 0.0

    @property
    def volume(self) -> float:
        return float(4.0 / 3.0 * np.pi * np.prod(self.semi_axes))

    def mahalanobis(self, points) -> np.ndarray:
        """``(p - c)^T A (p - c)`` for each row of ``points``."""
        d = np.atleast_2d(points) - self.center
        return np.einsum("ij,jk,ik->i", d, self.shape_matrix, d)

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "semi_axes": self.semi_axes.tolist(),
            "orientation": self.orientation.tolist(),
            "shape_matrix": self.shape_matrix.tolist(),
            "n_iter": int(self.n_iter),
            "residual": float(self.residual),
        }

    @classmethod
    def from_shape(cls, center, shape_matrix, **kw) -> "Ellipsoid":
        shape_matrix = 0.5 * (np.asarray(shape_matrix) + np.asarray(shape_matrix).T)
        eigval, eigvec = np.linalg.eigh(shape_matrix)
        # smallest eigenvalue <-> longest axis
        order = np.argsort(eigval)
        eigval, eigvec = eigval[order], eigvec[:, order]
        if eigval[0] <= 0:
            raise DegenerateInputError("shape matrix is not positive definite")
        return cls(np.asarray(center, dtype=float), 1.0 / np.sqrt(eigval), eigvec, shape_matrix, **kw)


def _check_affine_rank(points):
    if points.ndim != 2 or points.shape[1] != 3:
        raise DegenerateInputError(f"expected an (N, 3) point array, got shape {points.shape}")
    if len(points) < 4:
        raise DegenerateInputError(f"need at least 4 points, got {len(points)}")
    if not np.all(np.isfinite(points)):
        raise DegenerateInputError("points contain non-finite coordinates")
    centred = points - points.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[-1] / sv[0] < 1e-9:
        raise DegenerateInputError("points are coplanar or collinear; no bounded ellipsoid exists")


def khachiyan_weights(points: np.ndarray, tol: float = 1e-3, max_iter: int = 100_000):
    """Khachiyan's first-order iteration on the lifted points.

    Returns ``(u, M, n_iter)`` where ``u`` are the design weights and ``M`` the
    lifted Mahalanobis values ``q_i^T X^{-1} q_i``; stops once ``max(M) - (d+1) <= tol``.
    """
    n, d = points.shape
    q = np.ascontiguousarray(np.hstack([points, np.ones((n, 1))]))
    try:
        u, M, it, ok = khachiyan(q, float(tol), int(max_iter))
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError("moment matrix became singular") from exc
    if not ok:
        excess = float(M.max() - (d + 1))
        raise ConvergenceError(
            f"minimum-volume ellipsoid did not converge in {max_iter} iterations (residual {excess:.3g})",
            residual=excess,
        )
    return u, M, int(it)


def min_volume_ellipsoid(points, tol: float = 1e-3, max_iter: int = 100_000) -> Ellipsoid:
    """Minimum-volume ellipsoid enclosing a 3-D point set (Khachiyan's method).

    Only convex-hull vertices can support the ellipsoid, so the iteration runs on
    those.  Every input point satisfies ``(p - c)^T A (p - c) <= 1 + O(tol)``.
    """
    points = np.asarray(points, dtype=np.float64)
    _check_affine_rank(points)
    shift = points.mean(axis=0)
    scale = float(np.abs(points - shift).max())
    work = (points - shift) / scale
    try:
        work = work[np.sort(ConvexHull(work).vertices)]
    except QhullError as exc:
        raise DegenerateInputError(f"convex hull failed: {exc}") from exc

    u, M, n_iter = khachiyan_weights(work, tol=tol, max_iter=max_iter)
    d = work.shape[1]
    c = u @ work
    scatter = (work * u[:, None]).T @ work - np.outer(c, c)
    A = np.linalg.inv(scatter) / d
    center = c * scale + shift
    A = A / scale**2
    return Ellipsoid.from_shape(center, A, n_iter=n_iter, residual=float(M.max() - (d + 1)))


@dataclass(frozen=True)
class RICValue:
    ric: float
    wt_ellipsoid: Ellipsoid
    tc_ellipsoid: Ellipsoid

    def to_dict(self) -> dict:
        return {
            "RIC": self.ric,
            "WT": self.wt_ellipsoid.to_dict(),
            "TC": self.tc_ellipsoid.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def roi_boundary_points(vol, kind: str) -> np.ndarray:
    mask = roi_mask(vol, kind).data
    return voxel_centers(boundary_mask(mask), vol.spacing, vol.origin)


def relative_invasiveness(vol, subject_id=None, tol: float = 1e-3, max_iter: int = 100_000) -> RICValue:
    """RIC of a tumour structure map.

    Raises :class:`DegenerateSubjectError` (carrying ``subject_id``) when either
    ROI is empty or too flat to enclose.
    """
    fits = {}
    for kind in ("WT", "TC"):
        pts = roi_boundary_points(vol, kind)
        try:
            fits[kind] = min_volume_ellipsoid(pts, tol=tol, max_iter=max_iter)
        except (DegenerateInputError, ConvergenceError) as exc:
            raise DegenerateSubjectError(f"{kind} ellipsoid: {exc}", subject_id) from exc
    wt, tc = fits["WT"], fits["TC"]
    return RICValue(float(tc.semi_axes[1] / wt.semi_axes[1]), wt, tc)


ric = relative_invasiveness

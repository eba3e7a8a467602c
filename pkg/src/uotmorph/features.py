"""Per-subject feature images from transport solutions.

The allocation image is oriented template-minus-subject: mass the solver
removed on the template side (tissue the subject lacks) counts positive,
mass it added counts negative; target-side allocation enters with the
opposite sign.  In the local limit (allocation far cheaper than any
transport) this reduces to the voxel-wise difference template - subject,
the classical VBM/TBM feature.  The transport-cost image is outgoing
transported cost minus incoming transported cost per voxel, which sums to
zero over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .grid import GridDomain, voxel_positions
from .solver import CostSpec, TransportSolution


@dataclass(frozen=True)
class FeatureImages:
    subject_id: str
    domain: GridDomain
    allocation: np.ndarray
    transport_cost: np.ndarray
    smoothed: bool = False
    sigma: float = 0.0


def allocation_image(sol: TransportSolution, domain: GridDomain) -> np.ndarray:
    """Signed allocation field, template-minus-subject orientation."""
    field = np.zeros(domain.size)
    for vox, m in sol.alloc_remove_src.items():
        field[vox] += m
    for vox, m in sol.alloc_add_src.items():
        field[vox] -= m
    for vox, m in sol.alloc_remove_tgt.items():
        field[vox] -= m
    for vox, m in sol.alloc_add_tgt.items():
        field[vox] += m
    return field.reshape(domain.dims)


def transport_cost_image(
    sol: TransportSolution, cost: CostSpec, domain: GridDomain
) -> np.ndarray:
    """Outgoing minus incoming transported cost per voxel."""
    field = np.zeros(domain.size)
    if sol.plan_arcs:
        src = np.array([a[0] for a in sol.plan_arcs], dtype=np.int64)
        tgt = np.array([a[1] for a in sol.plan_arcs], dtype=np.int64)
        mass = np.array([a[2] for a in sol.plan_arcs])
        d = voxel_positions(domain, src) - voxel_positions(domain, tgt)
        if cost.kind != "squared_euclidean":  # pragma: no cover - single kind
            raise NotImplementedError(cost.kind)
        c = np.einsum("ij,ij->i", d, d)
        moved = mass * c
        np.add.at(field, src, moved)
        np.subtract.at(field, tgt, moved)
    return field.reshape(domain.dims)


def smooth(field: np.ndarray, sigma: float, truncation_radius: int | None = None):
    """Truncated Gaussian smoothing with per-voxel boundary renormalization.

    The kernel is exp(-|d|^2 / (2 sigma^2)) on the cube of half-width
    ``truncation_radius`` voxels (default ceil(3 sigma)); at each voxel the
    kernel mass falling outside the domain is renormalized away, so
    constant fields pass through unchanged. sigma=0 is the identity.
    """
    field = np.asarray(field, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return field.copy()
    radius = int(np.ceil(3 * sigma)) if truncation_radius is None else int(
        truncation_radius
    )
    if radius == 0:
        return field.copy()
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-(offsets.astype(np.float64) ** 2) / (2 * sigma * sigma))

    num = field
    den = np.ones_like(field)
    for axis in range(field.ndim):
        num = convolve1d(num, kernel, axis=axis, mode="constant", cval=0.0)
        den = convolve1d(den, kernel, axis=axis, mode="constant", cval=0.0)
    return num / den


def extract_features(
    subject_id: str,
    sol: TransportSolution,
    cost: CostSpec,
    domain: GridDomain,
    sigma: float = 0.0,
    truncation_radius: int | None = None,
) -> FeatureImages:
    """Build (optionally smoothed) allocation and transport-cost images."""
    alloc_img = allocation_image(sol, domain)
    tcost_img = transport_cost_image(sol, cost, domain)
    if sigma > 0:
        alloc_img = smooth(alloc_img, sigma, truncation_radius)
        tcost_img = smooth(tcost_img, sigma, truncation_radius)
    return FeatureImages(
        subject_id=subject_id,
        domain=domain,
        allocation=alloc_img,
        transport_cost=tcost_img,
        smoothed=sigma > 0,
        sigma=sigma,
    )

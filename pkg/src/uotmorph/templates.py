"""Template construction from a cohort of aligned measures.

Three methods: voxel-wise Euclidean mean, sparse mean (mean masked to
voxels positive in at least a fraction of the cohort), and an approximate
transport barycenter computed by fixed-point iteration on the transport
plans from every image to the current template.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BarycenterDivergenceError, ConfigError, DataError
from .grid import GridMeasure, voxel_positions
from .solver import AllocationSpec, CostSpec, QuantizationSpec, solve_unbalanced

METHOD_EUCLIDEAN = "euclidean"
METHOD_SPARSE = "sparse"
METHOD_OT_BARYCENTER = "ot_barycenter"


@dataclass(frozen=True)
class TemplateSpec:
    method: str = METHOD_SPARSE
    sparse_threshold_fraction: float = 0.9
    barycenter_max_iters: int = 20
    barycenter_tolerance: float = 1e-4

    def __post_init__(self):
        if self.method not in (METHOD_EUCLIDEAN, METHOD_SPARSE, METHOD_OT_BARYCENTER):
            raise ConfigError(f"unknown template method {self.method!r}")
        if not 0 < self.sparse_threshold_fraction <= 1:
            raise ConfigError("sparse_threshold_fraction must be in (0, 1]")
        if self.barycenter_max_iters < 1:
            raise ConfigError("barycenter_max_iters must be >= 1")


def _check_cohort(images):
    if not images:
        raise DataError("template construction needs at least one image")
    domain = images[0].domain
    for im in images[1:]:
        if im.domain != domain:
            raise DataError("all cohort images must share one grid domain")
    return domain


def euclidean_mean(images: list[GridMeasure]) -> GridMeasure:
    """Voxel-wise arithmetic mean of the cohort."""
    domain = _check_cohort(images)
    acc = np.zeros(domain.dims)
    for im in images:
        acc += im.values
    return GridMeasure(domain, acc / len(images))


def sparse_mean(images: list[GridMeasure], spec: TemplateSpec) -> GridMeasure:
    """Euclidean mean masked to voxels positive in at least ceil(f*n) images."""
    domain = _check_cohort(images)
    n = len(images)
    s = math.ceil(spec.sparse_threshold_fraction * n)
    positive_count = np.zeros(domain.dims, dtype=np.int64)
    for im in images:
        positive_count += im.values > 0
    mean = euclidean_mean(images)
    masked = np.where(positive_count >= s, mean.values, 0.0)
    return GridMeasure(domain, masked)


def _solve_to_template(args):
    image, template, cost, alloc, quant = args
    return solve_unbalanced(image, template, cost, alloc, quant)


def _barycenter_round(images, template, cost, alloc, quant, workers):
    args = [(im, template, cost, alloc, quant) for im in images]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(_solve_to_template, args))
    else:
        sols = [_solve_to_template(a) for a in args]
    return sols


def ot_barycenter(
    images: list[GridMeasure],
    spec: TemplateSpec,
    cost: CostSpec,
    alloc: AllocationSpec,
    quant: QuantizationSpec = QuantizationSpec(),
    workers: int = 1,
):
    """Approximate transport barycenter by fixed-point iteration.

    Starts from the sparse mean (Euclidean mean if that is empty). Each
    round solves transport from every image to the current template, then
    moves each template atom to the snapped transport-weighted centroid of
    its inbound mass and resets its mass to the average inbound mass.
    Stops when the summed objective changes by less than the relative
    tolerance, or after ``barycenter_max_iters`` rounds.

    Returns (template, objective, iterations).
    """
    domain = _check_cohort(images)
    template = sparse_mean(images, spec)
    if template.total_mass == 0:
        template = euclidean_mean(images)
    if template.total_mass == 0:
        raise DataError("cohort is entirely empty; no barycenter exists")

    n = len(images)
    prev_objective = None
    iterations = 0
    for _ in range(spec.barycenter_max_iters):
        sols = _barycenter_round(images, template, cost, alloc, quant, workers)
        objective = float(sum(s.objective for s in sols))
        iterations += 1

        if prev_objective is not None:
            if objective > prev_objective * (1 + 1e-9) + 1e-15:
                raise BarycenterDivergenceError(
                    f"barycenter objective increased from {prev_objective!r} "
                    f"to {objective!r}"
                )
            if abs(prev_objective - objective) <= (
                spec.barycenter_tolerance * max(prev_objective, 1e-300)
            ):
                return template, objective, iterations
        if objective == 0.0:
            return template, objective, iterations
        prev_objective = objective

        # relocate each template atom to the centroid of its inbound mass
        size = domain.size
        inbound_mass = np.zeros(size)
        inbound_centroid = np.zeros((size, domain.ndim))
        for sol in sols:
            for src, tgt, m in sol.plan_arcs:
                inbound_mass[tgt] += m
                inbound_centroid[tgt] += m * voxel_positions(domain, [src])[0]
        new_values = np.zeros(size)
        active = np.flatnonzero(inbound_mass > 0)
        spacing = np.asarray(domain.spacing)
        origin = np.asarray(domain.origin)
        for t in active:
            centroid = inbound_centroid[t] / inbound_mass[t]
            multi = np.rint((centroid - origin) / spacing).astype(int)
            multi = np.clip(multi, 0, np.asarray(domain.dims) - 1)
            new_values[np.ravel_multi_index(tuple(multi), domain.dims)] += (
                inbound_mass[t] / n
            )
        template = GridMeasure(domain, new_values.reshape(domain.dims))

    sols = _barycenter_round(images, template, cost, alloc, quant, workers)
    final = float(sum(s.objective for s in sols))
    if prev_objective is not None and final > prev_objective * (1 + 1e-9) + 1e-15:
        raise BarycenterDivergenceError(
            f"barycenter objective increased from {prev_objective!r} to {final!r}"
        )
    return template, final, iterations + 1


def build_template(images, spec: TemplateSpec, cost=None, alloc=None,
                   quant=QuantizationSpec(), workers: int = 1):
    """Dispatch on spec.method; returns (template, metadata dict)."""
    if spec.method == METHOD_EUCLIDEAN:
        return euclidean_mean(images), {"method": spec.method}
    if spec.method == METHOD_SPARSE:
        return sparse_mean(images, spec), {
            "method": spec.method,
            "sparse_threshold_fraction": spec.sparse_threshold_fraction,
        }
    if cost is None or alloc is None:
        raise ConfigError("ot_barycenter template needs cost and allocation specs")
    template, objective, iters = ot_barycenter(
        images, spec, cost, alloc, quant, workers=workers
    )
    return template, {
        "method": spec.method,
        "objective": objective,
        "iterations": iters,
        "sparse_threshold_fraction": spec.sparse_threshold_fraction,
    }

"""Build min-cost-flow networks for balanced and unbalanced transport.

Nodes are the support voxels of the two measures plus, for the unbalanced
program, a source-side bank node (net supply equal to the quantized mass
imbalance) and, with both-sided allocation, a target-side bank node with
zero net supply.  This realizes the three constraint families: source and
target marginals, and net source allocation minus net target allocation
equal to the imbalance.

Two exact reductions keep networks small without changing the optimum:

* a transport arc with cost greater than twice the allocation cost is
  dominated by removing at its tail and adding at its head, so it is
  pruned (never when allocation is disabled);
* a zero-mass source site can only ever forward freshly added mass, which
  is never cheaper than adding at the destination itself, so such sites
  keep only their self arc.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, InfeasibleError, MassImbalanceError
from ..grid import GridMeasure, voxel_positions
from .specs import (
    ARC_ADD_SRC,
    ARC_ADD_TGT,
    ARC_REM_SRC,
    ARC_REM_TGT,
    ARC_TRANSPORT,
    SIDE_BOTH,
    AllocationSpec,
    CostSpec,
    QuantizationSpec,
    TransportSolution,
    quantize_to_total,
)


@dataclass
class FlowProblem:
    """Arc-list form of a transport network with integer node supplies."""

    n_nodes: int
    tails: np.ndarray
    heads: np.ndarray
    costs: np.ndarray
    supplies: np.ndarray  # int64, positive = sends flow
    arc_kind: np.ndarray  # int8, ARC_* constants
    arc_voxel_a: np.ndarray  # transport: source voxel; virtual: site voxel
    arc_voxel_b: np.ndarray  # transport: target voxel; virtual: -1
    mass_per_unit: float
    delta_real: float
    delta_units: int

    @property
    def n_arcs(self) -> int:
        return len(self.tails)


def _quantized_masses(mu_flat, nu_flat, units):
    mu_total = float(np.sum(mu_flat))
    nu_total = float(np.sum(nu_flat))
    if mu_total <= 0 and nu_total <= 0:
        raise InfeasibleError("both measures are empty")
    ref = mu_total if mu_total > 0 else nu_total
    scale = units / ref
    n_mu = units if mu_total > 0 else 0
    n_nu = int(math.floor(nu_total * scale + 0.5))
    w_units = quantize_to_total(mu_flat, n_mu)
    z_units = quantize_to_total(nu_flat, n_nu)
    return w_units, z_units, 1.0 / scale


def build_unbalanced_problem(
    mu: GridMeasure,
    nu: GridMeasure,
    cost: CostSpec,
    alloc: AllocationSpec,
    quant: QuantizationSpec,
    allowed_pairs=None,
) -> FlowProblem:
    """Network for the unbalanced program between measures on one domain.

    ``allowed_pairs`` optionally restricts transport arcs to the given
    (source_voxel, target_voxel) index arrays (multiscale refinement);
    self arcs and virtual arcs are always admitted.
    """
    if mu.domain != nu.domain:
        raise DataError("unbalanced solve requires measures on the same domain")
    domain = mu.domain
    w_flat = mu.flat
    z_flat = nu.flat
    w_units_full, z_units_full, mass_per_unit = _quantized_masses(
        w_flat, z_flat, quant.units
    )
    delta_units = int(z_units_full.sum() - w_units_full.sum())
    delta_real = nu.total_mass - mu.total_mass

    max_cost = cost.max_on_domain(domain)
    lam = alloc.effective_lambda(max_cost)
    finite_lam = math.isfinite(lam)
    if not finite_lam and delta_units != 0:
        raise InfeasibleError(
            "infinite allocation cost with unbalanced quantized totals"
        )

    tgt_voxels = np.flatnonzero(z_flat > 0)
    src_support = np.flatnonzero(w_flat > 0)
    if finite_lam:
        # allocation sites: union of supports, so every needed voxel can be
        # served by a self arc fed from the bank
        src_voxels = np.union1d(src_support, tgt_voxels)
    else:
        src_voxels = src_support

    n_src = len(src_voxels)
    n_tgt = len(tgt_voxels)
    src_node = {int(v): k for k, v in enumerate(src_voxels)}
    tgt_node = {int(v): n_src + k for k, v in enumerate(tgt_voxels)}

    n_nodes = n_src + n_tgt
    bank_src = bank_tgt = -1
    if finite_lam:
        bank_src = n_nodes
        n_nodes += 1
        if alloc.side == SIDE_BOTH:
            bank_tgt = n_nodes
            n_nodes += 1

    supplies = np.zeros(n_nodes, dtype=np.int64)
    supplies[:n_src] = w_units_full[src_voxels]
    supplies[n_src : n_src + n_tgt] -= z_units_full[tgt_voxels]
    if finite_lam:
        supplies[bank_src] = delta_units

    tails, heads, costs, kinds, vox_a, vox_b = [], [], [], [], [], []

    # transport arcs
    pos_tgt = voxel_positions(domain, tgt_voxels)
    positive_src = src_voxels[w_units_full[src_voxels] > 0]
    prune_bound = 2.0 * lam if finite_lam else math.inf
    if n_tgt and len(positive_src):
        if allowed_pairs is None:
            pos_src = voxel_positions(domain, positive_src)
            cmat = cost.pairwise(pos_src, pos_tgt)
            keep = cmat <= prune_bound
            ii, jj = np.nonzero(keep)
            pair_i = positive_src[ii]
            pair_j = tgt_voxels[jj]
            pair_c = cmat[ii, jj]
        else:
            ai = np.asarray(allowed_pairs[0], dtype=np.int64)
            aj = np.asarray(allowed_pairs[1], dtype=np.int64)
            mask = (w_flat[ai] > 0) & (z_flat[aj] > 0) & (ai != aj)
            ai, aj = ai[mask], aj[mask]
            pa = voxel_positions(domain, ai)
            pb = voxel_positions(domain, aj)
            d = pa - pb
            pc = np.einsum("ij,ij->i", d, d)
            keep = pc <= prune_bound
            pair_i, pair_j, pair_c = ai[keep], aj[keep], pc[keep]

        tails.append(
            np.fromiter((src_node[int(v)] for v in pair_i), np.int64, len(pair_i))
        )
        heads.append(
            np.fromiter((tgt_node[int(v)] for v in pair_j), np.int64, len(pair_j))
        )
        costs.append(np.asarray(pair_c, dtype=np.float64))
        kinds.append(np.full(len(pair_i), ARC_TRANSPORT, dtype=np.int8))
        vox_a.append(pair_i.astype(np.int64))
        vox_b.append(pair_j.astype(np.int64))

    # self arcs for every voxel present on both sides (cost 0); when
    # allowed_pairs is given the block above excluded them, and without
    # restriction the pruning mask always keeps them, so add the missing ones
    if allowed_pairs is not None and n_tgt:
        both = np.intersect1d(src_voxels, tgt_voxels)
        tails.append(
            np.fromiter((src_node[int(v)] for v in both), np.int64, len(both))
        )
        heads.append(
            np.fromiter((tgt_node[int(v)] for v in both), np.int64, len(both))
        )
        costs.append(np.zeros(len(both)))
        kinds.append(np.full(len(both), ARC_TRANSPORT, dtype=np.int8))
        vox_a.append(both.astype(np.int64))
        vox_b.append(both.astype(np.int64))
    elif allowed_pairs is None and n_tgt:
        # zero-supply sites were excluded from the pair matrix; give them
        # their self arc when the voxel also carries target mass
        zero_sites = src_voxels[w_units_full[src_voxels] == 0]
        both = np.intersect1d(zero_sites, tgt_voxels)
        tails.append(
            np.fromiter((src_node[int(v)] for v in both), np.int64, len(both))
        )
        heads.append(
            np.fromiter((tgt_node[int(v)] for v in both), np.int64, len(both))
        )
        costs.append(np.zeros(len(both)))
        kinds.append(np.full(len(both), ARC_TRANSPORT, dtype=np.int8))
        vox_a.append(both.astype(np.int64))
        vox_b.append(both.astype(np.int64))

    if finite_lam:
        # bank -> site (mass added at source side), site -> bank (removed)
        tails.append(np.full(n_src, bank_src, dtype=np.int64))
        heads.append(np.arange(n_src, dtype=np.int64))
        costs.append(np.full(n_src, lam))
        kinds.append(np.full(n_src, ARC_ADD_SRC, dtype=np.int8))
        vox_a.append(src_voxels.astype(np.int64))
        vox_b.append(np.full(n_src, -1, dtype=np.int64))

        rem_sites = np.array(
            [src_node[int(v)] for v in positive_src], dtype=np.int64
        )
        tails.append(rem_sites)
        heads.append(np.full(len(rem_sites), bank_src, dtype=np.int64))
        costs.append(np.full(len(rem_sites), lam))
        kinds.append(np.full(len(rem_sites), ARC_REM_SRC, dtype=np.int8))
        vox_a.append(positive_src.astype(np.int64))
        vox_b.append(np.full(len(rem_sites), -1, dtype=np.int64))

        if alloc.side == SIDE_BOTH and n_tgt:
            lam_t = lam * (1.0 + alloc.tiebreak_epsilon)
            tgt_nodes = np.arange(n_src, n_src + n_tgt, dtype=np.int64)
            tails.append(np.full(n_tgt, bank_tgt, dtype=np.int64))
            heads.append(tgt_nodes)
            costs.append(np.full(n_tgt, lam_t))
            kinds.append(np.full(n_tgt, ARC_ADD_TGT, dtype=np.int8))
            vox_a.append(tgt_voxels.astype(np.int64))
            vox_b.append(np.full(n_tgt, -1, dtype=np.int64))

            tails.append(tgt_nodes)
            heads.append(np.full(n_tgt, bank_tgt, dtype=np.int64))
            costs.append(np.full(n_tgt, lam_t))
            kinds.append(np.full(n_tgt, ARC_REM_TGT, dtype=np.int8))
            vox_a.append(tgt_voxels.astype(np.int64))
            vox_b.append(np.full(n_tgt, -1, dtype=np.int64))

    def cat(parts, dtype):
        if not parts:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([np.asarray(p, dtype=dtype) for p in parts])

    return FlowProblem(
        n_nodes=n_nodes,
        tails=cat(tails, np.int64),
        heads=cat(heads, np.int64),
        costs=cat(costs, np.float64),
        supplies=supplies,
        arc_kind=cat(kinds, np.int8),
        arc_voxel_a=cat(vox_a, np.int64),
        arc_voxel_b=cat(vox_b, np.int64),
        mass_per_unit=mass_per_unit,
        delta_real=delta_real,
        delta_units=delta_units,
    )


def build_balanced_problem(
    mu: GridMeasure, nu: GridMeasure, cost: CostSpec, quant: QuantizationSpec
) -> FlowProblem:
    """Plain transport network; totals must agree to 1e-9 relative."""
    mu_total, nu_total = mu.total_mass, nu.total_mass
    if mu_total <= 0 or nu_total <= 0:
        raise InfeasibleError("balanced solve requires two non-empty measures")
    if abs(mu_total - nu_total) > 1e-9 * max(mu_total, nu_total):
        raise MassImbalanceError(
            f"totals differ: |mu|={mu_total!r}, |nu|={nu_total!r}"
        )
    w_units_full, z_units_full, mass_per_unit = _quantized_masses(
        mu.flat, nu.flat, quant.units
    )
    if int(w_units_full.sum()) != int(z_units_full.sum()):
        raise MassImbalanceError("quantized totals differ")

    src_voxels = np.flatnonzero(mu.flat > 0)
    tgt_voxels = np.flatnonzero(nu.flat > 0)
    n_src, n_tgt = len(src_voxels), len(tgt_voxels)
    pos_src = voxel_positions(mu.domain, src_voxels)
    pos_tgt = voxel_positions(nu.domain, tgt_voxels)
    cmat = cost.pairwise(pos_src, pos_tgt)

    ii, jj = np.meshgrid(np.arange(n_src), np.arange(n_tgt), indexing="ij")
    tails = ii.ravel().astype(np.int64)
    heads = (jj.ravel() + n_src).astype(np.int64)
    costs = cmat.ravel().astype(np.float64)

    supplies = np.zeros(n_src + n_tgt, dtype=np.int64)
    supplies[:n_src] = w_units_full[src_voxels]
    supplies[n_src:] -= z_units_full[tgt_voxels]

    return FlowProblem(
        n_nodes=n_src + n_tgt,
        tails=tails,
        heads=heads,
        costs=costs,
        supplies=supplies,
        arc_kind=np.full(len(tails), ARC_TRANSPORT, dtype=np.int8),
        arc_voxel_a=src_voxels[ii.ravel()].astype(np.int64),
        arc_voxel_b=tgt_voxels[jj.ravel()].astype(np.int64),
        mass_per_unit=mass_per_unit,
        delta_real=nu_total - mu_total,
        delta_units=0,
    )


def extract_solution(problem: FlowProblem, flows) -> TransportSolution:
    """Convert integer arc flows into a TransportSolution with real masses."""
    flows = np.asarray(flows, dtype=np.int64)
    mpu = problem.mass_per_unit
    nz = np.flatnonzero(flows > 0)
    objective = float(np.dot(problem.costs[nz], flows[nz].astype(np.float64)) * mpu)

    plan = []
    maps = {
        ARC_ADD_SRC: {},
        ARC_REM_SRC: {},
        ARC_ADD_TGT: {},
        ARC_REM_TGT: {},
    }
    for a in nz:
        kind = int(problem.arc_kind[a])
        mass = float(flows[a]) * mpu
        if kind == ARC_TRANSPORT:
            plan.append(
                (int(problem.arc_voxel_a[a]), int(problem.arc_voxel_b[a]), mass)
            )
        else:
            vox = int(problem.arc_voxel_a[a])
            maps[kind][vox] = maps[kind].get(vox, 0.0) + mass
    plan.sort()
    return TransportSolution(
        plan_arcs=tuple(plan),
        alloc_add_src=maps[ARC_ADD_SRC],
        alloc_remove_src=maps[ARC_REM_SRC],
        alloc_add_tgt=maps[ARC_ADD_TGT],
        alloc_remove_tgt=maps[ARC_REM_TGT],
        objective=objective,
        delta=problem.delta_real,
        mass_per_unit=mpu,
    )

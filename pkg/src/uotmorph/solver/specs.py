"""Parameter and solution types for the transport solvers.

Masses are quantized to integer flow units (largest-remainder rounding) so
the min-cost-flow solvers run on exact integer flows; arc costs stay
float64. A solution reports real masses that are exact multiples of
``mass_per_unit``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

SIDE_SOURCE_ONLY = "source_only"
SIDE_BOTH = "both_sides"

# arc kinds in a FlowProblem
ARC_TRANSPORT = 0
ARC_ADD_SRC = 1
ARC_REM_SRC = 2
ARC_ADD_TGT = 3
ARC_REM_TGT = 4


@dataclass(frozen=True)
class CostSpec:
    """Ground cost c(x, y) on physical coordinates."""

    kind: str = "squared_euclidean"

    def __post_init__(self):
        if self.kind != "squared_euclidean":
            raise ConfigError(f"unsupported cost kind {self.kind!r}")

    def pairwise(self, pos_a: np.ndarray, pos_b: np.ndarray) -> np.ndarray:
        """Cost matrix between coordinate arrays of shape (n, d) and (m, d)."""
        diff = pos_a[:, None, :] - pos_b[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)

    def max_on_domain(self, domain) -> float:
        """Upper bound of the cost over a grid domain (corner to corner)."""
        span = [(d - 1) * s for d, s in zip(domain.dims, domain.spacing)]
        return float(sum(v * v for v in span))


@dataclass(frozen=True)
class AllocationSpec:
    """Mass allocation pricing: constant cost per unit added or removed.

    ``lam`` may be ``math.inf`` to forbid allocation entirely.  With
    ``side="both_sides"`` the target-side virtual arcs carry a
    multiplicative ``tiebreak_epsilon`` surcharge so that optima are unique
    and feature images reproducible.  ``lam == 0`` is replaced internally
    by a tiny positive cost to keep the solution deterministic.
    """

    lam: float = 1.0
    side: str = SIDE_SOURCE_ONLY
    tiebreak_epsilon: float = 1e-9

    def __post_init__(self):
        if not (self.lam >= 0):
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.side not in (SIDE_SOURCE_ONLY, SIDE_BOTH):
            raise ConfigError(f"unknown allocation side {self.side!r}")
        if not (self.tiebreak_epsilon > 0):
            raise ConfigError("tiebreak_epsilon must be > 0")

    def effective_lambda(self, max_cost: float) -> float:
        """The lambda actually priced; 0 becomes 1e-12 * max cost."""
        if self.lam == 0:
            return 1e-12 * max_cost if max_cost > 0 else 0.0
        return self.lam


@dataclass(frozen=True)
class QuantizationSpec:
    """Number of integer flow units assigned to the source total mass."""

    units: int = 10_000_000

    def __post_init__(self):
        if self.units < 1:
            raise ConfigError(f"quantization units must be >= 1, got {self.units}")
        if self.units > 2**40:
            raise ConfigError(
                f"quantization units {self.units} exceed representable flow"
            )


def quantize_to_total(values: np.ndarray, target_total: int) -> np.ndarray:
    """Largest-remainder rounding of non-negative reals to integers.

    The result sums exactly to ``target_total``; each entry differs from its
    scaled real value by less than one unit.  Ties in the remainder are
    broken by lowest index for determinism.
    """
    values = np.asarray(values, dtype=np.float64)
    total = values.sum()
    if target_total == 0 or total == 0:
        return np.zeros(len(values), dtype=np.int64)
    # divide first: values/total is in [0, 1], so tiny totals cannot overflow
    scaled = (values / total) * target_total
    base = np.floor(scaled).astype(np.int64)
    short = int(target_total - base.sum())
    if short > 0:
        remainders = scaled - base
        order = np.argsort(-remainders, kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        # floor cannot overshoot in exact arithmetic; guard float edge cases
        remainders = scaled - base
        order = np.argsort(remainders, kind="stable")
        take = order[base[order] > 0][: -short]
        base[take] -= 1
    return base


@dataclass(frozen=True)
class TransportSolution:
    """Optimal transport plan plus allocation records.

    ``plan_arcs`` holds the coupling restricted to its support as
    ``(source_voxel, target_voxel, mass)`` triples.  The four allocation
    maps give mass added/removed at grid voxels on the source (template)
    and target (subject) sides.  All masses are exact integer multiples of
    ``mass_per_unit``.
    """

    plan_arcs: tuple[tuple[int, int, float], ...]
    alloc_add_src: dict[int, float] = field(default_factory=dict)
    alloc_remove_src: dict[int, float] = field(default_factory=dict)
    alloc_add_tgt: dict[int, float] = field(default_factory=dict)
    alloc_remove_tgt: dict[int, float] = field(default_factory=dict)
    objective: float = 0.0
    delta: float = 0.0
    mass_per_unit: float = 1.0

    def to_units(self, mass: float) -> int:
        return int(round(mass / self.mass_per_unit))

    def total_transported(self) -> float:
        return sum(m for _, _, m in self.plan_arcs)

    def gross_allocation(self) -> float:
        return (
            sum(self.alloc_add_src.values())
            + sum(self.alloc_remove_src.values())
            + sum(self.alloc_add_tgt.values())
            + sum(self.alloc_remove_tgt.values())
        )

    def net_allocation(self) -> float:
        """Source-side net minus target-side net; equals delta by feasibility."""
        net_src = sum(self.alloc_add_src.values()) - sum(
            self.alloc_remove_src.values()
        )
        net_tgt = sum(self.alloc_add_tgt.values()) - sum(
            self.alloc_remove_tgt.values()
        )
        return net_src - net_tgt


def feasibility_violation_units(
    sol: TransportSolution, mu_flat: np.ndarray, nu_flat: np.ndarray, units: int
) -> int:
    """Worst marginal/net-delta violation of a solution, in integer units.

    Re-quantizes the inputs exactly as the solver did and checks the three
    constraint families of the unbalanced program. Returns the maximum
    absolute violation (0 for an exactly feasible solution).
    """
    mu_total = float(np.sum(mu_flat))
    nu_total = float(np.sum(nu_flat))
    ref = mu_total if mu_total > 0 else nu_total
    n_mu = units if mu_total > 0 else 0
    n_nu = int(math.floor(nu_total * (units / ref) + 0.5))
    w_units = quantize_to_total(mu_flat, n_mu)
    z_units = quantize_to_total(nu_flat, n_nu)

    size = len(mu_flat)
    out = np.zeros(size, dtype=np.int64)
    inflow = np.zeros(size, dtype=np.int64)
    for i, j, m in sol.plan_arcs:
        u = sol.to_units(m)
        out[i] += u
        inflow[j] += u

    def units_map(d):
        arr = np.zeros(size, dtype=np.int64)
        for k, v in d.items():
            arr[k] += sol.to_units(v)
        return arr

    add_s = units_map(sol.alloc_add_src)
    rem_s = units_map(sol.alloc_remove_src)
    add_t = units_map(sol.alloc_add_tgt)
    rem_t = units_map(sol.alloc_remove_tgt)

    src_violation = np.abs(out - add_s + rem_s - w_units).max() if size else 0
    tgt_violation = np.abs(inflow + add_t - rem_t - z_units).max() if size else 0
    delta_units = n_nu - n_mu
    net = (add_s.sum() - rem_s.sum()) - (add_t.sum() - rem_t.sum())
    delta_violation = abs(int(net) - delta_units)
    return int(max(src_violation, tgt_violation, delta_violation))

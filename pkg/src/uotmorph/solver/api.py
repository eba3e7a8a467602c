"""Public solve entry points and transport-solution CSV export."""

from __future__ import annotations

import csv

from ..errors import DataError
from ..grid import GridMeasure
from . import network, simplex, ssp
from .specs import AllocationSpec, CostSpec, QuantizationSpec, TransportSolution

_ENGINES = {
    "simplex": simplex.solve_min_cost_flow,
    "ssp": ssp.solve_min_cost_flow,
}


def _run(problem, engine: str) -> TransportSolution:
    try:
        solver = _ENGINES[engine]
    except KeyError:
        raise DataError(f"unknown solver engine {engine!r}") from None
    flows, _ = solver(problem)
    return network.extract_solution(problem, flows)


def solve_balanced(
    mu: GridMeasure,
    nu: GridMeasure,
    cost: CostSpec,
    quant: QuantizationSpec = QuantizationSpec(),
    engine: str = "simplex",
) -> TransportSolution:
    """Optimal coupling between measures of equal total mass."""
    problem = network.build_balanced_problem(mu, nu, cost, quant)
    return _run(problem, engine)


def solve_unbalanced(
    mu: GridMeasure,
    nu: GridMeasure,
    cost: CostSpec,
    alloc: AllocationSpec,
    quant: QuantizationSpec = QuantizationSpec(),
    engine: str = "simplex",
) -> TransportSolution:
    """Unbalanced transport with priced mass allocation between two measures."""
    problem = network.build_unbalanced_problem(mu, nu, cost, alloc, quant)
    return _run(problem, engine)


def uot_distance(
    mu: GridMeasure,
    nu: GridMeasure,
    cost: CostSpec,
    alloc: AllocationSpec,
    quant: QuantizationSpec = QuantizationSpec(),
) -> float:
    """Minimum objective value of the unbalanced program."""
    return solve_unbalanced(mu, nu, cost, alloc, quant).objective


_KIND_LABELS = [
    ("arc", None),
    ("add_src", "alloc_add_src"),
    ("rem_src", "alloc_remove_src"),
    ("add_tgt", "alloc_add_tgt"),
    ("rem_tgt", "alloc_remove_tgt"),
]


def export_solution(sol: TransportSolution, path) -> None:
    """Write a solution as CSV rows `kind,source_index,target_index,mass`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# objective={sol.objective!r}\n")
        fh.write(f"# delta={sol.delta!r}\n")
        fh.write(f"# mass_per_unit={sol.mass_per_unit!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["kind", "source_index", "target_index", "mass"])
        for i, j, m in sol.plan_arcs:
            writer.writerow(["arc", i, j, repr(m)])
        for label, attr in _KIND_LABELS[1:]:
            mapping = getattr(sol, attr)
            for vox in sorted(mapping):
                writer.writerow([label, vox, "", repr(mapping[vox])])


def load_solution(path) -> TransportSolution:
    """Read back a solution written by export_solution."""
    meta = {}
    plan = []
    maps = {label: {} for label, attr in _KIND_LABELS[1:]}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = []
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = float(value)
            else:
                rows.append(line)
        reader = csv.reader(rows)
        header = next(reader, None)
        if header != ["kind", "source_index", "target_index", "mass"]:
            raise DataError(f"{path}: not a transport solution CSV")
        for row in reader:
            kind, src, tgt, mass = row
            if kind == "arc":
                plan.append((int(src), int(tgt), float(mass)))
            elif kind in maps:
                maps[kind][int(src)] = float(mass)
            else:
                raise DataError(f"{path}: unknown row kind {kind!r}")
    return TransportSolution(
        plan_arcs=tuple(plan),
        alloc_add_src=maps["add_src"],
        alloc_remove_src=maps["rem_src"],
        alloc_add_tgt=maps["add_tgt"],
        alloc_remove_tgt=maps["rem_tgt"],
        objective=meta.get("objective", 0.0),
        delta=meta.get("delta", 0.0),
        mass_per_unit=meta.get("mass_per_unit", 1.0),
    )

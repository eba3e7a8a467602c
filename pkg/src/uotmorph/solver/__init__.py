from .api import (
    export_solution,
    load_solution,
    solve_balanced,
    solve_unbalanced,
    uot_distance,
)
from .multiscale import solve_multiscale
from .specs import (
    AllocationSpec,
    CostSpec,
    QuantizationSpec,
    TransportSolution,
    feasibility_violation_units,
    quantize_to_total,
)

__all__ = [
    "AllocationSpec",
    "CostSpec",
    "QuantizationSpec",
    "TransportSolution",
    "export_solution",
    "feasibility_violation_units",
    "load_solution",
    "quantize_to_total",
    "solve_balanced",
    "solve_multiscale",
    "solve_unbalanced",
    "uot_distance",
]

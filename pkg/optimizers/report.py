"""
Result container shared by the optimizers
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List

from physics.propagate import PulseSet


@dataclass
class OptimizationReport:
    """Outcome of one optimization run

    The trace holds one cost per accepted iterate (GRAPE) or the best cost so
    far after every objective evaluation (CRAB, dCRAB, Nelder-Mead timing).
    """

    method: str
    trace: List[float]
    final_pulses: PulseSet
    final_cost: float
    stop_reason: str
    iterations: int = 0
    evaluations: int = 0
    seeds: List[int] = field(default_factory=list)
    details: Dict[str, Any] = field(default_factory=dict)

    def pulses_dict(self) -> Dict[str, Any]:
        return {
            "t_final": float(self.final_pulses.t_final),
            "n_slices": int(self.final_pulses.n_slices),
            "amplitudes": [[float(v) for v in row] for row in self.final_pulses.amplitudes],
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "trace": [float(c) for c in self.trace],
            "final_cost": float(self.final_cost),
            "stop_reason": self.stop_reason,
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "seeds": [int(s) for s in self.seeds],
            "details": self.details,
            "final_pulses": self.pulses_dict(),
        }

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return [_jsonable(v) for v in obj.tolist()]
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


@dataclass
class EstimationReport:
    """Output of one estimator run.

    Exactly one of ``B`` (single estimate) and ``candidates`` is set.
    """

    method: str
    B: np.ndarray | None = None
    candidates: list[np.ndarray] | None = None
    C: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    seed: int | None = None
    wall_ms: float = 0.0

    def __post_init__(self):
        if (self.B is None) == (self.candidates is None):
            raise ValueError("exactly one of B and candidates must be given")

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "method": self.method,
                "B": self.B,
                "candidates": self.candidates,
                "C": self.C,
                "diagnostics": self.diagnostics,
                "seed": self.seed,
                "wall_ms": self.wall_ms,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

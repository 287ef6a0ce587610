"""Result container shared by the optimization routines."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    a: np.ndarray
    status: str
    trajectory: list = field(default_factory=list)
    rates: np.ndarray | None = None
    power_w: float = float("nan")
    active_res: int = 0
    iterations: int = 0
    outer_iters: int = 0
    feasible: bool = True
    info: dict = field(default_factory=dict)

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rates)) if self.rates is not None else float("nan")

    def to_dict(self) -> dict:
        a = np.asarray(self.a, complex)
        inter = np.empty(2 * a.size)
        inter[0::2] = a.real
        inter[1::2] = a.imag
        return {
            "status": self.status,
            "feasible": bool(self.feasible),
            "a": inter.tolist(),
            "trajectory": [float(v) for v in self.trajectory],
            "rates": None if self.rates is None else [float(r) for r in self.rates],
            "sum_rate": self.sum_rate,
            "power_w": float(self.power_w),
            "active_res": int(self.active_res),
            "iterations": int(self.iterations),
            "outer_iters": int(self.outer_iters),
            "info": _jsonable(self.info),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        inter = np.asarray(d["a"], float)
        return cls(a=inter[0::2] + 1j * inter[1::2], status=d["status"],
                   trajectory=list(d["trajectory"]),
                   rates=None if d["rates"] is None else np.asarray(d["rates"]),
                   power_w=d["power_w"], active_res=d["active_res"],
                   iterations=d["iterations"], outer_iters=d["outer_iters"],
                   feasible=d["feasible"], info=d.get("info", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["Trajectory"]


@dataclass
class Trajectory:
    """Time-stamped snapshots plus one diagnostics record per step.

    ``records[k]`` describes the state after step ``k`` (``k = 0`` is the
    initial datum). Snapshots are kept every ``stride`` steps and always for
    the first and last step.
    """

    tau: float
    scheme: str
    stride: int = 1
    steps: list[int] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    u: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray | None] = field(default_factory=list)
    mu: list[np.ndarray | None] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    notices: list[str] = field(default_factory=list)
    complete: bool = False
    problem: Any = None

    def add_snapshot(self, step: int, t: float, u, v=None, mu=None) -> None:
        if self.steps and self.steps[-1] == step:
            self.u[-1], self.v[-1], self.mu[-1] = np.array(u), _copy(v), _copy(mu)
            return
        self.steps.append(step)
        self.times.append(t)
        self.u.append(np.array(u, dtype=float))
        self.v.append(_copy(v))
        self.mu.append(_copy(mu))

    def wants_snapshot(self, step: int, last: int) -> bool:
        return step % self.stride == 0 or step == last

    @property
    def n_steps(self) -> int:
        return len(self.records) - 1

    @property
    def initial(self) -> np.ndarray:
        return self.u[0]

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]

    @property
    def final_time(self) -> float:
        return self.records[-1]["t"] if self.records else 0.0

    def series(self, key: str) -> np.ndarray:
        return np.array([np.nan if r.get(key) is None else r[key] for r in self.records], dtype=float)

    def snapshot_at(self, step: int) -> np.ndarray:
        return self.u[self.steps.index(step)]


def _copy(a):
    return None if a is None else np.array(a, dtype=float)

"""Per-iteration run records shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field


class DivergenceError(RuntimeError):
    """Raised when an iteration blows up (norm growth beyond the guard)."""


@dataclass
class RunTrace:
    """Column-oriented record of a solver run.

    ``columns`` maps a name (e.g. ``residual``) to the per-iteration list;
    all columns grow in lockstep via :meth:`append`.
    """

    columns: dict[str, list[float]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def append(self, **values: float) -> None:
        for name, value in values.items():
            self.columns.setdefault(name, []).append(float(value))

    def last(self, name: str) -> float:
        return self.columns[name][-1]

    def __len__(self) -> int:
        if not self.columns:
            return 0
        return max(len(c) for c in self.columns.values())

    @property
    def iterations(self) -> int:
        return len(self)

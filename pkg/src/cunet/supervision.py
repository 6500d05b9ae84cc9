"""Placement of supervised heads along the cascade and the joint loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .tensor import Tensor, add, mse_loss, scale

__all__ = ["SupervisionPlan", "place_supervisions", "total_loss"]


@dataclass(frozen=True)
class SupervisionPlan:
    """Which U-Nets (1-based indices) carry a supervised head.

    The final U-Net is always included; the remaining heads divide the
    cascade as evenly as integer arithmetic allows, so consecutive gaps
    (measured from 0) differ by at most one.
    """

    count: int
    total_units: int
    indices: tuple[int, ...]

    def gaps(self) -> tuple[int, ...]:
        prev = 0
        out = []
        for i in self.indices:
            out.append(i - prev)
            prev = i
        return tuple(out)


def place_supervisions(count: int, total_units: int) -> SupervisionPlan:
    """Spread `count` heads over `total_units` U-Nets: ceil(k*U/S) for k=1..S."""
    if not 1 <= count <= total_units:
        raise ValueError(f"place_supervisions: need 1 <= count <= total_units, "
                         f"got count={count} total_units={total_units}")
    indices = tuple(-(-k * total_units // count) for k in range(1, count + 1))
    return SupervisionPlan(count=count, total_units=total_units, indices=indices)


def total_loss(head_outputs: Sequence[Tensor], target: Tensor) -> Tensor:
    """Arithmetic mean of per-head MSE against the shared target heatmaps."""
    heads = list(head_outputs)
    if not heads:
        raise ValueError("total_loss: no head outputs")
    acc = mse_loss(heads[0], target)
    for h in heads[1:]:
        acc = add(acc, mse_loss(h, target))
    return scale(acc, 1.0 / len(heads))

"""Per-position mean / standard deviation of the GRU candidate-gate summed inputs.

This mirrors a table of hidden-to-hidden statistics per token position.  The
probe here is an analogue: the candidate gate's summed input after
normalization (``pre_gain``) or after normalization and gain (``post_gain``);
for an unnormalized cell both are the raw summed input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..nets.gru import GruModel, gru_forward

PROBE = "GRU candidate-gate summed input (analogue of a decoder hidden-to-hidden mapping)"
STAGES = ("pre_gain", "post_gain")


@dataclass
class StatsTable:
    stage: str
    mean: list  # M per position 1..T
    std: list  # S per position 1..T
    all_mean: float  # pooled over every position
    all_std: float
    probe: str = PROBE

    @property
    def positions(self) -> int:
        return len(self.mean)

    def s_spread(self) -> float:
        """``(max S - min S) / mean S`` across positions."""
        s = np.asarray(self.std)
        return float((s.max() - s.min()) / s.mean())

    def rms_identity_error(self) -> float:
        """``max |sqrt(M^2 + S^2) - 1|`` over positions."""
        m, s = np.asarray(self.mean), np.asarray(self.std)
        return float(np.max(np.abs(np.sqrt(m * m + s * s) - 1.0)))

    def to_dict(self) -> dict:
        return {"probe": self.probe, "stage": self.stage,
                "positions": list(range(1, self.positions + 1)),
                "M": list(self.mean), "S": list(self.std),
                "ALL": {"M": self.all_mean, "S": self.all_std}}

    def format(self, label: str = "") -> str:
        head = f"{label or self.stage:<12}" + "".join(f"{i:>8}" for i in range(1, self.positions + 1)) \
            + f"{'ALL':>8}"
        m_row = f"{'  M':<12}" + "".join(f"{v:8.3f}" for v in self.mean) + f"{self.all_mean:8.3f}"
        s_row = f"{'  S':<12}" + "".join(f"{v:8.3f}" for v in self.std) + f"{self.all_std:8.3f}"
        return "\n".join([head, m_row, s_row])


def collect_stats(model: GruModel, dataset, positions: Optional[int] = None,
                  stage: str = "pre_gain") -> StatsTable:
    """M and S of the probe at each of the first ``positions`` steps over ``dataset``.

    Every element of every case at a position contributes to that
    position's statistics (biased std); ALL pools all positions.
    """
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    if not isinstance(model, GruModel):
        raise TypeError("statistics are collected from a GRU model")
    inputs = dataset.inputs if hasattr(dataset, "inputs") else np.asarray(dataset)
    if len(inputs) == 0:
        raise ValueError("empty dataset")
    _, caches = gru_forward(model.cell, inputs)
    T = len(caches) if positions is None else int(positions)
    if not 1 <= T <= len(caches):
        raise ValueError(f"positions must be in [1, {len(caches)}]")
    attr = "cand_pre_gain" if stage == "pre_gain" else "cand_post_gain"
    values = np.stack([getattr(c, attr) for c in caches[:T]])  # (T, B, n)
    flat = values.reshape(T, -1)
    return StatsTable(stage, flat.mean(axis=1).tolist(), flat.std(axis=1).tolist(),
                      float(flat.mean()), float(flat.std()))


def collect_stats_pair(model: GruModel, dataset, positions: Optional[int] = None) -> dict:
    return {stage: collect_stats(model, dataset, positions, stage) for stage in STAGES}

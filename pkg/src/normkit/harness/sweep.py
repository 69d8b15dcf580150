"""Partial-ratio sweep and shifted-initialization robustness probe."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..normalizers import NormalizerKind
from .train import RunConfig, RunReport, train

SWEEP_P = (0.0625, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def p_sweep(config: RunConfig, p_values=SWEEP_P, seed: Optional[int] = None) -> list:
    """One pRMSNorm run per ``p``, all sharing ``seed`` (default: the config's first seed)."""
    p_values = [float(p) for p in p_values]
    for p in p_values:
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {p}")
    seed = config.seeds[0] if seed is None else int(seed)
    eps = config.normalizer.epsilon if config.normalizer is not None else None
    reports = []
    for p in p_values:
        kind = NormalizerKind.prmsnorm(p) if eps is None else NormalizerKind.prmsnorm(p, epsilon=eps)
        reports.append(train(config.replace(normalizer=kind, label=kind.label), seed))
    return reports


def loss_band(reports: list) -> float:
    """``(max - min) / min`` of final training loss over the non-diverged runs."""
    losses = [r.final_train_loss for r in reports if not r.diverged]
    if not losses:
        return float("nan")
    return float((max(losses) - min(losses)) / min(losses))


def sweep_table(reports: list) -> str:
    lines = [f"{'run':<24}{'k':>4}{'final loss':>12}  diverged"]
    for r in reports:
        k = r.config.normalizer.partial_size(r.config.model.hidden) if r.config.normalizer else "-"
        lines.append(f"{r.label:<24}{k:>4}{r.final_train_loss:12.5f}  {r.diverged}")
    lines.append(f"band over converged runs: {loss_band(reports):.2%}")
    return "\n".join(lines)


@dataclass
class RobustnessResult:
    init_center: float
    layernorm: RunReport
    rmsnorm: RunReport
    control_layernorm: Optional[RunReport] = None  # same runs at init_center = 0
    control_rmsnorm: Optional[RunReport] = None

    @property
    def ok(self) -> bool:
        """RMSNorm must not diverge unless its centered control also diverged."""
        control_fine = self.control_rmsnorm is None or not self.control_rmsnorm.diverged
        return not (control_fine and self.rmsnorm.diverged)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {"init_center": self.init_center, "ok": self.ok, "runs": {}}
        for name in ("layernorm", "rmsnorm", "control_layernorm", "control_rmsnorm"):
            r = getattr(self, name)
            if r is not None:
                out["runs"][name] = r.to_dict(include_timing)
        return out


def robustness_probe(config: RunConfig, init_center: float = 0.2, seed: Optional[int] = None,
                     controls: bool = True) -> RobustnessResult:
    """Train LayerNorm and RMSNorm variants with every weight matrix's init shifted by ``init_center``."""
    seed = config.seeds[0] if seed is None else int(seed)

    def run(kind: NormalizerKind, center: float) -> RunReport:
        return train(config.replace(normalizer=kind, init_center=float(center), label=""), seed)

    ln, rms = NormalizerKind.layernorm(), NormalizerKind.rmsnorm()
    result = RobustnessResult(float(init_center), run(ln, init_center), run(rms, init_center))
    if controls:
        if init_center == 0:
            result.control_layernorm, result.control_rmsnorm = result.layernorm, result.rmsnorm
        else:
            result.control_layernorm, result.control_rmsnorm = run(ln, 0.0), run(rms, 0.0)
    return result


def median_curve(reports: list) -> list:
    """Per-step median training loss across runs that share a step grid."""
    steps = [p.step for p in reports[0].curve]
    out = []
    for i, step in enumerate(steps):
        vals = [r.curve[i].train_loss for r in reports if len(r.curve) > i and r.curve[i].step == step]
        out.append((step, float(np.median(vals))))
    return out

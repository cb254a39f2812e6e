"""
Stopping Criteria
Select the adaptation epoch from a trace: source-BPD matching, prediction
entropy, oracle Dice (evaluation only) or a fixed epoch count.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from utils.errors import ConfigError


@dataclass
class StopDecision:
    """
    Attributes:
        epoch: Selected epoch (trace epoch index, 0 = before adaptation)
        reached: False when the criterion never fired and the last epoch was taken
        stop_now: True once no later epoch can change the decision
        reason: Short human-readable explanation
    """

    epoch: int
    reached: bool
    stop_now: bool
    reason: str


def _column(trace: pd.DataFrame, name: str) -> np.ndarray:
    values = trace[name].to_numpy(dtype=np.float64)
    if np.isnan(values).any():
        raise ConfigError(f"Trace column '{name}' has missing values")
    return values


def stop_source_bpd(trace: pd.DataFrame, reference: Optional[float], tolerance: float = 0.02) -> StopDecision:
    """
    First epoch whose target BPD is within `tolerance` of the source
    reference, or the first epoch at which the BPD crosses the reference

    Never reads task-head columns.
    """
    if reference is None or not np.isfinite(reference):
        raise ConfigError("source-bpd stopping needs the source BPD reference recorded by train-flow")
    epochs = trace["epoch"].to_numpy()
    bpd = _column(trace, "bpd")
    for row, value in enumerate(bpd):
        if abs(value - reference) <= tolerance:
            return StopDecision(int(epochs[row]), True, True, f"BPD {value:.4f} within {tolerance} of {reference:.4f}")
        if row > 0 and np.sign(bpd[0] - reference) != np.sign(value - reference):
            return StopDecision(int(epochs[row]), True, True, f"BPD {value:.4f} crossed reference {reference:.4f}")
    return StopDecision(int(epochs[-1]), False, False, "source BPD reference not reached")


def stop_entropy(trace: pd.DataFrame, patience: int = 3) -> StopDecision:
    """
    Epoch of minimum mean prediction entropy, final once `patience` epochs
    pass without a new minimum
    """
    if "entropy" not in trace.columns or trace["entropy"].isna().all():
        raise ConfigError("entropy stopping needs a task head; use the source-bpd criterion instead")
    epochs = trace["epoch"].to_numpy()
    entropy = _column(trace, "entropy")
    best = 0
    for row in range(1, len(entropy)):
        if entropy[row] < entropy[best]:
            best = row
        elif row - best >= patience:
            return StopDecision(int(epochs[best]), True, True, f"entropy minimum {entropy[best]:.4f}, patience {patience}")
    return StopDecision(int(epochs[best]), len(entropy) - 1 - best >= patience, False,
                        f"entropy minimum {entropy[best]:.4f} so far")


def stop_oracle_dice(trace: pd.DataFrame) -> StopDecision:
    """Epoch of maximum Dice against target labels (evaluation upper bound only)"""
    if "dice" not in trace.columns or trace["dice"].isna().all():
        raise ConfigError("oracle-dice stopping needs target masks")
    dice = _column(trace, "dice")
    best = int(np.argmax(dice))
    return StopDecision(int(trace["epoch"].iloc[best]), True, False, f"oracle Dice maximum {dice[best]:.4f}")


def stop_fixed(trace: pd.DataFrame, epochs: int) -> StopDecision:
    """Stop after a fixed number of adaptation epochs"""
    last = int(trace["epoch"].iloc[-1])
    if last >= epochs:
        return StopDecision(epochs, True, True, f"fixed {epochs} epochs")
    return StopDecision(last, False, False, f"fixed {epochs} epochs not yet reached")

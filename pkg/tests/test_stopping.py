import numpy as np
import pandas as pd
import pytest

from adaptation.stopping import stop_entropy, stop_fixed, stop_oracle_dice, stop_source_bpd
from utils.errors import ConfigError


def _trace(bpd=None, entropy=None, dice=None):
    n = len(next(v for v in (bpd, entropy, dice) if v is not None))
    nan = [np.nan] * n
    return pd.DataFrame({
        "epoch": list(range(n)),
        "loss": [0.0] * n,
        "bpd": bpd if bpd is not None else nan,
        "entropy": entropy if entropy is not None else nan,
        "dice": dice if dice is not None else nan,
    })


def test_source_bpd_first_epoch_within_tolerance():
    trace = _trace(bpd=[1.40, 1.10, 0.95, 0.82, 0.79])
    decision = stop_source_bpd(trace, reference=0.80, tolerance=0.02)
    assert decision.epoch == 3
    assert decision.reached and decision.stop_now


def test_source_bpd_crossing_counts_as_match():
    decision = stop_source_bpd(_trace(bpd=[1.40, 1.10, 0.70]), reference=0.80, tolerance=0.02)
    assert decision.epoch == 2 and decision.reached
    assert "crossed" in decision.reason


def test_source_bpd_never_reached_takes_last_epoch():
    decision = stop_source_bpd(_trace(bpd=[1.40, 1.30, 1.20]), reference=0.80, tolerance=0.02)
    assert decision.epoch == 2
    assert not decision.reached and not decision.stop_now


def test_source_bpd_ignores_task_columns():
    trace = _trace(bpd=[1.0, 0.81])
    trace["entropy"] = [0.1, 9.0]
    trace["dice"] = [0.9, 0.1]
    assert stop_source_bpd(trace, reference=0.80).epoch == 1


def test_source_bpd_needs_reference():
    with pytest.raises(ConfigError):
        stop_source_bpd(_trace(bpd=[1.0]), reference=None)


def test_entropy_minimum_with_patience():
    trace = _trace(entropy=[0.9, 0.7, 0.5, 0.6, 0.55, 0.65, 0.4])
    decision = stop_entropy(trace, patience=3)
    assert decision.epoch == 2
    assert decision.reached and decision.stop_now


def test_entropy_still_improving():
    decision = stop_entropy(_trace(entropy=[0.9, 0.8, 0.7]), patience=3)
    assert decision.epoch == 2
    assert not decision.reached and not decision.stop_now


def test_entropy_needs_task_head():
    with pytest.raises(ConfigError):
        stop_entropy(_trace(bpd=[1.0, 0.9]))


def test_oracle_dice_takes_maximum():
    assert stop_oracle_dice(_trace(dice=[0.5, 0.7, 0.65, 0.72, 0.6])).epoch == 3


def test_oracle_dice_needs_masks():
    with pytest.raises(ConfigError):
        stop_oracle_dice(_trace(bpd=[1.0]))


def test_fixed_epochs():
    trace = _trace(bpd=[1.0, 0.9, 0.8])
    assert stop_fixed(trace, 0).epoch == 0
    assert stop_fixed(trace, 2).stop_now
    pending = stop_fixed(trace, 5)
    assert pending.epoch == 2 and not pending.reached

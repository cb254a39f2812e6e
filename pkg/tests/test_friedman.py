import pandas as pd
import pytest

from analysis.friedman_ranking import friedman_rank


def test_single_method_ranks_first():
    results = pd.DataFrame({"site-b": [0.7], "site-c": [0.6]}, index=["baseline"])
    assert friedman_rank(results)["baseline"] == 1.0


def test_dominating_method():
    results = pd.DataFrame({"s1": [0.9, 0.5], "s2": [0.8, 0.4]}, index=["flows", "baseline"])
    ranks = friedman_rank(results)
    assert ranks["flows"] == 1.0
    assert ranks["baseline"] == 2.0


def test_ties_share_average_rank():
    results = pd.DataFrame({"s1": [0.5, 0.5, 0.2]}, index=["a", "b", "c"])
    ranks = friedman_rank(results)
    assert ranks["a"] == ranks["b"] == 1.5
    assert ranks["c"] == 3.0


def test_per_setting_directions():
    results = pd.DataFrame({"dice": [0.9, 0.5], "hd95": [4.0, 2.0]}, index=["a", "b"])
    ranks = friedman_rank(results, {"dice": "higher", "hd95": "lower"})
    assert ranks["a"] == ranks["b"] == 1.5


def test_missing_score_and_bad_direction():
    with pytest.raises(ValueError, match="missing"):
        friedman_rank(pd.DataFrame({"s1": [0.5, None]}, index=["a", "b"]))
    with pytest.raises(ValueError):
        friedman_rank(pd.DataFrame({"s1": [0.5]}, index=["a"]), "sideways")

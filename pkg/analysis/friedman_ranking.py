"""
Friedman Ranking
Average rank of each method across evaluation settings (lower is better)
"""

from typing import Dict, Union

import numpy as np
import pandas as pd
from scipy.stats import rankdata


def friedman_rank(results: pd.DataFrame, directions: Union[str, Dict[str, str]] = "higher") -> pd.Series:
    """
    Rank methods per setting and average the ranks

    Args:
        results: Methods as rows, settings as columns
        directions: 'higher' or 'lower' (better), globally or per setting column

    Returns:
        Series of average ranks indexed by method, ties sharing the average rank
    """
    if results.isna().any().any():
        missing = [(m, s) for m in results.index for s in results.columns if pd.isna(results.loc[m, s])]
        raise ValueError(f"Every method needs a score in every setting; missing {missing}")
    ranks = pd.DataFrame(index=results.index, dtype=np.float64)
    for setting in results.columns:
        direction = directions if isinstance(directions, str) else directions[setting]
        if direction not in ("higher", "lower"):
            raise ValueError(f"Direction must be 'higher' or 'lower', got {direction}")
        values = results[setting].to_numpy(dtype=np.float64)
        ranks[setting] = rankdata(-values if direction == "higher" else values, method="average")
    return ranks.mean(axis=1).rename("friedman_rank")

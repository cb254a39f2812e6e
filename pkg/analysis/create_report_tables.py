"""
Report Table Generator

Builds the harmonization comparison table (Dice / HD95 / WD per method and
target site) with a Friedman rank footer, from a run's evaluation records.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from analysis.friedman_ranking import friedman_rank

METHOD_ORDER = ["baseline", "hist-match", "pretrained-harmonizer", "harmonizing-flows", "source-oracle"]
METRIC_COLUMNS = ["dice", "hd95", "wd"]
METRIC_DIRECTIONS = {"dice": "higher", "hd95": "lower", "wd": "lower"}
RANKED_EXCLUDE = ("source-oracle",)

FLOAT_FORMAT = "%.17g"


def save_table(table: pd.DataFrame, path: str) -> str:
    """Write a table as CSV with 17 significant digits"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def build_metric_table(records: Sequence[Dict]) -> pd.DataFrame:
    """
    One row per (method, target) with Dice / HD95 / WD columns

    Args:
        records: Dicts with method, target and metric values
    """
    table = pd.DataFrame(list(records))
    missing = [c for c in ["method", "target", *METRIC_COLUMNS] if c not in table.columns]
    if missing:
        raise ValueError(f"Evaluation records lack columns: {missing}")
    order = {name: index for index, name in enumerate(METHOD_ORDER)}
    table["_order"] = table["method"].map(lambda m: order.get(m, len(order)))
    table = table.sort_values(["_order", "method", "target"], kind="mergesort").drop(columns="_order")
    return table.reset_index(drop=True)


def friedman_footer(table: pd.DataFrame) -> pd.Series:
    """
    Average rank of every ranked method over all (target, metric) settings

    Settings where some method has no value (e.g. HD95 with every class
    missing) are skipped.
    """
    ranked = table[~table["method"].isin(RANKED_EXCLUDE)]
    if ranked.empty:
        return pd.Series(dtype=np.float64, name="friedman_rank")
    columns: Dict[str, pd.Series] = {}
    directions: Dict[str, str] = {}
    for metric in METRIC_COLUMNS:
        wide = ranked.pivot(index="method", columns="target", values=metric)
        for target in wide.columns:
            setting = f"{target}:{metric}"
            if wide[target].isna().any():
                continue
            columns[setting] = wide[target]
            directions[setting] = METRIC_DIRECTIONS[metric]
    if not columns:
        return pd.Series(dtype=np.float64, name="friedman_rank")
    ranks = friedman_rank(pd.DataFrame(columns), directions)
    present = [m for m in METHOD_ORDER if m in ranks.index] + [m for m in ranks.index if m not in METHOD_ORDER]
    return ranks.loc[present]


def with_footer(table: pd.DataFrame) -> pd.DataFrame:
    """Metric table with each method's Friedman rank attached"""
    ranks = friedman_footer(table)
    result = table.copy()
    result["friedman_rank"] = result["method"].map(ranks.to_dict())
    return result


def print_table(table: pd.DataFrame, title: str):
    print("\n" + "=" * 80)
    print(title)
    print("=" * 80)
    print("\n" + table.to_string(index=False))


def main(argv: List[str] = None):
    parser = argparse.ArgumentParser(description="Build harmonization report tables from a run directory")
    parser.add_argument("run_dir", help="Run output directory (contains metrics/evaluation.csv)")
    args = parser.parse_args(argv)

    print("=" * 80)
    print("📊 REPORT TABLE GENERATOR")
    print("=" * 80)

    source = os.path.join(args.run_dir, "metrics", "evaluation.csv")
    if not os.path.exists(source):
        print(f"❌ No evaluation records at {source}! Run the evaluate stage first.")
        return 1
    table = build_metric_table(pd.read_csv(source).to_dict("records"))
    print(f"✅ Found {len(table)} evaluation rows")

    final = with_footer(table)
    print_table(final, "TABLE 1: SEGMENTATION AND HISTOGRAM METRICS")
    ranks = friedman_footer(table)
    print_table(ranks.reset_index().rename(columns={"index": "method"}), "FRIEDMAN RANK (lower is better)")

    path = save_table(final, os.path.join(args.run_dir, "metrics", "metric_table.csv"))
    print(f"\n✅ Saved to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Module for writing result tables in CSV or JSON format.
"""

import csv
import json
import os
import sys
from typing import Dict, List, TextIO, Union

import pandas as pd

from decision_tsp.exceptions import DataError
from decision_tsp.oracles import CalibrationResult

TableData = Union[pd.DataFrame, Dict, List[Dict]]


class OutputFormatter:
    """
    Class for formatting result tables into CSV or JSON formats.
    """

    @staticmethod
    def to_records(data: TableData) -> List[Dict]:
        """
        Normalize a table to a list of flat row dictionaries.

        Nested dicts and lists are serialized as JSON strings; missing
        numbers become None.
        """
        if isinstance(data, pd.DataFrame):
            frame = data.astype(object).where(data.notna(), None)
            rows = frame.to_dict(orient="records")
        elif isinstance(data, dict):
            rows = [data]
        else:
            rows = list(data)

        flattened = []
        for item in rows:
            flat_item = {}
            for key, value in item.items():
                if isinstance(value, (dict, list, tuple)):
                    flat_item[key] = json.dumps(value)
                else:
                    flat_item[key] = value
            flattened.append(flat_item)
        return flattened

    @staticmethod
    def to_csv(data: TableData, output: TextIO = sys.stdout) -> None:
        """
        Format data as CSV and write to the specified output.

        Args:
            data: DataFrame, dict or list of dicts.
            output: Output file or sys.stdout.
        """
        if isinstance(data, pd.DataFrame):
            frame = data
        else:
            rows = OutputFormatter.to_records(data)
            if not rows:
                return
            frame = pd.DataFrame(rows)
        frame.to_csv(output, index=False, quoting=csv.QUOTE_NONNUMERIC)

    @staticmethod
    def to_json(data: TableData, output: TextIO = sys.stdout) -> None:
        """
        Format data as JSON and write to the specified output.

        Args:
            data: DataFrame, dict or list of dicts.
            output: Output file or sys.stdout.
        """
        if isinstance(data, pd.DataFrame):
            data = OutputFormatter.to_records(data)
        json.dump(data, output, indent=2)

    @staticmethod
    def table_path(output_dir: str, protocol: str, seed: int, output_format: str = "csv") -> str:
        """File name encoding the protocol and seed, e.g. curve_seed0.csv."""
        return os.path.join(output_dir, f"{protocol}_seed{seed}.{output_format}")

    @staticmethod
    def write_table(data: TableData, path: str, output_format: str = "csv") -> str:
        try:
            with open(path, "w", newline="") as f:
                if output_format == "csv":
                    OutputFormatter.to_csv(data, f)
                else:
                    OutputFormatter.to_json(data, f)
        except OSError as e:
            raise DataError(f"cannot write table: {e}", path) from e
        return path

    @staticmethod
    def summarize_excess(frame: pd.DataFrame, methods: List[str]) -> List[Dict]:
        """
        Mean and worst relative excess per heuristic, plus how often SA beats NN.

        Args:
            frame: Per-instance table from heuristic_excess.
            methods: Heuristic names; columns '<name>_cost' and '<name>_excess' must exist.

        Returns:
            One row per method.
        """
        rows = []
        for method in methods:
            excess = frame[f"{method}_excess"]
            row = {
                "method": method,
                "mean_excess": float(excess.mean()),
                "max_excess": float(excess.max()),
                "count": int(excess.size),
            }
            if method != "nn" and "nn_cost" in frame:
                row["not_worse_than_nn"] = float((frame[f"{method}_cost"] <= frame["nn_cost"] + 1e-12).mean())
            rows.append(row)
        return rows

    @staticmethod
    def format_calibration(result: CalibrationResult) -> Dict:
        return {
            "params": result.params.to_dict(),
            "mean_excess": result.mean_excess,
            "default_excess": result.default_excess,
            "trials": [{"params": params.to_dict(), "mean_excess": score} for params, score in result.trials],
        }

"""
Module for data IO functionality: JSON and CSV result files, run checkpoints and the Delta run-history tables.
"""
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from deltalake import DeltaTable, write_deltalake
from deltalake.exceptions import TableNotFoundError

from dcasim.globals import *

logger = logging.getLogger(__name__)


def _round_significant(value):
    if isinstance(value, dict):
        return {str(key): _round_significant(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_significant(item) for item in value]
    if isinstance(value, np.ndarray):
        return _round_significant(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not np.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    return value


def write_json(data: dict, path: str | Path) -> Path:
    """Writes a JSON document with floats rounded to the output precision and sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_round_significant(data), f, indent=2, sort_keys=True)
    logger.info(f"Wrote {path}")
    return path


def read_json(path: str | Path) -> dict:
    with open(path) as f:
        return json.load(f)


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    """Writes a table with floats at the output precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path} ({len(df)} rows)")
    return path


class CheckpointStore:
    """
    Versioned JSON checkpoint of a multiscale run: the committed macro displacement and the committed state of every
    micro model.

    Attributes:
        path (Path): checkpoint file.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.is_file()

    def save(self, step: int, load_factor: float, macro: dict, micro: list[dict]) -> None:
        document = {"version": CHECKPOINT_VERSION, STEP_STR: step, LOAD_FACTOR_STR: load_factor, "macro": macro,
                    "micro": micro}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp_path, "w") as f:
            json.dump(document, f)
        tmp_path.replace(self.path)
        logger.info(f"Checkpoint written at step {step} (load factor {load_factor:.6g})")

    def load(self) -> dict:
        document = read_json(self.path)
        if document.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {document.get('version')} in {self.path}, expected "
                             f"{CHECKPOINT_VERSION}")
        return document


class DeltaWriter:
    """
    A backend class for writing and managing the Delta Lake run-history tables of a run directory.

    Attributes:
        base_path (Path): the root directory of the delta tables.
        storage_options (dict): storage options passed to deltalake.
    """

    def __init__(self, base_path: str | Path, storage_options: Optional[dict] = None):
        """Initializes a new DeltaWriter instance, creating the directory given by base_path if it doesn't exist.

        Args:
            base_path (str | Path): the root directory of the delta tables.
            storage_options (Optional[dict], optional): deltalake storage options. Defaults to None.
        """
        self.base_path = Path(base_path)
        self.storage_options = storage_options or {}
        self.base_path.mkdir(parents=True, exist_ok=True)

    def _get_table_path(self, table_name: str) -> str:
        return str(self.base_path / table_name)

    def write_table(self, df: pd.DataFrame, table_name: str, mode: str = "overwrite",
                    merge_keys: Optional[list[str]] = None) -> None:
        """Writes history rows into a table. Merging on the step keys lets a resumed run rewrite the steps it repeats.

        Args:
            df (pd.DataFrame): rows to write.
            table_name (str): table directory under the history root.
            mode (str, optional): append | overwrite | merge. Defaults to "overwrite".
            merge_keys (Optional[list[str]], optional): key columns of merge mode, e.g. ["step"]. Defaults to None.
        """
        if mode not in ("append", "overwrite", "merge"):
            raise ValueError(f"Unknown write mode '{mode}'")
        path = self._get_table_path(table_name)

        if mode != "merge":
            write_deltalake(path, df, mode=mode, storage_options=self.storage_options)
            logger.info(f"Wrote {len(df)} rows to history table '{table_name}' ({mode})")
            return
        if not merge_keys:
            raise ValueError("Merge mode requires merge_keys")
        self._merge_table(df, path, merge_keys)

    def _merge_table(self, df: pd.DataFrame, table_path: str, merge_keys: list[str]) -> None:
        """Rows of df replace stored rows with equal keys; the result is sorted by the keys."""
        try:
            stored = DeltaTable(table_path, storage_options=self.storage_options).to_pandas()
        except TableNotFoundError:
            write_deltalake(table_path, df, mode="overwrite", storage_options=self.storage_options)
            logger.info(f"Started history table at {table_path}")
            return
        merged = (pd.concat([stored, df])
                  .drop_duplicates(subset=merge_keys, keep="last")
                  .sort_values(merge_keys)
                  .reset_index(drop=True))
        write_deltalake(table_path, merged, mode="overwrite", storage_options=self.storage_options)
        logger.info(f"Merged {len(df)} rows into {table_path}, {len(merged)} rows total")

    def read_table(self, table_name: str) -> pd.DataFrame:
        table = DeltaTable(self._get_table_path(table_name), storage_options=self.storage_options)
        return table.to_pandas()

    def table_exists(self, table_name: str) -> bool:
        try:
            DeltaTable(self._get_table_path(table_name), storage_options=self.storage_options)
        except TableNotFoundError:
            return False
        return True

"""CSV dumps of models, solver runs and game trajectories."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from app.model import NetworkModel, sinr_matrix, user_ees

FLOAT_FORMAT = "%.12g"
EXACT_FLOAT_FORMAT = "%.17g"
MODEL_COLUMNS = ["field", "user", "interferer", "block", "value"]
TRAJECTORY_COLUMNS = ["iteration", "user", "block", "power_w", "sinr", "ee_bit_per_joule"]

_PER_LINK = ("alpha", "phi", "noise")
_PER_USER = ("p_max", "p_circuit", "rate_target", "weight")


def write_frame(frame: pd.DataFrame, path: Union[str, Path], float_format: str = FLOAT_FORMAT) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    return path


def model_to_frame(model: NetworkModel) -> pd.DataFrame:
    """Long-format dump: one row per coefficient, -1 where an index does not apply."""
    rows: List[tuple] = [("bandwidth", -1, -1, -1, model.bandwidth)]
    num_users, num_blocks = model.num_users, model.num_blocks
    for name in _PER_LINK:
        values = getattr(model, name)
        rows.extend((name, k, -1, n, float(values[k, n])) for k in range(num_users) for n in range(num_blocks))
    rows.extend(
        ("omega", k, j, n, float(model.omega[k, j, n]))
        for k in range(num_users)
        for j in range(num_users)
        if j != k
        for n in range(num_blocks)
    )
    for name in _PER_USER:
        values = getattr(model, name)
        rows.extend((name, k, -1, -1, float(values[k])) for k in range(num_users))
    return pd.DataFrame.from_records(rows, columns=MODEL_COLUMNS)


def frame_to_model(frame: pd.DataFrame) -> NetworkModel:
    missing = set(MODEL_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"model dump is missing columns {sorted(missing)}")
    alpha_rows = frame[frame["field"] == "alpha"]
    if alpha_rows.empty:
        raise ValueError("model dump has no alpha rows")
    num_users = int(alpha_rows["user"].max()) + 1
    num_blocks = int(alpha_rows["block"].max()) + 1

    arrays = {name: np.zeros((num_users, num_blocks)) for name in _PER_LINK}
    arrays["omega"] = np.zeros((num_users, num_users, num_blocks))
    vectors = {name: np.zeros(num_users) for name in _PER_USER}
    bandwidth = 1.0
    for row in frame.itertuples(index=False):
        if row.field in arrays and row.field != "omega":
            arrays[row.field][int(row.user), int(row.block)] = row.value
        elif row.field == "omega":
            arrays["omega"][int(row.user), int(row.interferer), int(row.block)] = row.value
        elif row.field in vectors:
            vectors[row.field][int(row.user)] = row.value
        elif row.field == "bandwidth":
            bandwidth = float(row.value)
        else:
            raise ValueError(f"unknown field {row.field!r} in model dump")
    return NetworkModel(bandwidth=bandwidth, **arrays, **vectors)


def dump_model_csv(model: NetworkModel, path: Union[str, Path]) -> Path:
    return write_frame(model_to_frame(model), path, float_format=EXACT_FLOAT_FORMAT)


def load_model_csv(path: Union[str, Path]) -> NetworkModel:
    return frame_to_model(pd.read_csv(path, float_precision="round_trip"))


def records_to_frame(records: Iterable[Mapping[str, object]], columns: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame.from_records(list(records), columns=list(columns))


def trajectory_frame(model: NetworkModel, trajectory: Sequence[np.ndarray]) -> pd.DataFrame:
    rows = []
    for iteration, powers in enumerate(trajectory):
        sinr = sinr_matrix(model, powers)
        ees = user_ees(model, powers)
        for k in range(model.num_users):
            for n in range(model.num_blocks):
                rows.append((iteration, k, n, float(powers[k, n]), float(sinr[k, n]), float(ees[k])))
    return pd.DataFrame.from_records(rows, columns=TRAJECTORY_COLUMNS)


def write_trajectory_csv(model: NetworkModel, trajectory: Sequence[np.ndarray], path: Union[str, Path]) -> Path:
    return write_frame(trajectory_frame(model, trajectory), path)

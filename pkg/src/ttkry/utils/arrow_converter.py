import io
from pathlib import Path
from typing import List

import pyarrow as pa  # type: ignore[import-untyped]
import pyarrow.csv as pacsv  # type: ignore[import-untyped]
import pyarrow.ipc as ipc  # type: ignore[import-untyped]

from ttkry.models.solver import ConvergenceRecord, IterationRow

HISTORY_SCHEMA = pa.schema(
    [
        ("iter", pa.int64()),
        ("resid_computed_rel", pa.float64()),
        ("resid_true_rel", pa.float64()),
        ("delta", pa.float64()),
        ("rank_krylov_max", pa.int64()),
        ("rank_solution_max", pa.int64()),
        ("wall_ms", pa.float64()),
    ]
)


def history_to_table(record: ConvergenceRecord, timings: bool = True) -> pa.Table:
    """
    Convert the per-iteration rows of a convergence record to an Arrow table.

    Args:
        record: The solver history
        timings: Keep the wall_ms column values; otherwise it is left empty

    Returns:
        pa.Table: One row per iteration with the history.csv columns
    """
    rows = record.iterations
    columns = {
        "iter": [row.iter for row in rows],
        "resid_computed_rel": [row.resid_computed_rel for row in rows],
        "resid_true_rel": [row.resid_true_rel for row in rows],
        "delta": [row.delta for row in rows],
        "rank_krylov_max": [row.rank_krylov_max for row in rows],
        "rank_solution_max": [row.rank_solution_max for row in rows],
        "wall_ms": [row.wall_ms if timings else None for row in rows],
    }
    return pa.table(columns, schema=HISTORY_SCHEMA)


def write_history_csv(record: ConvergenceRecord, path: Path, timings: bool = True) -> None:
    """Write history.csv; columns that were not computed are left empty."""
    table = history_to_table(record, timings)
    options = pacsv.WriteOptions(include_header=True, quoting_style="none")
    pacsv.write_csv(table, str(path), write_options=options)


def history_to_arrow(record: ConvergenceRecord) -> bytes:
    """
    Convert the history to Arrow IPC bytes for batch post-processing.

    Args:
        record: The solver history

    Returns:
        bytes: Arrow IPC file format data
    """
    table = history_to_table(record)
    sink = pa.BufferOutputStream()
    with ipc.new_file(sink, table.schema) as writer:
        writer.write_table(table)
    return bytes(sink.getvalue().to_pybytes())


def arrow_to_history(arrow_data: bytes) -> List[IterationRow]:
    """
    Convert Arrow IPC bytes back to iteration rows.

    Args:
        arrow_data: Arrow IPC format data

    Returns:
        List[IterationRow]: The rows in file order
    """
    table = ipc.open_file(io.BytesIO(arrow_data)).read_all()
    return [IterationRow(**row) for row in table.to_pylist()]


def read_history_csv(path: Path) -> pa.Table:
    convert = pacsv.ConvertOptions(column_types=HISTORY_SCHEMA)
    return pacsv.read_csv(str(path), convert_options=convert)

from .arrow_converter import history_to_arrow, write_history_csv
from .tt_format import read_tt, write_tt

__all__ = ["history_to_arrow", "read_tt", "write_history_csv", "write_tt"]

from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd


def derive_seed(base: int, index: int) -> int:
    """Independent child seed number ``index`` of ``base``."""
    sequence = np.random.SeedSequence(entropy=base, spawn_key=(index,))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def rows_to_csv_buffer(rows: list[dict]) -> StringIO:
    buffer = StringIO()
    pd.DataFrame(rows).to_csv(buffer, index=False, lineterminator="\n")
    buffer.seek(0)
    return buffer


def write_csv(rows: list[dict], path: Path) -> None:
    path.write_text(rows_to_csv_buffer(rows).getvalue())

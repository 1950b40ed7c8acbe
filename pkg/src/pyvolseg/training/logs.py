import csv
import logging
import math
from pathlib import Path
from typing import Any

from pyvolseg.errors import DivergedLoss, IoFailure

LOGGER = logging.getLogger(__name__)


class MetricsLog:
    """Append-only per-epoch CSV; rows are flushed as soon as they are written."""

    def __init__(self, path: Path, columns: list[str]):
        self.path = Path(path)
        self.columns = columns
        self.rows = 0
        try:
            self._file = self.path.open("w", newline="")
        except OSError as exc:
            raise IoFailure(f"Cannot create metrics log {path}: {exc}") from exc
        self._writer = csv.DictWriter(self._file, fieldnames=columns, lineterminator="\n")
        self._writer.writeheader()

    def append(self, row: dict[str, Any]) -> None:
        for key, value in row.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise DivergedLoss(f"Metric {key} is not finite ({value})")
        self._writer.writerow({key: _format(value) for key, value in row.items()})
        self._file.flush()
        self.rows += 1

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _format(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)

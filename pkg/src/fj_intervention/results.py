import csv
import json
import math
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
from loguru import logger


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if callable(value):
        return getattr(value, "__name__", repr(value))
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _clean(value: Any) -> Any:
    # JSON has no NaN; undefined percentages become null
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_clean(v) for v in value]
    return value


class ResultsWriter:
    """CSV traces plus one JSON summary sidecar per run, all under `out_dir`."""

    def __init__(self, out_dir: str | Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.out_dir / name
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows([_to_builtin(v) if isinstance(v, np.generic) else v for v in row] for row in rows)
        logger.info(f"Wrote {path}")
        return path

    def write_summary(self, name: str, payload: dict[str, Any]) -> Path:
        path = self.out_dir / name
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_clean(json.loads(json.dumps(payload, default=_to_builtin))), f, indent=2, sort_keys=True)
        logger.info(f"Wrote {path}")
        return path

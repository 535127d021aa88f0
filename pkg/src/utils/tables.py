"""
CSV and JSON output with a pinned dialect: comma separated, UTF-8, header row,
"." decimal point, empty cells for missing values.
"""

import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Union

import pandas as pd

from ..core.errors import IoError

PathLike = Union[str, Path]

TEXT_COLUMNS = {"id": str, "direction": str, "data_source": str, "side": str, "word_text": str}


def write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n", na_rep="")


def read_csv(path: PathLike) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=TEXT_COLUMNS, keep_default_na=False, na_values=[""])
    except FileNotFoundError as exc:
        raise IoError(str(path), "file not found") from exc
    except pd.errors.EmptyDataError as exc:
        raise IoError(str(path), "empty table") from exc
    return frame


def _clean(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _clean(value.item())
    return value


def write_json(payload: Any, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_lines(lines: Iterable[str], path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")


def read_lines(path: PathLike) -> List[str]:
    """Non-blank stripped lines."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(str(path), exc.strerror or str(exc)) from exc
    return [line.strip() for line in text.splitlines() if line.strip()]

"""
Report - Tabular experiment output.
CSV for plotting tools (provenance as `# key: value` comments), JSON for
everything else.
"""
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Union

import numpy as np
import structlog

from .errors import ParameterError

log = structlog.get_logger()

Format = Literal["csv", "json"]


def _scalar(value: Any) -> Any:
    """numpy scalars to Python, floats to 6 significant digits, NaN to None."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        if not math.isfinite(value):
            return None
        return float(f"{value:.6g}")
    return value


def _cell(value: Any) -> str:
    value = _scalar(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


@dataclass
class Table:
    columns: List[str]
    rows: List[List[Any]] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    def add(self, *values: Any) -> "Table":
        if len(values) != len(self.columns):
            raise ParameterError("row", f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(list(values))
        return self

    def extend(self, rows: Iterable[Iterable[Any]]) -> "Table":
        for row in rows:
            self.add(*row)
        return self

    def column(self, name: str) -> List[Any]:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    # =========================================================================
    # RENDERING
    # =========================================================================

    def _meta(self, timestamp: bool) -> Dict[str, Any]:
        meta = dict(self.meta)
        if timestamp:
            meta["generated"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return meta

    def to_csv(self, timestamp: bool = True) -> str:
        lines = [f"# {key}: {_cell(value)}" for key, value in self._meta(timestamp).items()]
        lines.append(",".join(self.columns))
        lines.extend(",".join(_cell(v) for v in row) for row in self.rows)
        return "\n".join(lines) + "\n"

    def to_json(self, timestamp: bool = True) -> str:
        doc = {
            "meta": {k: _scalar(v) for k, v in self._meta(timestamp).items()},
            "columns": self.columns,
            "rows": [[_scalar(v) for v in row] for row in self.rows],
        }
        return json.dumps(doc, indent=2) + "\n"

    def render(self, fmt: Format = "csv", timestamp: bool = True) -> str:
        if fmt == "csv":
            return self.to_csv(timestamp)
        if fmt == "json":
            return self.to_json(timestamp)
        raise ParameterError("format", f"unknown format {fmt!r}")


def emit(text: str, out: Optional[Union[str, Path]] = None) -> None:
    """Write rendered output to a file, or stdout when out is None."""
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("report.written", path=str(path), bytes=len(text))

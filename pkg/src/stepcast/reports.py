"""Tabular reports: deterministic CSV and aligned plain-text renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


def format_cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.4f}"
    return str(value)


@dataclass
class Report:
    name: str  # experiment id, e.g. "sweep"
    dataset: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def stem(self) -> str:
        return f"{self.name}_{self.dataset}"

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [r[k] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([format_cell(v) for v in row])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [self.columns] + [[format_cell(v) for v in r] for r in self.rows]
        widths = [max(len(r[k]) for r in cells) for k in range(len(self.columns))]

        def line(r):
            return "  ".join(c.rjust(w) if k else c.ljust(w) for k, (c, w) in enumerate(zip(r, widths))).rstrip()

        out = [f"{self.name} ({self.dataset})", line(cells[0]), "  ".join("-" * w for w in widths)]
        out += [line(r) for r in cells[1:]]
        out += [f"note: {n}" for n in self.notes]
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {"name": self.name, "dataset": self.dataset, "columns": self.columns,
                "rows": self.rows, "notes": self.notes}

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(name=d["name"], dataset=d["dataset"], columns=list(d["columns"]),
                   rows=[list(r) for r in d["rows"]], notes=list(d.get("notes", [])))

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"csv": out / f"{self.stem}.csv", "txt": out / f"{self.stem}.txt",
                 "json": out / "raw" / f"{self.stem}.json"}
        paths["json"].parent.mkdir(exist_ok=True)
        paths["csv"].write_text(self.to_csv())
        paths["txt"].write_text(self.to_text())
        paths["json"].write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return paths


def load_raw_reports(out_dir) -> list[Report]:
    raw = Path(out_dir) / "raw"
    if not raw.is_dir():
        raise FileNotFoundError(f"no stored raw results under {raw}")
    return [Report.from_dict(json.loads(p.read_text())) for p in sorted(raw.glob("*.json"))]

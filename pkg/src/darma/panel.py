"""Weekly composition panel: dated shares plus mean/precision designs.

The on-disk form is a CSV with columns ``date``, one ``y_<name>`` column per
component, ``z_raw`` and ``z_std``, plus a JSON meta sidecar
(``<stem>.meta.json``).  Floats are written with ``repr`` so a round trip is
bit exact.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInput


def standardize_train(values, train_len):
    """Standardize by the mean/sd of the first ``train_len`` entries.

    The sd guard (``sd := 1`` when nonpositive or non-finite) keeps constant
    series usable; they come back centered only.
    """
    values = np.asarray(values, dtype=np.float64)
    if not 1 <= train_len <= values.shape[0]:
        raise InvalidInput("training window must cover 1..T entries")
    train = values[:train_len]
    mean = float(train.mean())
    sd = float(train.std(ddof=1)) if train_len > 1 else 0.0
    if not np.isfinite(sd) or sd <= 0.0:
        sd = 1.0
    return (values - mean) / sd


@dataclass
class SeriesPanel:
    """Aligned weekly panel: compositions ``Y`` and the designs ``X``, ``Z``."""

    dates: list
    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    z_raw: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.ascontiguousarray(self.Y, dtype=np.float64)
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.Z = np.ascontiguousarray(self.Z, dtype=np.float64)
        self.z_raw = np.asarray(self.z_raw, dtype=np.float64)
        T = self.Y.shape[0]
        if not (len(self.dates) == self.X.shape[0] == self.Z.shape[0]
                == self.z_raw.shape[0] == T):
            raise InvalidInput("panel arrays disagree on length")

    @property
    def T(self):
        return self.Y.shape[0]

    @property
    def J(self):
        return self.Y.shape[1]

    @property
    def z_std(self):
        return self.Z[:, 1] if self.Z.shape[1] > 1 else np.zeros(self.T)

    def slice(self, start, stop):
        """Row window [start, stop) as a new panel; designs are not refit."""
        return SeriesPanel(self.dates[start:stop], self.Y[start:stop],
                           self.X[start:stop], self.Z[start:stop],
                           self.z_raw[start:stop], dict(self.meta))

    def with_train_standardization(self, train_len):
        """Rebuild the second precision column from ``z_raw`` using only the
        first ``train_len`` rows for the standardization constants."""
        if self.Z.shape[1] < 2:
            return replace(self, meta=dict(self.meta, train_len=train_len))
        z_std = standardize_train(self.z_raw, train_len)
        Z = np.column_stack([self.Z[:, 0], z_std] + [self.Z[:, k]
                            for k in range(2, self.Z.shape[1])])
        return SeriesPanel(list(self.dates), self.Y, self.X, Z, self.z_raw,
                           dict(self.meta, train_len=train_len))


def component_names(panel_or_meta, J=None):
    meta = panel_or_meta.meta if isinstance(panel_or_meta, SeriesPanel) \
        else panel_or_meta
    names = meta.get("components")
    if names is None:
        J = J if J is not None else panel_or_meta.J
        names = [str(j + 1) for j in range(J)]
    return names


def save_panel(panel, csv_path):
    """Write the panel CSV and its JSON meta sidecar; returns both paths."""
    csv_path = Path(csv_path)
    names = component_names(panel)
    header = ["date"] + [f"y_{n}" for n in names] + ["z_raw", "z_std"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        z_std = panel.z_std
        for t in range(panel.T):
            writer.writerow([panel.dates[t]]
                            + [repr(float(v)) for v in panel.Y[t]]
                            + [repr(float(panel.z_raw[t])),
                               repr(float(z_std[t]))])
    meta_path = csv_path.with_suffix(".meta.json")
    with open(meta_path, "w") as fh:
        json.dump(panel.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path


def load_panel(csv_path):
    """Read a panel CSV (plus meta sidecar when present) back into memory."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{csv_path} is empty", line=1)
        ycols = [i for i, name in enumerate(header) if name.startswith("y_")]
        if "date" not in header or not ycols:
            raise FormatError(f"{csv_path} lacks date/y_* columns", line=1)
        dcol = header.index("date")
        zraw_col = header.index("z_raw") if "z_raw" in header else None
        zstd_col = header.index("z_std") if "z_std" in header else None
        dates, rows, z_raw, z_std = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                dates.append(row[dcol])
                rows.append([float(row[i]) for i in ycols])
                z_raw.append(float(row[zraw_col]) if zraw_col is not None
                             else 0.0)
                z_std.append(float(row[zstd_col]) if zstd_col is not None
                             else 0.0)
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{csv_path}:{lineno}: {exc}", line=lineno)
    meta_path = csv_path.with_suffix(".meta.json")
    meta = {}
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
    meta.setdefault("components", [c[2:] for c in header if c.startswith("y_")])
    T = len(dates)
    Y = np.asarray(rows)
    X = np.ones((T, 1))
    r_phi = int(meta.get("r_phi", 2))
    if r_phi >= 2:
        Z = np.column_stack([np.ones(T), np.asarray(z_std)])
    else:
        Z = np.ones((T, 1))
    return SeriesPanel(dates, Y, X, Z, np.asarray(z_raw), meta)

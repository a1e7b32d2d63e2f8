"""CSV block ingestion and result writers (estimate CSV, NDJSON diagnostics)."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .blockstats import BlockError, DataBlock
from .grid import GridSpec


class IngestError(ValueError):
    pass


def _open(source):
    if hasattr(source, "read"):
        return source, False
    return open(source, newline="", encoding="utf-8"), True


def ingest(source, d: int | None = None):
    """Yield DataBlocks from a ``block,y,x1,...,xd`` CSV, one block in memory at a time.

    Rows must be grouped by block id in file order.  Errors carry the
    1-based file line number.
    """
    fh, owned = _open(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty input: header required") from None
        nx = len(header) - 2
        expected = ["block", "y"] + [f"x{j + 1}" for j in range(nx)]
        if nx < 1 or header != expected:
            raise IngestError(f"line 1: header must be {','.join(expected[:2])},x1,...,xd")
        if d is not None and nx != d:
            raise IngestError(f"line 1: expected {d} covariates, header has {nx}")
        seen = set()
        current, rows, first_line = None, [], 0
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != nx + 2:
                raise IngestError(f"line {line}: expected {nx + 2} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row[1:]]
                bid = row[0].strip()
            except ValueError:
                raise IngestError(f"line {line}: non-numeric field") from None
            if not np.all(np.isfinite(vals)):
                raise IngestError(f"line {line}: non-finite field")
            for j, v in enumerate(vals[1:]):
                if not 0.0 <= v <= 1.0:
                    raise IngestError(f"line {line}: covariate x{j + 1}={v} outside [0, 1]")
            if bid != current:
                if current is not None:
                    yield _make_block(current, rows, first_line)
                if bid in seen:
                    raise IngestError(f"line {line}: block {bid} is not contiguous")
                seen.add(bid)
                current, rows, first_line = bid, [], line
            rows.append(vals)
        if current is not None:
            yield _make_block(current, rows, first_line)
    finally:
        if owned:
            fh.close()


def _make_block(bid, rows, line):
    arr = np.array(rows)
    try:
        index = int(bid)
    except ValueError:
        index = line
    try:
        return DataBlock(index, arr[:, 1:], arr[:, 0])
    except BlockError as exc:
        raise IngestError(f"block starting at line {line}: {exc}") from None


def write_blocks(path, blocks) -> int:
    """Write blocks in the ingest CSV layout; returns the row count."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header_done = False
        for b in blocks:
            if not header_done:
                w.writerow(["block", "y"] + [f"x{j + 1}" for j in range(b.d)])
                header_done = True
            for yi, xi in zip(b.Y, b.X):
                w.writerow([b.index, repr(float(yi))] + [repr(float(v)) for v in xi])
                count += 1
    return count


def write_estimate(path, estimate, grid: GridSpec, extra_rows=()) -> None:
    """``component,node,beta,beta1`` rows plus intercept and bandwidth records."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "node", "beta", "beta1"])
        w.writerow(["intercept", "", repr(estimate.intercept), ""])
        for j in range(estimate.d):
            w.writerow([f"h{j + 1}", "", repr(float(estimate.bandwidth[j])), ""])
        for j in range(estimate.d):
            for x, b, b1 in zip(grid.nodes, estimate.components[j], estimate.beta1[j]):
                w.writerow([j + 1, repr(float(x)), repr(float(b)), repr(float(b1))])
        for row in extra_rows:
            w.writerow(row)


def read_estimate(path):
    """Inverse of :func:`write_estimate` -> (intercept, bandwidth, nodes, beta, beta1)."""
    intercept, hs, comp = None, {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            c = row["component"]
            if c == "intercept":
                intercept = float(row["beta"])
            elif c.startswith("h"):
                hs[int(c[1:])] = float(row["beta"])
            else:
                comp.setdefault(int(c), []).append(
                    (float(row["node"]), float(row["beta"]), float(row["beta1"])))
    keys = sorted(comp)
    arr = np.array([comp[k] for k in keys])
    return intercept, np.array([hs[k] for k in sorted(hs)]), arr[0, :, 0], arr[:, :, 1], arr[:, :, 2]


class NDJSONWriter:
    """Append one JSON object per line."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, default=_jsonable) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def write_rows(path, rows: list[dict]) -> None:
    """Plain CSV of a list of flat dicts (keys of the first row as header)."""
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

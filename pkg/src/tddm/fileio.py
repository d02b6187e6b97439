"""Atomic file output, round-trippable CSV tables and 8-bit binary PGM images."""
from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

from .errors import ContractError


def format_value(v) -> str:
    """Shortest round-trip text for numbers; ints stay ints."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_atomic(path, data: bytes | str):
    """Write via a temporary sibling file and rename, so readers never see a partial file."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    write_atomic(path, csv_text(header, rows))


def _parse_cell(s: str):
    if s == "":
        return s
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells parsed back to int/float."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ContractError(f"{path}: empty CSV") from None
        rows = []
        for n, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise ContractError(f"{path}:{n}: expected {len(header)} cells, got {len(raw)}")
            rows.append(dict(zip(header, (_parse_cell(c) for c in raw))))
    return header, rows


def to_uint8(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)


def pgm_bytes(img) -> bytes:
    a = to_uint8(img)
    if a.ndim != 2:
        raise ContractError("PGM images must be 2-D")
    h, w = a.shape
    return f"P5\n{w} {h}\n255\n".encode() + a.tobytes()


def write_pgm(path, img):
    """Binary 8-bit PGM from an intensity matrix in [0, 1]."""
    write_atomic(path, pgm_bytes(img))


def _tokens(data: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError("truncated PGM header")
        out.append(data[start:pos])
    return out, pos + 1


def read_pgm(path) -> np.ndarray:
    """Binary 8-bit PGM as float64 intensities in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), pos = _tokens(data, 4, 0)
    if magic != b"P5":
        raise ContractError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise ContractError(f"{path}: only 8-bit PGM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / maxval

"""Atomic file writing and deterministic serialization helpers.

Every output file is written to a temporary sibling and renamed into
place, so a crash never leaves a half-written result, and two runs with
the same content produce byte-identical files.
"""

import csv
import io
import json
import os
import tempfile

import numpy as np


def atomic_write_text(path, text):
    path = os.fspath(path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def write_json(path, obj):
    """Canonical JSON: sorted keys, 2-space indent, trailing newline."""
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    atomic_write_text(path, text + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_field(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _csv_field(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return int(value)
    return value


def complex_to_pairs(array):
    """Nested lists with complex scalars as [re, im] pairs."""
    array = np.asarray(array, dtype=complex)
    stacked = np.stack([array.real, array.imag], axis=-1)
    return stacked.tolist()


def pairs_to_complex(nested):
    stacked = np.asarray(nested, dtype=float)
    if stacked.shape[-1] != 2:
        raise ValueError("expected [re, im] pairs on the last axis")
    return stacked[..., 0] + 1j * stacked[..., 1]

"""Touchstone 1.x S-parameter file reading and writing.

Supports the classic text format: an option line ``# <freq-unit> S
<format> R <impedance>``, ``!`` comments, RI/MA/DB value formats, the
2-port column-major value order, and the 4-pairs-per-line row wrapping
used for 3+ ports.  Version 2.0 blocks and 2-port noise-parameter
sections are out of scope.  Write followed by parse reproduces values to
better than 1e-12 relative in all three formats.
"""

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import TouchstoneError
from .ioutil import atomic_write_text

_UNIT_MULTIPLIERS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_FORMATS = ("RI", "MA", "DB")


@dataclass
class TouchstoneFile:
    """One parsed n-port S-parameter file.

    ``frequency_points`` is in Hz regardless of the option-line unit;
    ``data`` is (n_freq, n_ports, n_ports) complex.
    """

    n_ports: int
    frequency_points: np.ndarray
    data: np.ndarray
    format: str = "MA"
    reference_impedance: float = 50.0

    def __post_init__(self):
        self.frequency_points = np.asarray(self.frequency_points, float)
        self.data = np.asarray(self.data, complex)
        n, f = self.n_ports, self.frequency_points.shape[0]
        if self.data.shape != (f, n, n):
            raise ValueError(f"data shape {self.data.shape} does not match "
                             f"{f} frequency points of a {n}-port network")
        if self.format not in _FORMATS:
            raise ValueError(f"format must be one of {_FORMATS}")

    @property
    def n_frequencies(self):
        return self.frequency_points.shape[0]

    def nearest(self, f0_hz):
        """(frequency Hz, n x n matrix) of the point nearest ``f0_hz``."""
        idx = int(np.argmin(np.abs(self.frequency_points - f0_hz)))
        return float(self.frequency_points[idx]), self.data[idx]


def _port_count_from_path(path):
    m = re.search(r"\.s(\d+)p$", os.fspath(path), re.IGNORECASE)
    if not m or int(m.group(1)) < 1:
        raise TouchstoneError(f"expected a .sNp extension, got "
                              f"{os.path.basename(os.fspath(path))!r}")
    return int(m.group(1))


def _parse_option_line(text, line_number):
    unit, fmt, z0 = None, None, None
    tokens = text[1:].split()
    i = 0
    while i < len(tokens):
        tok = tokens[i].lower()
        if tok in _UNIT_MULTIPLIERS:
            unit = tok
        elif tok in ("ri", "ma", "db"):
            fmt = tok.upper()
        elif tok == "s":
            pass
        elif tok in ("y", "z", "g", "h"):
            raise TouchstoneError(f"only S-parameters are supported, "
                                  f"got {tokens[i]!r}", line_number)
        elif tok == "r":
            if i + 1 >= len(tokens):
                raise TouchstoneError("option 'R' missing impedance value",
                                      line_number)
            i += 1
            try:
                z0 = float(tokens[i])
            except ValueError:
                raise TouchstoneError(f"bad impedance {tokens[i]!r}",
                                      line_number) from None
        else:
            raise TouchstoneError(f"unknown option token {tokens[i]!r}",
                                  line_number)
        i += 1
    return (unit or "ghz", fmt or "MA", 50.0 if z0 is None else z0)


def _line_schedule(n_ports):
    """Complex-pair count expected on each line of one frequency point.

    1- and 2-port points sit on a single line; larger networks start each
    matrix row on a fresh line and wrap after 4 pairs.  The first line of
    a point additionally carries the frequency.
    """
    if n_ports <= 2:
        return [n_ports * n_ports]
    per_row = []
    left = n_ports
    while left > 0:
        per_row.append(min(4, left))
        left -= 4
    return per_row * n_ports


def parse_touchstone(path):
    """Parse a Touchstone 1.x file; the extension .sNp sets the port count.

    Raises TouchstoneError (with a line number where applicable) for
    malformed option lines, wrong per-line value counts, truncated
    frequency points, or non-increasing frequencies.
    """
    n = _port_count_from_path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise TouchstoneError(str(exc)) from exc

    option = None
    numeric = []
    for line_number, raw in enumerate(lines, 1):
        text = raw.split("!", 1)[0].strip()
        if not text:
            continue
        if text.startswith("#"):
            if numeric:
                raise TouchstoneError("option line after data", line_number)
            if option is not None:
                raise TouchstoneError("duplicate option line", line_number)
            option = _parse_option_line(text, line_number)
            continue
        try:
            values = [float(tok) for tok in text.split()]
        except ValueError:
            raise TouchstoneError(f"non-numeric data in {text!r}",
                                  line_number) from None
        numeric.append((line_number, values))

    unit, fmt, z0 = option if option else ("ghz", "MA", 50.0)
    schedule = _line_schedule(n)
    freqs, freq_lines, points = [], [], []
    idx = 0
    while idx < len(numeric):
        point = []
        for j, pairs in enumerate(schedule):
            if idx >= len(numeric):
                raise TouchstoneError("file ends mid frequency point",
                                      numeric[-1][0])
            line_number, values = numeric[idx]
            idx += 1
            expected = 2 * pairs + (1 if j == 0 else 0)
            if len(values) != expected:
                raise TouchstoneError(
                    f"expected {expected} values on this line, "
                    f"got {len(values)}", line_number)
            if j == 0:
                freqs.append(values[0])
                freq_lines.append(line_number)
                values = values[1:]
            point.extend(values)
        points.append(point)
    if not points:
        raise TouchstoneError("no data lines found")
    for i in range(1, len(freqs)):
        if freqs[i] <= freqs[i - 1]:
            raise TouchstoneError("frequencies are not strictly increasing",
                                  freq_lines[i])

    raw = np.asarray(points)
    first, second = raw[:, 0::2], raw[:, 1::2]
    if fmt == "RI":
        values = first + 1j * second
    elif fmt == "MA":
        values = first * np.exp(1j * np.deg2rad(second))
    else:
        values = 10.0 ** (first / 20.0) * np.exp(1j * np.deg2rad(second))
    data = values.reshape(len(points), n, n)
    if n == 2:
        data = data.transpose(0, 2, 1)  # stored order is S11 S21 S12 S22
    frequency_hz = np.asarray(freqs) * _UNIT_MULTIPLIERS[unit]
    return TouchstoneFile(n_ports=n, frequency_points=frequency_hz,
                          data=data, format=fmt, reference_impedance=z0)


def write_touchstone(ts, path):
    """Write a TouchstoneFile; the path extension must match its port count.

    Frequencies are emitted in Hz with 16 significant digits so that a
    parse of the written file reproduces the values to 1e-12 relative.
    """
    n = _port_count_from_path(path)
    if n != ts.n_ports:
        raise TouchstoneError(f"path implies {n} ports but data has "
                              f"{ts.n_ports}")
    mats = ts.data
    if n == 2:
        mats = mats.transpose(0, 2, 1)
    flat = mats.reshape(ts.n_frequencies, n * n)
    if ts.format == "RI":
        first, second = flat.real, flat.imag
    elif ts.format == "MA":
        first, second = np.abs(flat), np.rad2deg(np.angle(flat))
    else:
        with np.errstate(divide="ignore"):
            first = 20.0 * np.log10(np.abs(flat))
        second = np.rad2deg(np.angle(flat))

    schedule = _line_schedule(n)
    z0 = ts.reference_impedance
    z0_text = f"{int(z0)}" if z0 == int(z0) else f"{z0:.15g}"
    out = [f"# HZ S {ts.format} R {z0_text}"]
    for p in range(ts.n_frequencies):
        pos = 0
        for j, pairs in enumerate(schedule):
            fields = [f"{ts.frequency_points[p]:.15e}"] if j == 0 else []
            for _ in range(pairs):
                fields.append(f"{first[p, pos]:.15e}")
                fields.append(f"{second[p, pos]:.15e}")
                pos += 1
            out.append(" ".join(fields))
    atomic_write_text(path, "\n".join(out) + "\n")

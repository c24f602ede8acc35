"""Text file formats for trials, distributions and Bell functionals, and CSV output.

Every file starts with ``#`` comment lines. Trial files need
``# bell-trials v1`` and ``# scenario: nA nB kA kB``; distribution and
functional files use ``# bell-distribution v1`` / ``# bell-functional v1``
with the same scenario line. An optional ``# settings: p00 p01 ...`` line
gives the setting distribution in row-major (i, j) order; it defaults to
uniform. Setting and outcome indices are 0-based; for CHSH the
settings usually written 1, 2 are 0, 1 here, and outcome label 0 means +1, label 1 means -1.
"""

from __future__ import annotations

import io as _io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .scenario import BellFunctional, JointDistribution, Scenario, SettingDistribution

TRIALS_MAGIC = "bell-trials v1"
DIST_MAGIC = "bell-distribution v1"
FUNCTIONAL_MAGIC = "bell-functional v1"


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<input>'}" + (f":{line}" if line else "")
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass
class Header:
    magic: str | None = None
    scenario: Scenario | None = None
    settings: SettingDistribution | None = None
    bound: float | None = None
    comments: list[str] = field(default_factory=list)


def _parse_header_line(text: str, hdr: Header, lineno: int, path):
    body = text[1:].strip()
    if body in (TRIALS_MAGIC, DIST_MAGIC, FUNCTIONAL_MAGIC):
        hdr.magic = body
    elif body.startswith("scenario:"):
        try:
            nums = [int(t) for t in body.split(":", 1)[1].split()]
            hdr.scenario = Scenario(*nums)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad scenario line ({exc})", lineno, path) from None
    elif body.startswith("settings:"):
        if hdr.scenario is None:
            raise FormatError("settings line must follow the scenario line", lineno, path)
        try:
            vals = np.array([float(t) for t in body.split(":", 1)[1].split()])
            hdr.settings = SettingDistribution(vals.reshape(hdr.scenario.settings_shape))
        except ValueError as exc:
            raise FormatError(f"bad settings line ({exc})", lineno, path) from None
    else:
        hdr.comments.append(body)


def _read_lines(source) -> tuple[list[str], str | None]:
    if isinstance(source, (str, Path)) and Path(source).exists():
        return Path(source).read_text(encoding="utf-8").splitlines(), str(source)
    if isinstance(source, (str, Path)):
        raise FileNotFoundError(str(source))
    return source.read().splitlines(), getattr(source, "name", None)


def _parse(source, magic: str, ncols: int, allow_bound: bool = False):
    lines, path = _read_lines(source)
    hdr = Header()
    rows, linenos = [], []
    for lineno, raw in enumerate(lines, 1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            if rows:
                hdr.comments.append(text[1:].strip())
                continue
            _parse_header_line(text, hdr, lineno, path)
            continue
        if allow_bound and text.startswith("B:"):
            try:
                hdr.bound = float(text[2:])
            except ValueError:
                raise FormatError("bad bound line", lineno, path) from None
            continue
        parts = text.split()
        if len(parts) != ncols:
            raise FormatError(f"expected {ncols} fields, got {len(parts)}", lineno, path)
        rows.append(parts)
        linenos.append(lineno)
    if hdr.magic != magic:
        raise FormatError(f"missing '# {magic}' header", None, path)
    if hdr.scenario is None:
        raise FormatError("missing '# scenario: nA nB kA kB' header", None, path)
    if hdr.settings is None:
        hdr.settings = SettingDistribution.uniform(hdr.scenario)
    return hdr, rows, linenos, path


def _indices(rows, linenos, scenario: Scenario, path) -> np.ndarray:
    shape = scenario.shape
    out = np.empty((len(rows), 4), dtype=np.int64)
    for k, (parts, lineno) in enumerate(zip(rows, linenos)):
        try:
            vals = [int(t) for t in parts[:4]]
        except ValueError:
            raise FormatError("setting and outcome fields must be integers", lineno, path) from None
        if any(not 0 <= v < n for v, n in zip(vals, shape)):
            raise FormatError(f"index out of range for scenario {shape}: {vals}", lineno, path)
        out[k] = vals
    return out


@dataclass
class TrialFile:
    scenario: Scenario
    setting_dist: SettingDistribution
    records: np.ndarray  # (n, 4) int array of i j a b
    comments: list[str] = field(default_factory=list)

    @property
    def indices(self) -> np.ndarray:
        if len(self.records) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.ravel_multi_index(self.records.T, self.scenario.shape)


def read_trials(source) -> TrialFile:
    hdr, rows, linenos, path = _parse(source, TRIALS_MAGIC, 4)
    recs = _indices(rows, linenos, hdr.scenario, path)
    return TrialFile(hdr.scenario, hdr.settings, recs, hdr.comments)


def _settings_line(sd: SettingDistribution) -> str:
    return "# settings: " + " ".join(repr(float(v)) for v in sd.probs.reshape(-1))


def format_trials(scenario: Scenario, setting_dist: SettingDistribution, records: np.ndarray,
                  comments: Iterable[str] = ()) -> str:
    buf = _io.StringIO()
    buf.write(f"# {TRIALS_MAGIC}\n")
    buf.write("# scenario: " + " ".join(str(v) for v in scenario.shape) + "\n")
    buf.write(_settings_line(setting_dist) + "\n")
    for c in comments:
        buf.write(f"# {c}\n")
    for i, j, a, b in np.asarray(records, dtype=np.int64).reshape(-1, 4):
        buf.write(f"{i} {j} {a} {b}\n")
    return buf.getvalue()


def write_trials(path, scenario, setting_dist, records, comments=()):
    Path(path).write_text(format_trials(scenario, setting_dist, records, comments), encoding="utf-8")


def read_distribution(source) -> JointDistribution:
    """Distribution file; cells not listed are 0. No numerical validation here."""
    hdr, rows, linenos, path = _parse(source, DIST_MAGIC, 5)
    recs = _indices(rows, linenos, hdr.scenario, path)
    probs = np.zeros(hdr.scenario.shape)
    for (i, j, a, b), parts, lineno in zip(recs, rows, linenos):
        try:
            probs[i, j, a, b] = float(parts[4])
        except ValueError:
            raise FormatError("probability must be a number", lineno, path) from None
    return JointDistribution(hdr.scenario, hdr.settings, probs)


def format_distribution(q: JointDistribution, comments: Iterable[str] = ()) -> str:
    buf = _io.StringIO()
    buf.write(f"# {DIST_MAGIC}\n")
    buf.write("# scenario: " + " ".join(str(v) for v in q.scenario.shape) + "\n")
    buf.write(_settings_line(q.setting_dist) + "\n")
    for c in comments:
        buf.write(f"# {c}\n")
    for x, (i, j, a, b) in enumerate(q.scenario.combinations()):
        buf.write(f"{i} {j} {a} {b} {fmt(q.flat[x])}\n")
    return buf.getvalue()


def write_distribution(path, q: JointDistribution, comments=()):
    Path(path).write_text(format_distribution(q, comments), encoding="utf-8")


def read_functional(source) -> BellFunctional:
    hdr, rows, linenos, path = _parse(source, FUNCTIONAL_MAGIC, 5, allow_bound=True)
    if hdr.bound is None:
        raise FormatError("missing 'B: <value>' line", None, path)
    recs = _indices(rows, linenos, hdr.scenario, path)
    values = np.zeros(hdr.scenario.shape)
    for (i, j, a, b), parts, lineno in zip(recs, rows, linenos):
        try:
            values[i, j, a, b] = float(parts[4])
        except ValueError:
            raise FormatError("functional value must be a number", lineno, path) from None
    return BellFunctional(hdr.scenario, values, hdr.bound)


def format_functional(f: BellFunctional, comments: Iterable[str] = ()) -> str:
    buf = _io.StringIO()
    buf.write(f"# {FUNCTIONAL_MAGIC}\n")
    buf.write("# scenario: " + " ".join(str(v) for v in f.scenario.shape) + "\n")
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write(f"B: {fmt(f.bound)}\n")
    for x, (i, j, a, b) in enumerate(f.scenario.combinations()):
        buf.write(f"{i} {j} {a} {b} {fmt(f.flat[x])}\n")
    return buf.getvalue()


def fmt(v) -> str:
    """17 significant digits; empty for missing values."""
    if v is None:
        return ""
    v = float(v)
    if math.isnan(v):
        return ""
    if v == 0:
        return "0"
    return f"{v:.17g}"


def format_csv(columns: Sequence[str], rows: Iterable[Sequence], header: Iterable[str] = ()) -> str:
    buf = _io.StringIO()
    buf.write(f"# bellstat {__version__}\n")
    for h in header:
        buf.write(f"# {h}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue()


def read_csv(source) -> tuple[list[str], list[str], list[list[str]]]:
    """Inverse of :func:`format_csv`: ``(header comments, columns, rows)``."""
    lines, _ = _read_lines(source)
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    cols = body[0].split(",") if body else []
    return comments, cols, [ln.split(",") for ln in body[1:]]

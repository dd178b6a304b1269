"""Dataset file formats.

Bulk data is CSV with a one-line header. Floats are written with ``repr``,
the shortest string that parses back to the identical double. Every dataset
directory carries a ``manifest.json`` with the config, seed, tool version and
a SHA-256 per file.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .counting import ClickData

QUADRATURES = "quadratures.csv"
TRACES = "traces.csv"
CLICKS = "clicks.csv"
DECAY = "decay.csv"
MANIFEST = "manifest.json"


class DatasetError(RuntimeError):
    pass


def _f(v) -> str:
    return repr(float(v))


def format_quadratures(x) -> str:
    lines = ["trial_id,x"]
    lines += [f"{i},{_f(v)}" for i, v in enumerate(np.asarray(x, dtype=float).tolist())]
    return "\n".join(lines) + "\n"


def format_traces(traces) -> str:
    traces = np.asarray(traces, dtype=float)
    header = "trial_id," + ",".join(f"h{i}" for i in range(traces.shape[1]))
    lines = [header]
    for i, row in enumerate(traces.tolist()):
        lines.append(f"{i}," + ",".join(map(repr, row)))
    return "\n".join(lines) + "\n"


def format_clicks(data: ClickData) -> str:
    """One row per heralded trial; arrival bins (10 ns) are space-separated integers."""
    lines = ["trial_id,n2,n3,bins2,bins3"]
    o2 = np.concatenate([[0], np.cumsum(data.n2)])
    o3 = np.concatenate([[0], np.cumsum(data.n3)])
    t2 = data.times2.tolist()
    t3 = data.times3.tolist()
    for i, (tid, a, b) in enumerate(zip(data.trial_id.tolist(), data.n2.tolist(), data.n3.tolist())):
        if a == 0 and b == 0:
            lines.append(f"{tid},0,0,,")
            continue
        s2 = " ".join(map(str, t2[o2[i]:o2[i + 1]]))
        s3 = " ".join(map(str, t3[o3[i]:o3[i + 1]]))
        lines.append(f"{tid},{a},{b},{s2},{s3}")
    return "\n".join(lines) + "\n"


def format_table(header, columns) -> str:
    lines = [",".join(header)]
    for row in zip(*columns):
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else _f(v) for v in row))
    return "\n".join(lines) + "\n"


def format_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def manifest(command: str, config: dict, files: dict[str, str], **extra) -> dict:
    return {
        "tool": "heraldtomo",
        "version": __version__,
        "command": command,
        "seed": config.get("seed"),
        "config": config,
        "files": {name: {"sha256": sha256(text), "bytes": len(text.encode())} for name, text in sorted(files.items())},
        **extra,
    }


def write_outputs(out_dir, files: dict[str, str]) -> None:
    """Write all ``files`` into ``out_dir`` via temp files and atomic renames.

    Nothing is renamed into place until every file has been written, so a
    failure leaves no partial outputs behind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    umask = os.umask(0)
    os.umask(umask)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out)
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="\n") as fh:
                fh.write(text)
                fh.flush()
                os.fsync(fh.fileno())
            os.chmod(tmp, 0o666 & ~umask)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _open(path: Path) -> list[str]:
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError:
        raise DatasetError(f"missing data file: {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise DatasetError(f"{path}: empty file")
    return lines


def _check_header(path, lines, expected):
    if lines[0].strip() != expected:
        raise DatasetError(f"{path}:1: unexpected header {lines[0][:60]!r}")


def read_quadratures(path) -> np.ndarray:
    path = Path(path)
    lines = _open(path)
    _check_header(path, lines, "trial_id,x")
    out = np.empty(len(lines) - 1)
    for k, line in enumerate(lines[1:]):
        parts = line.split(",")
        try:
            if len(parts) != 2 or int(parts[0]) != k:
                raise ValueError
            out[k] = float(parts[1])
        except ValueError:
            raise DatasetError(f"{path}:{k + 2}: malformed row {line[:60]!r}") from None
    return out


def read_traces(path) -> np.ndarray:
    path = Path(path)
    lines = _open(path)
    n = lines[0].count(",")
    _check_header(path, lines, "trial_id," + ",".join(f"h{i}" for i in range(n)))
    out = np.empty((len(lines) - 1, n))
    for k, line in enumerate(lines[1:]):
        parts = line.split(",")
        try:
            if len(parts) != n + 1 or int(parts[0]) != k:
                raise ValueError
            out[k] = [float(v) for v in parts[1:]]
        except ValueError:
            raise DatasetError(f"{path}:{k + 2}: malformed row") from None
    return out


def read_clicks(path) -> ClickData:
    path = Path(path)
    lines = _open(path)
    _check_header(path, lines, "trial_id,n2,n3,bins2,bins3")
    tid, n2, n3, t2, t3 = [], [], [], [], []
    for k, line in enumerate(lines[1:]):
        parts = line.split(",")
        try:
            if len(parts) != 5:
                raise ValueError
            a, b = int(parts[1]), int(parts[2])
            b2 = [int(v) for v in parts[3].split()]
            b3 = [int(v) for v in parts[4].split()]
            if len(b2) != a or len(b3) != b or a < 0 or b < 0:
                raise ValueError
        except ValueError:
            raise DatasetError(f"{path}:{k + 2}: malformed row {line[:60]!r}") from None
        tid.append(int(parts[0]))
        n2.append(a)
        n3.append(b)
        t2.extend(b2)
        t3.extend(b3)
    return ClickData(tid, n2, n3, t2, t3)


def read_table(path, header: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    lines = _open(path)
    _check_header(path, lines, ",".join(header))
    rows = []
    for k, line in enumerate(lines[1:]):
        parts = line.split(",")
        try:
            if len(parts) != len(header):
                raise ValueError
            rows.append([float(v) for v in parts])
        except ValueError:
            raise DatasetError(f"{path}:{k + 2}: malformed row {line[:60]!r}") from None
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: arr[:, j] for j, h in enumerate(header)}


DECAY_HEADER = ["delay_s", "efficiency", "error"]


def read_manifest(dataset) -> dict:
    path = Path(dataset) / MANIFEST
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"missing manifest: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from None


def verify(dataset, name: str) -> None:
    """Check ``name`` against the SHA-256 recorded in the dataset manifest."""
    man = read_manifest(dataset)
    entry = man.get("files", {}).get(name)
    path = Path(dataset) / name
    if entry is None:
        raise DatasetError(f"{name} is not listed in {Path(dataset) / MANIFEST}")
    try:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
    except FileNotFoundError:
        raise DatasetError(f"missing data file: {path}") from None
    if digest != entry["sha256"]:
        raise DatasetError(f"{path}: checksum mismatch (file corrupted or modified)")

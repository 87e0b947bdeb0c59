"""JSON/CSV serialization, sample ingestion and run manifests."""
from __future__ import annotations

import hashlib
import json
import math
import os
import platform
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

FLOAT_FMT = ".17g"


class SampleParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------- JSON

def _plain(obj):
    """Convert numpy scalars/arrays and tuples to plain JSON-able values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    return obj


def _emit(obj, indent: int | None, level: int) -> str:
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        text = format(obj, FLOAT_FMT)
        # keep floats recognisable as floats after a round trip
        return text if any(ch in text for ch in ".en") else text + ".0"
    if obj is None or isinstance(obj, (bool, int, str)):
        return json.dumps(obj)
    pad = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    sep = ", " if indent is None else ","
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [f"{pad}{_emit(v, indent, level + 1)}" for v in obj]
        return "[" + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int | None = 2) -> str:
    """JSON with every float written to 17 significant digits."""
    return _emit(_plain(obj), indent, 0)


def loads(text: str):
    return json.loads(text)


def digest_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- samples

def parse_samples_csv(text: str) -> np.ndarray:
    """One nonnegative integer per line; an optional header as the first line; blanks skipped."""
    out = []
    first = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            val = int(line)
        except ValueError:
            if first and any(ch.isalpha() for ch in line):
                first = False
                continue
            raise SampleParseError(f"expected a nonnegative integer, got {raw!r}", lineno) from None
        first = False
        if val < 0:
            raise SampleParseError(f"negative size {val}", lineno)
        out.append(val)
    if not out:
        raise SampleParseError("no samples found")
    return np.asarray(out, dtype=np.int64)


def format_samples_csv(samples, header: str | None = "size") -> str:
    lines = [header] if header else []
    lines += [str(int(v)) for v in samples]
    return "\n".join(lines) + "\n"


def parse_samples_json(text: str) -> np.ndarray:
    """``{"samples": [...]}`` or a run manifest whose config carries ``samples``."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SampleParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if isinstance(d, dict) and "samples" not in d and isinstance(d.get("config"), dict):
        d = d["config"]
    vals = d.get("samples") if isinstance(d, dict) else d
    if not isinstance(vals, list) or not vals:
        raise SampleParseError("JSON input needs a non-empty 'samples' list")
    for i, v in enumerate(vals):
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise SampleParseError(f"sample {i} is not a nonnegative integer: {v!r}")
    return np.asarray(vals, dtype=np.int64)


def read_samples(path: str) -> np.ndarray:
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json") or text.lstrip().startswith(("{", "[")):
        return parse_samples_json(text)
    return parse_samples_csv(text)


def flat_rows(d: dict, prefix: str = "") -> list[tuple[str, object]]:
    """Nested dict flattened to dotted keys, for CSV output."""
    rows = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows += flat_rows(v, key + ".")
        else:
            rows.append((key, v))
    return rows


def dumps_csv(d: dict) -> str:
    lines = ["key,value"]
    for k, v in flat_rows(_plain(d)):
        if isinstance(v, float):
            v = format(v, FLOAT_FMT)
        elif isinstance(v, list):
            v = '"' + dumps(v, indent=None).replace('"', '""') + '"'
        elif v is None:
            v = ""
        lines.append(f"{k},{v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- manifests

@dataclass
class RunManifest:
    command: str
    config: dict
    outputs: dict
    master_seed: int | None = None
    input_digests: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    tool_version: str = field(default_factory=tool_version)

    def to_dict(self) -> dict:
        return {"tool_version": self.tool_version, "command": self.command,
                "config": self.config, "master_seed": self.master_seed,
                "input_digests": self.input_digests, "outputs": self.outputs,
                "outputs_digest": digest_text(dumps(self.outputs, indent=None)),
                "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(d["command"], d["config"], d["outputs"], d.get("master_seed"),
                   d.get("input_digests", {}), d.get("diagnostics", {}),
                   d.get("tool_version", "0+unknown"))

    def write(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(dumps(self.to_dict()) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def environment_info() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "platform": platform.platform()}

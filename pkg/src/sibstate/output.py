"""Output-file helpers: reproducible headers and delimited writers.

Every emitted file starts with a comment header recording the tool version,
the run seed and a digest of the resolved configuration, so artifacts are
traceable and byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import numbers
from pathlib import Path

from . import __version__


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def header_line(seed: int | None, config: dict | None = None) -> str:
    parts = [f"# sibstate {__version__}"]
    if seed is not None:
        parts.append(f"seed={seed}")
    if config is not None:
        parts.append(f"config=sha256:{config_digest(config)}")
    return " ".join(parts)


def fmt(value) -> str:
    """Shortest exact decimal form for reals; plain str otherwise."""
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))
    return str(value)


def write_csv(path, columns: list[str], rows, seed: int | None = None,
              config: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_line(seed, config) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, payload: dict, seed: int | None = None,
               config: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"tool": f"sibstate {__version__}"}
    if seed is not None:
        doc["seed"] = seed
    if config is not None:
        doc["config_digest"] = config_digest(config)
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

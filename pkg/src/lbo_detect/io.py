"""On-disk formats: series files, protocol manifests, checkpoints, CSV tables.

Floats are written with ``repr`` (shortest round-trip form), so every value
read back is bit-identical to the one written.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from .errors import ConfigInvalid
from .series import Label, Protocol, QuasiStaticRecord, ScalingParams, TimeSeries


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def dump_json(obj, path) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- series files -------------------------------------------------------------


def write_series(path, samples) -> None:
    """``.f64`` files hold raw little-endian doubles; anything else is CSV."""
    x = np.asarray(samples, dtype=np.float64)
    path = Path(path)
    if path.suffix == ".f64":
        path.write_bytes(x.astype("<f8").tobytes())
    else:
        _write_text(path, "".join(f"{v!r}\n" for v in x.tolist()))


def read_series(path, sample_rate_hz: float = 1.0) -> TimeSeries:
    path = Path(path)
    if path.suffix == ".f64":
        raw = path.read_bytes()
        if len(raw) % 8:
            raise ConfigInvalid(f"{path}: size is not a multiple of 8 bytes")
        x = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    else:
        values = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    values.append(float(line))
                except ValueError:
                    raise ConfigInvalid(f"{path}:{lineno}: not a number: {line!r}") from None
        x = np.array(values, dtype=np.float64)
    return TimeSeries(x, sample_rate_hz)


# -- protocol manifests ---------------------------------------------------------


def write_protocol(protocol: Protocol, directory, series_ext: str = ".f64") -> Path:
    """Write every record's series plus ``<name>.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in protocol.records:
        fname = f"{protocol.name}_phi{rec.phi_ratio:.3f}{series_ext}"
        write_series(directory / fname, rec.series.samples)
        entry = {"phi_ratio": rec.phi_ratio, "path": fname}
        if rec.label is not None:
            entry["label"] = rec.label.value
        entries.append(entry)
    manifest = {
        "name": protocol.name,
        "air_flow_slpm": protocol.air_flow_slpm,
        "transition_ratio": protocol.transition_ratio,
        "sample_rate_hz": protocol.records[0].series.sample_rate_hz,
        "records": entries,
    }
    path = directory / f"{protocol.name}.json"
    dump_json(manifest, path)
    return path


def read_protocol(path) -> Protocol:
    """Load a manifest; record paths are relative to the manifest file."""
    path = Path(path)
    try:
        doc = load_json(path)
        name = str(doc["name"])
        air = float(doc["air_flow_slpm"])
        transition = float(doc["transition_ratio"])
        entries = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: malformed manifest ({exc})") from exc
    fs = float(doc.get("sample_rate_hz", 1.0))
    records = []
    for entry in entries:
        label = entry.get("label")
        records.append(
            QuasiStaticRecord(
                float(entry["phi_ratio"]),
                read_series(path.parent / entry["path"], fs),
                Label.parse(label) if label is not None else None,
            )
        )
    return Protocol(name, air, tuple(records), transition)


# -- checkpoints ------------------------------------------------------------------


def scaling_to_dict(params: ScalingParams) -> dict:
    return {"min_val": params.min_val, "max_val": params.max_val}


def scaling_from_dict(d: dict) -> ScalingParams:
    return ScalingParams(float(d["min_val"]), float(d["max_val"]))


def array_to_json(a: np.ndarray):
    return np.asarray(a, dtype=np.float64).tolist()


# -- CSV --------------------------------------------------------------------------


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> List[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))

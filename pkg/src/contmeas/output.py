"""Deterministic run output: CSV series, JSON tables, manifests, checksums.

Every data file is written with shortest-round-trip float formatting and
a fixed '#'-comment header carrying the reproducibility fields (tool
version, RNG algorithm, master seed, mode), so identical (config, seed)
runs produce byte-identical data files on any platform. Wall-clock
timestamps live only in manifest.json, which is therefore the one file
excluded from byte-level comparison.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os

import numpy as np

from ._version import __version__
from .noise import GAUSSIAN_ALGORITHM

MANIFEST_NAME = "manifest.json"


def format_value(x):
    """Shortest decimal form that round-trips: repr for floats, str otherwise."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def run_header(mode, master_seed, extra=None):
    """Deterministic header fields embedded in every data file."""
    fields = {
        "tool": f"contmeas {__version__}",
        "rng": GAUSSIAN_ALGORITHM,
        "mode": mode,
        "master_seed": master_seed,
    }
    if extra:
        fields.update(extra)
    return fields


def write_csv(path, columns, rows, header_fields):
    """Write one CSV: '#'-comment header, column line, then data rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in header_fields.items():
            fh.write(f"# {key}: {format_value(value)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def read_csv(path):
    """Read back a CSV written by write_csv: (header dict, columns, float array)."""
    header = {}
    columns = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
            elif columns is None:
                columns = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    data = np.array(rows) if rows else np.empty((0, len(columns or [])))
    return header, columns or [], data


def write_json(path, payload):
    """Write a JSON file with sorted keys and a trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_of_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def utc_now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, mode, master_seed, config_echo, output_files,
                   started_at, finished_at, error=None):
    """Write manifest.json and return its payload.

    ``output_files`` are paths inside ``out_dir``; each is checksummed.
    The config echo plus the seed is everything needed to re-run the
    experiment; the checksums certify what it produced.
    """
    outputs = {}
    for path in sorted(output_files):
        name = os.path.relpath(path, out_dir)
        outputs[name] = sha256_of_file(path)
    payload = {
        "tool": "contmeas",
        "version": __version__,
        "rng_algorithm": GAUSSIAN_ALGORITHM,
        "mode": mode,
        "master_seed": master_seed,
        "config": config_echo,
        "outputs": outputs,
        "started_at": started_at,
        "finished_at": finished_at,
    }
    if error is not None:
        payload["error"] = error
    write_json(os.path.join(out_dir, MANIFEST_NAME), payload)
    return payload

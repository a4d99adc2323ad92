import csv
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from core.errors import UsageError
from utils.logging_util import setup_logger

logger = setup_logger("storage")

SNSF_MAGIC = b"SNSF"
SNSF_VERSION = 1
# magic, version (uint32), node count (uint64), components (uint32), time (float64)
SNSF_HEADER = struct.Struct("<4sIQId")


def run_id(config_text):
    """
    Timestamp-free identifier of a run.

    Args:
        config_text: Canonical key=value serialization of the run configuration

    Returns:
        First 12 hex characters of the SHA-256 of the text
    """
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:12]


def ensure_dir(path):
    Path(path).mkdir(parents=True, exist_ok=True)
    return str(path)


def save_json(data, out_dir, name):
    """
    Save a JSON document with sorted keys.

    Args:
        data: JSON-serializable object
        out_dir: Output directory (created if missing)
        name: File name

    Returns:
        Path to the saved file
    """
    filepath = os.path.join(ensure_dir(out_dir), name)
    with open(filepath, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return filepath


def save_csv(rows, columns, out_dir, name, float_format="{:.10e}"):
    filepath = os.path.join(ensure_dir(out_dir), name)
    with open(filepath, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([float_format.format(row[c]) if isinstance(row[c], float) else row[c]
                             for c in columns])
    return filepath


def write_field_dump(filepath, values, t=0.0):
    """
    Write a node-indexed field in the SNSF little-endian layout.

    Header: magic "SNSF", uint32 version, uint64 node count, uint32 component
    count, float64 time. Body: float64 values, node-major.
    """
    values = np.asarray(values, dtype="<f8")
    if values.ndim == 1:
        values = values[:, None]
    nodes, comps = values.shape
    ensure_dir(os.path.dirname(filepath) or ".")
    with open(filepath, "wb") as f:
        f.write(SNSF_HEADER.pack(SNSF_MAGIC, SNSF_VERSION, nodes, comps, float(t)))
        f.write(np.ascontiguousarray(values).tobytes())
    return filepath


def read_field_dump(filepath):
    """
    Read an SNSF field dump.

    Returns:
        (values, t) with values of shape (nodes, components)
    """
    with open(filepath, "rb") as f:
        header = f.read(SNSF_HEADER.size)
        if len(header) != SNSF_HEADER.size:
            raise UsageError(f"{filepath}: truncated SNSF header")
        magic, version, nodes, comps, t = SNSF_HEADER.unpack(header)
        if magic != SNSF_MAGIC:
            raise UsageError(f"{filepath}: not an SNSF file")
        if version != SNSF_VERSION:
            raise UsageError(f"{filepath}: unsupported SNSF version {version}")
        body = np.frombuffer(f.read(), dtype="<f8")
    if body.size != nodes * comps:
        raise UsageError(f"{filepath}: expected {nodes * comps} values, found {body.size}")
    return body.reshape(nodes, comps).astype(float), t


def list_run_files(out_dir, suffix=None):
    """
    List output files of a run directory.

    Args:
        out_dir: Run output directory
        suffix: Optional filter (e.g. '.csv')

    Returns:
        Sorted list of relative paths
    """
    root = Path(out_dir)
    if not root.exists():
        return []
    files = sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())
    if suffix:
        return [f for f in files if f.endswith(suffix)]
    return files


def file_digest(filepath):
    with open(filepath, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def compare_runs(dir_a, dir_b, suffix=None):
    """
    Compare the outputs of two runs file by file.

    Args:
        dir_a: First run directory
        dir_b: Second run directory
        suffix: Optional filter on file names

    Returns:
        A dictionary with comparison results
    """
    results = {
        "files": {},
        "identical": True,
        "differences": []
    }
    files_a = set(list_run_files(dir_a, suffix))
    files_b = set(list_run_files(dir_b, suffix))

    for name in sorted(files_a ^ files_b):
        owner = dir_a if name in files_a else dir_b
        results["differences"].append(f"{name} only present in {owner}")
        results["identical"] = False

    for name in sorted(files_a & files_b):
        digest_a = file_digest(os.path.join(dir_a, name))
        digest_b = file_digest(os.path.join(dir_b, name))
        results["files"][name] = {"a": digest_a, "b": digest_b}
        if digest_a != digest_b:
            results["differences"].append(
                f"{name} content mismatch: {digest_a[:8]} vs {digest_b[:8]}"
            )
            results["identical"] = False

    logger.debug(f"compared {dir_a} and {dir_b}: identical={results['identical']}")
    return results

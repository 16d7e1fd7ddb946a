"""On-disk formats: binary array records, bundle directories, label CSVs.

A bundle is a directory holding a ``manifest.json`` plus one ``.bin`` file
per array.  Each ``.bin`` is a single array record: a 16-byte header
(magic ``ICLB``, format version, row count, column count, all little-
endian unsigned 32-bit after the magic) followed by the row-major data.
Values are little-endian 32-bit floats except masks, which are single
bytes; the element width is implied by the file length.

Two bundle kinds exist: recording bundles (channel data, electrode
positions, mixing matrix, component activity, plus the sample rate in the
manifest) and feature bundles (stacked per-component topography, mask,
power spectrum, and autocorrelation arrays).  Writers stage everything in
a temporary location and rename into place, so a failed write never leaves
a partial bundle at the destination.
"""

from __future__ import annotations

import csv
import json
import os
import shutil
import struct
import tempfile

import numpy as np

from .categories import CATEGORIES, N_CATEGORIES, as_label_vector
from .errors import DataError
from .features import FeatureStack, Recording

ARRAY_MAGIC = b"ICLB"
ARRAY_VERSION = 1

RECORDING_FORMAT = "icsort-recording"
FEATURES_FORMAT = "icsort-features"
MANIFEST_NAME = "manifest.json"

_RECORDING_ARRAYS = (
    "channel_data",
    "electrode_positions",
    "mixing_matrix",
    "component_activity",
)
_FEATURE_ARRAYS = ("topo", "mask", "psd", "autocorr")


def write_array(path, array: np.ndarray) -> None:
    """Write a 2-D array record; float arrays as f32, boolean/uint8 as bytes."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise DataError(f"array records are 2-D, got shape {array.shape}")
    if array.dtype == np.bool_ or array.dtype == np.uint8:
        payload = np.ascontiguousarray(array, dtype=np.uint8)
    else:
        payload = np.ascontiguousarray(array, dtype="<f4")
    header = ARRAY_MAGIC + struct.pack("<III", ARRAY_VERSION, *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_array(path) -> np.ndarray:
    """Read an array record; returns float64 for f32 data, uint8 for byte data."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise DataError(f"{path}: truncated array record header")
    if data[:4] != ARRAY_MAGIC:
        raise DataError(f"{path}: not an array record (bad magic)")
    version, rows, cols = struct.unpack("<III", data[4:16])
    if version != ARRAY_VERSION:
        raise DataError(f"{path}: unsupported array record version {version}")
    body = len(data) - 16
    count = rows * cols
    if body == 4 * count:
        values = np.frombuffer(data, dtype="<f4", count=count, offset=16)
        return values.reshape(rows, cols).astype(np.float64)
    if body == count:
        values = np.frombuffer(data, dtype=np.uint8, count=count, offset=16)
        return values.reshape(rows, cols).copy()
    raise DataError(
        f"{path}: body has {body} bytes, expected {4 * count} (floats) or {count} (bytes)"
    )


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a temporary file and atomic rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _StagedDirectory:
    """Build a directory next to its destination, then rename into place."""

    def __init__(self, target, force: bool = False):
        self.target = os.fspath(target)
        self.force = force
        parent = os.path.dirname(os.path.abspath(self.target)) or "."
        os.makedirs(parent, exist_ok=True)
        self.staging = tempfile.mkdtemp(dir=parent, prefix=".staging-")

    def __enter__(self):
        return self.staging

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.staging, ignore_errors=True)
            return False
        if os.path.exists(self.target):
            if not self.force:
                shutil.rmtree(self.staging, ignore_errors=True)
                raise DataError(f"output {self.target!r} already exists (use force to replace)")
            shutil.rmtree(self.target)
        os.rename(self.staging, self.target)
        return False


def _dump_manifest(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _load_manifest(directory, expected_format: str) -> dict:
    path = os.path.join(os.fspath(directory), MANIFEST_NAME)
    if not os.path.isdir(directory) or not os.path.isfile(path):
        raise DataError(f"{directory}: not a bundle directory (missing {MANIFEST_NAME})")
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON manifest: {exc}") from exc
    if manifest.get("format") != expected_format:
        raise DataError(
            f"{path}: manifest format {manifest.get('format')!r}, expected {expected_format!r}"
        )
    return manifest


def write_recording_bundle(directory, recording: Recording, recording_id: str = "",
                           force: bool = False) -> None:
    """Write a recording as a bundle directory."""
    with _StagedDirectory(directory, force=force) as staging:
        arrays = {
            "channel_data": recording.channel_data,
            "electrode_positions": recording.electrode_positions,
            "mixing_matrix": recording.mixing_matrix,
            "component_activity": recording.component_activity,
        }
        for name in _RECORDING_ARRAYS:
            write_array(os.path.join(staging, f"{name}.bin"), arrays[name])
        manifest = {
            "format": RECORDING_FORMAT,
            "version": 1,
            "recording_id": recording_id or os.path.basename(os.fspath(directory)),
            "sample_rate": float(recording.sample_rate),
            "arrays": {name: f"{name}.bin" for name in _RECORDING_ARRAYS},
        }
        with open(os.path.join(staging, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            fh.write(_dump_manifest(manifest))


def read_recording_bundle(directory) -> tuple:
    """Read a recording bundle; returns (Recording, recording_id)."""
    manifest = _load_manifest(directory, RECORDING_FORMAT)
    entries = manifest.get("arrays", {})
    missing = [name for name in _RECORDING_ARRAYS if name not in entries]
    if missing:
        raise DataError(f"{directory}: manifest is missing arrays {missing}")
    loaded = {
        name: read_array(os.path.join(os.fspath(directory), entries[name]))
        for name in _RECORDING_ARRAYS
    }
    if "sample_rate" not in manifest:
        raise DataError(f"{directory}: manifest is missing sample_rate")
    recording = Recording(
        channel_data=loaded["channel_data"],
        sample_rate=float(manifest["sample_rate"]),
        electrode_positions=loaded["electrode_positions"],
        mixing_matrix=loaded["mixing_matrix"],
        component_activity=loaded["component_activity"],
    )
    return recording, str(manifest.get("recording_id", ""))


def write_feature_bundle(directory, stack: FeatureStack, component_ids,
                         source_recording: str = "", sample_rate: float = 0.0,
                         force: bool = False) -> None:
    """Write a feature stack plus component ids as a bundle directory."""
    component_ids = [str(c) for c in component_ids]
    if len(component_ids) != len(stack):
        raise DataError(
            f"{len(component_ids)} component ids for {len(stack)} feature rows"
        )
    if len(set(component_ids)) != len(component_ids):
        raise DataError("component ids must be unique")
    n = len(stack)
    arrays = {
        "topo": stack.topo.reshape(n, -1),
        "mask": stack.mask.reshape(n, -1).astype(np.uint8),
        "psd": stack.psd,
        "autocorr": stack.autocorr,
    }
    with _StagedDirectory(directory, force=force) as staging:
        for name in _FEATURE_ARRAYS:
            write_array(os.path.join(staging, f"{name}.bin"), arrays[name])
        manifest = {
            "format": FEATURES_FORMAT,
            "version": 1,
            "source_recording": source_recording,
            "sample_rate": float(sample_rate),
            "component_ids": component_ids,
            "arrays": {name: f"{name}.bin" for name in _FEATURE_ARRAYS},
        }
        with open(os.path.join(staging, MANIFEST_NAME), "w", encoding="utf-8") as fh:
            fh.write(_dump_manifest(manifest))


def read_feature_bundle(directory) -> tuple:
    """Read a feature bundle; returns (FeatureStack, component_ids list)."""
    manifest = _load_manifest(directory, FEATURES_FORMAT)
    entries = manifest.get("arrays", {})
    missing = [name for name in _FEATURE_ARRAYS if name not in entries]
    if missing:
        raise DataError(f"{directory}: manifest is missing arrays {missing}")
    loaded = {
        name: read_array(os.path.join(os.fspath(directory), entries[name]))
        for name in _FEATURE_ARRAYS
    }
    component_ids = [str(c) for c in manifest.get("component_ids", [])]
    n = len(component_ids)
    if loaded["topo"].shape != (n, 1024) or loaded["mask"].shape != (n, 1024):
        raise DataError(f"{directory}: topo/mask arrays must be ({n}, 1024)")
    if loaded["psd"].shape != (n, 100) or loaded["autocorr"].shape != (n, 100):
        raise DataError(f"{directory}: psd/autocorr arrays must be ({n}, 100)")
    stack = FeatureStack(
        topo=loaded["topo"].reshape(n, 32, 32),
        mask=loaded["mask"].reshape(n, 32, 32).astype(bool),
        psd=loaded["psd"],
        autocorr=loaded["autocorr"],
    )
    return stack, component_ids


def _label_header(category_names) -> list:
    return ["component_id"] + [
        name.lower().replace(" ", "_") for name in category_names
    ]


def write_labels_csv(path, component_ids, labels: np.ndarray,
                     category_names=CATEGORIES) -> None:
    """Write per-component label vectors as CSV (id column + one per category)."""
    labels = np.asarray(labels, dtype=np.float64)
    component_ids = [str(c) for c in component_ids]
    if labels.shape != (len(component_ids), len(category_names)):
        raise DataError(
            f"labels must be ({len(component_ids)}, {len(category_names)}), got {labels.shape}"
        )
    rows = [",".join(_label_header(category_names))]
    for cid, row in zip(component_ids, labels):
        if "," in cid or "\n" in cid or '"' in cid:
            raise DataError(f"component id {cid!r} contains CSV metacharacters")
        rows.append(cid + "," + ",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_labels_csv(path, n_categories: int = N_CATEGORIES) -> tuple:
    """Read a label CSV; returns (component_ids, (n, k) label array).

    Every row must hold a valid probability vector; the header's category
    count fixes k.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty label file") from None
        if not header or header[0].strip() != "component_id":
            raise DataError(f"{path}: first column must be component_id")
        k = len(header) - 1
        if k < 2:
            raise DataError(f"{path}: need at least 2 category columns, found {k}")
        component_ids = []
        vectors = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != k + 1:
                raise DataError(f"{path}:{line_no}: expected {k + 1} fields, got {len(row)}")
            component_ids.append(row[0].strip())
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: non-numeric probability: {exc}") from exc
            vectors.append(as_label_vector(values, n_categories=k))
    if not component_ids:
        raise DataError(f"{path}: no label rows found")
    if len(set(component_ids)) != len(component_ids):
        raise DataError(f"{path}: duplicate component ids")
    if n_categories is not None and k != n_categories:
        raise DataError(f"{path}: expected {n_categories} category columns, found {k}")
    return component_ids, np.stack(vectors)

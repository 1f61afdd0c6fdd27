"""Instance and dataset file formats.

An instance is stored as a JSON object::

    {"name": ..., "points": [[x_1, ..., x_D], ...], "labels": [...], "meta": {...}}

``points`` is row-major with one row per point (N x D on disk), while the
in-memory :class:`Instance` keeps the column-per-point D x N layout used by
every numerical routine. Floats are written with 17 significant digits so a
write/read cycle is lossless.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"


class ValidationError(ValueError):
    """Raised when data violates a structural or numerical invariant."""


class InstanceFormatError(ValidationError):
    """Raised when an instance file is malformed."""

    def __init__(self, field_name, message):
        super().__init__(f"field {field_name!r}: {message}")
        self.field = field_name


def reindex_labels(labels):
    """Map arbitrary integer labels to 0..K-1 in order of first occurrence."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty(labels.shape[0], dtype=np.int64)
    for i, lab in enumerate(labels.tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


@dataclass
class Instance:
    """One clustering problem: a D x N point matrix plus per-point labels."""

    points: np.ndarray
    labels: np.ndarray
    name: str = "instance"
    meta: dict = field(default_factory=dict)
    labeled: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labeled is not None:
            self.labeled = np.asarray(self.labeled, dtype=bool)
        self.validate()

    @property
    def dim(self):
        return self.points.shape[0]

    @property
    def n_points(self):
        return self.points.shape[1]

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1

    def validate(self):
        if self.points.ndim != 2:
            raise ValidationError("points must be a 2-D matrix")
        d, n = self.points.shape
        if n == 0:
            raise ValidationError("empty point set")
        if d < 2 or n < 2:
            raise ValidationError(f"need D >= 2 and N >= 2, got D={d}, N={n}")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("points contain non-finite values")
        if self.labels.shape != (n,):
            raise ValidationError(
                f"labels length {self.labels.shape} does not match N={n}")
        check_contiguous(self.labels)
        if self.labeled is not None and self.labeled.shape != (n,):
            raise ValidationError("labeled mask length does not match N")


def check_contiguous(labels):
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("empty label vector")
    if labels.min() < 0:
        raise ValidationError("labels must be non-negative")
    present = np.unique(labels)
    if present.size != labels.max() + 1:
        raise ValidationError(
            f"labels are not contiguous from 0: {present.tolist()}")
    return int(present.size)


def one_hot(labels):
    """K x N indicator matrix with ``Y[k, i] = 1`` iff ``labels[i] == k``."""
    labels = np.asarray(labels, dtype=np.int64)
    k = check_contiguous(labels)
    y = np.zeros((k, labels.shape[0]))
    y[labels, np.arange(labels.shape[0])] = 1.0
    return y


def flatten_trajectories(coords):
    """Stack an F x 2 x N trajectory tensor into a (2F) x N feature matrix.

    Column ``i`` of the result is ``(x_1, y_1, ..., x_F, y_F)`` for point i.
    """
    try:
        arr = np.asarray(coords, dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"ragged trajectory input: {exc}") from None
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise ValidationError(
            f"expected an F x 2 x N tensor, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError("need at least one frame")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("trajectory coordinates must be finite")
    f, _, n = arr.shape
    return arr.reshape(2 * f, n).copy()


def unflatten_trajectories(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] % 2:
        raise ValidationError("feature rows must be an even count")
    return features.reshape(features.shape[0] // 2, 2, features.shape[1]).copy()


def _dumps_points(points):
    rows = []
    for row in points.T:
        rows.append("[" + ", ".join(f"{v:.17g}" for v in row) + "]")
    return "[" + ", ".join(rows) + "]"


def instance_to_json(instance):
    meta = {str(k): str(v) for k, v in sorted(instance.meta.items())}
    return (
        "{"
        f'"name": {json.dumps(instance.name)}, '
        f'"points": {_dumps_points(instance.points)}, '
        f'"labels": {json.dumps(instance.labels.tolist())}, '
        f'"meta": {json.dumps(meta, sort_keys=True)}'
        "}\n"
    )


def instance_from_dict(obj, default_name="instance"):
    if not isinstance(obj, dict):
        raise InstanceFormatError("<root>", "expected a JSON object")
    for key in ("points", "labels"):
        if key not in obj:
            raise InstanceFormatError(key, "missing")
    raw = obj["points"]
    if not isinstance(raw, list) or not raw:
        raise ValidationError("empty point set")
    width = None
    for row in raw:
        if not isinstance(row, list):
            raise InstanceFormatError("points", "each point must be a list")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InstanceFormatError("points", "ragged rows")
        for v in row:
            if v is None or isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InstanceFormatError("points", f"non-numeric entry {v!r}")
    pts = np.array(raw, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValidationError("points contain non-finite values")
    labels = obj["labels"]
    if not isinstance(labels, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in labels):
        raise InstanceFormatError("labels", "must be a list of integers")
    if len(labels) != pts.shape[0]:
        raise InstanceFormatError(
            "labels", f"length {len(labels)} != number of points {pts.shape[0]}")
    name = obj.get("name", default_name)
    if not isinstance(name, str):
        raise InstanceFormatError("name", "must be a string")
    meta = obj.get("meta", {})
    if not isinstance(meta, dict):
        raise InstanceFormatError("meta", "must be an object")
    return Instance(points=pts.T, labels=reindex_labels(labels), name=name,
                    meta={str(k): str(v) for k, v in meta.items()})


def read_instance(path):
    path = Path(path)
    text = path.read_text()
    try:
        # NaN/Infinity literals are accepted by the parser and rejected by
        # validation so the error says what is actually wrong
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError("<root>", f"invalid JSON: {exc}") from None
    return instance_from_dict(obj, default_name=path.stem)


def write_instance(instance, path):
    instance.validate()
    Path(path).write_text(instance_to_json(instance))


@dataclass
class Dataset:
    instances: list
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        names = [inst.name for inst in self.instances]
        if len(set(names)) != len(names):
            raise ValidationError("instance names must be unique in a dataset")

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]


def write_dataset(directory, splits):
    """Write ``{"train": [Instance, ...], ...}`` plus a manifest to a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for split in SPLITS:
        insts = list(splits.get(split, []))
        Dataset(insts, split)
        manifest[split] = [inst.name for inst in insts]
        for inst in insts:
            write_instance(inst, directory / f"{inst.name}.json")
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    obj = json.loads(path.read_text())
    return {split: list(obj.get(split, [])) for split in SPLITS}


def read_dataset(directory, split="train"):
    directory = Path(directory)
    if (directory / MANIFEST).exists():
        names = read_manifest(directory)[split]
    else:
        names = sorted(p.stem for p in directory.glob("*.json"))
    return Dataset([read_instance(directory / f"{n}.json") for n in names], split)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)

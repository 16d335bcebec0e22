"""
Reading and writing of scenes, label files, configuration documents, metric
reports, benchmark results and block weights.

Byte-level layouts are documented in ``docs/formats.rst``. Readers never skip a
malformed record: every problem raises :class:`~segerr.errors.FormatError`
carrying the byte offset (binary containers) or line number (text files).
"""
import json
import re
from dataclasses import fields
from io import BytesIO
from logging import getLogger
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from segerr.apis.data import (
    DEFAULT_IGNORE_LABEL,
    BoundaryMask,
    ClassGroups,
    EvalConfig,
    LabelField,
    PointCloud,
)
from segerr.apis.results import BenchResult, MetricsReport
from segerr.bsa import BlockConfig
from segerr.errors import (
    FormatError,
    InvariantViolation,
    SceneValidationError,
    ShapeError,
)
from segerr.metrics import report_from_counters
from segerr.names import CounterType, MetricType, SceneFormat
from segerr.synth import SceneSpec
from segerr.typing import Array

_logger = getLogger(__name__)

PathLike = Union[str, Path]

VERTEX = "vertex"
POSITION_PROPERTIES = ("x", "y", "z")
COLOR_PROPERTIES = ("red", "green", "blue")
NORMAL_PROPERTIES = ("nx", "ny", "nz")
LABEL_PROPERTY = "label"
_PROPERTY_TYPES = {
    **{name: "f4" for name in POSITION_PROPERTIES + NORMAL_PROPERTIES},
    **{name: "u1" for name in COLOR_PROPERTIES},
    LABEL_PROPERTY: "i4",
}

REPORT_FORMAT = "segerr-report"
SWEEP_FORMAT = "segerr-sweep"
FORMAT_VERSION = 1
METRIC_DIGITS = 12
_METRIC_TOLERANCE = 1e-11

_INTEGER = re.compile(r"[+-]?\d+")

WEIGHTS_MAGIC = b"SGWT"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


# Scenes


def write_scene(
    path: PathLike,
    cloud: PointCloud,
    labels: LabelField,
    format: SceneFormat = SceneFormat.BINARY,
):
    """Writes a labeled cloud as a PLY file.

    Args:
        path: Destination file
        cloud: The points, colors and normals are written when present
        labels: One label per point
        format: ASCII or binary little-endian
    """
    if labels.count != cloud.count:
        raise SceneValidationError(
            f"Length mismatch: {labels.count} labels for {cloud.count} points"
        )
    columns = list(zip(POSITION_PROPERTIES, cloud.positions.T))
    if cloud.colors is not None:
        columns += zip(COLOR_PROPERTIES, cloud.colors.T)
    if cloud.normals is not None:
        columns += zip(NORMAL_PROPERTIES, cloud.normals.T)
    columns.append((LABEL_PROPERTY, labels.labels))

    vertices = np.empty(
        cloud.count, dtype=[(name, _PROPERTY_TYPES[name]) for name, _ in columns]
    )
    for name, values in columns:
        vertices[name] = values
    format = SceneFormat(format)
    PlyData(
        [PlyElement.describe(vertices, VERTEX)],
        text=format is SceneFormat.ASCII,
        byte_order="<",
    ).write(str(path))
    _logger.debug(f"wrote {cloud.count} points to {path} ({format.value})")


def read_scene(
    path: PathLike, ignore_label: int = DEFAULT_IGNORE_LABEL
) -> Tuple[PointCloud, LabelField]:
    """Reads a labeled cloud from a PLY file.

    The vertex element must hold float32 ``x, y, z`` and an int32 ``label``, and
    may hold uint8 ``red, green, blue`` and float32 ``nx, ny, nz``. No other
    property is accepted.

    Args:
        path: The PLY file
        ignore_label: Sentinel of unannotated points in the label property

    Returns: The cloud and its labels

    Raises:
        FormatError: on a malformed header, a missing or mistyped property or a
        truncated payload
    """
    data = Path(path).read_bytes()
    header_length = _header_length(data)
    try:
        ply = PlyData.read(BytesIO(data))
    except PlyHeaderParseError as e:
        offset = _line_offset(data, e.line) if e.line else 0
        raise FormatError(path, f"malformed header: {e.message}", offset=offset)
    except PlyElementParseError as e:
        raise FormatError(
            path,
            f"bad payload: {e.message}",
            offset=_row_offset(data, header_length, e.element, e.row),
        )
    except (StopIteration, ValueError, IndexError) as e:
        # plyfile surfaces a partial trailing binary row this way
        raise FormatError(path, f"truncated payload ({e!r})", offset=len(data))

    if VERTEX not in [element.name for element in ply.elements]:
        raise FormatError(path, "no vertex element", offset=0)
    vertex = ply[VERTEX]
    _check_properties(path, vertex)
    names = {prop.name for prop in vertex.properties}

    positions = np.stack([vertex[name] for name in POSITION_PROPERTIES], axis=1)
    colors = normals = None
    if set(COLOR_PROPERTIES) <= names:
        colors = np.stack([vertex[name] for name in COLOR_PROPERTIES], axis=1)
    if set(NORMAL_PROPERTIES) <= names:
        normals = np.stack([vertex[name] for name in NORMAL_PROPERTIES], axis=1)
    cloud = PointCloud(positions, colors=colors, normals=normals)
    labels = LabelField(np.asarray(vertex[LABEL_PROPERTY]), ignore_label)
    _logger.debug(f"read {cloud.count} points from {path}")
    return cloud, labels


def _check_properties(path: PathLike, vertex: PlyElement):
    names = [prop.name for prop in vertex.properties]
    for prop in vertex.properties:
        if prop.name not in _PROPERTY_TYPES:
            raise FormatError(path, f"unexpected vertex property {prop.name}", offset=0)
        if not hasattr(prop, "val_dtype") or hasattr(prop, "len_dtype"):
            raise FormatError(path, f"{prop.name} can't be a list property", offset=0)
        expected = _PROPERTY_TYPES[prop.name]
        if np.dtype(prop.val_dtype) != np.dtype(expected):
            raise FormatError(
                path,
                f"vertex property {prop.name} has type {prop.val_dtype}, "
                f"expected {expected}",
                offset=0,
            )
    for required in POSITION_PROPERTIES + (LABEL_PROPERTY,):
        if required not in names:
            raise FormatError(path, f"missing vertex property {required}", offset=0)
    for group in (COLOR_PROPERTIES, NORMAL_PROPERTIES):
        present = [name for name in group if name in names]
        if present and len(present) != len(group):
            raise FormatError(
                path, f"incomplete property group {present} of {group}", offset=0
            )


def _header_length(data: bytes) -> int:
    end = data.find(b"end_header")
    if end < 0:
        return len(data)
    newline = data.find(b"\n", end)
    return len(data) if newline < 0 else newline + 1


def _line_offset(data: bytes, line: int) -> int:
    """Byte offset of the start of 1-based ``line``."""
    offset = 0
    for _ in range(max(0, line - 1)):
        newline = data.find(b"\n", offset)
        if newline < 0:
            return len(data)
        offset = newline + 1
    return offset


def _row_offset(
    data: bytes, header_length: int, element: Optional[PlyElement], row: Optional[int]
) -> int:
    if element is None or row is None:
        return header_length
    if b"format ascii" in data[:header_length]:
        header_lines = data[:header_length].count(b"\n")
        return _line_offset(data, header_lines + row + 1)
    row_size = np.dtype([(p.name, p.val_dtype) for p in element.properties]).itemsize
    return header_length + row * row_size


# Line-oriented label files


def read_pred_labels(path: PathLike, expected_count: int) -> LabelField:
    """Reads one decimal class id per line.

    Args:
        path: The text file
        expected_count: Number of points of the scene

    Returns: A prediction for every point

    Raises:
        FormatError: on a line that is not a non-negative int32 integer, or a
        count mismatch
    """
    labels = _read_integer_lines(path)
    if labels.shape[0] != expected_count:
        raise FormatError(
            path,
            f"count mismatch: {labels.shape[0]} labels, expected {expected_count}",
            line=labels.shape[0] + 1,
        )
    negative = np.flatnonzero(labels < 0)
    if negative.size:
        raise FormatError(
            path, "predictions can't hold ignore labels", line=int(negative[0]) + 1
        )
    return LabelField(labels)


def write_pred_labels(path: PathLike, labels: LabelField):
    _write_lines(path, labels.labels)


def write_boundary_mask(path: PathLike, mask: BoundaryMask):
    """Writes one 0/1 flag per line."""
    _write_lines(path, mask.flags.astype(np.int32))


def read_boundary_mask(path: PathLike, expected_count: Optional[int] = None):
    flags = _read_integer_lines(path)
    bad = np.flatnonzero((flags != 0) & (flags != 1))
    if bad.size:
        raise FormatError(path, "boundary flags must be 0 or 1", line=int(bad[0]) + 1)
    if expected_count is not None and flags.shape[0] != expected_count:
        raise FormatError(
            path,
            f"count mismatch: {flags.shape[0]} flags, expected {expected_count}",
            line=flags.shape[0] + 1,
        )
    return BoundaryMask(flags.astype(bool))


def _read_integer_lines(path: PathLike) -> Array:
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    limits = np.iinfo(np.int32)
    values = []
    for number, line in enumerate(lines, start=1):
        token = line.strip()
        if not _INTEGER.fullmatch(token):
            raise FormatError(path, f"not an integer: {line!r}", line=number)
        value = int(token)
        if not limits.min <= value <= limits.max:
            raise FormatError(path, f"out of the int32 range: {token}", line=number)
        values.append(value)
    return np.array(values, dtype=np.int64)


def _write_lines(path: PathLike, values: Array):
    Path(path).write_text("".join(f"{int(v)}\n" for v in values))


# JSON documents


def _load_json(path: PathLike) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(path, e.msg, line=e.lineno)


def _dump_json(path: PathLike, document: Any):
    Path(path).write_text(json.dumps(document, indent=2) + "\n")


def _check_keys(
    path: PathLike, document: Any, allowed: Sequence[str], where: str = "document"
):
    if not isinstance(document, dict):
        raise FormatError(path, f"{where} must be an object")
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        raise FormatError(path, f"unknown keys in {where}: {unknown}")


def _require(path: PathLike, document: Mapping, key: str, where: str = "document"):
    if key not in document:
        raise FormatError(path, f"{where} is missing {key}")
    return document[key]


def _integer(path: PathLike, value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(path, f"{name} must be an integer, got {value!r}")
    return value


def read_groups(path: PathLike, num_classes: Optional[int] = None) -> ClassGroups:
    """Reads ``{"group name": [class ids]}``.

    Raises:
        FormatError: when the document is not a mapping of integer lists
        SceneValidationError: when two groups share a class
    """
    document = _load_json(path)
    if not isinstance(document, dict):
        raise FormatError(path, "groups must be an object of class id lists")
    for name, ids in document.items():
        if not isinstance(ids, list):
            raise FormatError(path, f"group {name} must be a list of class ids")
        for class_id in ids:
            _integer(path, class_id, f"class id of group {name}")
    return ClassGroups(document, num_classes)


def write_groups(path: PathLike, groups: ClassGroups):
    _dump_json(path, groups.to_dict())


def _metric_string(value: Optional[float]) -> Optional[str]:
    return None if value is None else f"{value:.{METRIC_DIGITS}g}"


def _config_to_dict(cfg: EvalConfig) -> Dict[str, Any]:
    return {
        "num_classes": cfg.num_classes,
        "radius_m": cfg.radius_m,
        "iou_threshold": cfg.iou_threshold,
        "min_component_size": cfg.min_component_size,
        "ignore_label": cfg.ignore_label,
        "derr_samples": cfg.derr_samples.value,
    }


def report_to_dict(report: MetricsReport) -> Dict[str, Any]:
    """The JSON document of a report: exact integer counters, metrics as decimal
    strings with 12 significant digits."""
    return {
        "format": REPORT_FORMAT,
        "version": FORMAT_VERSION,
        "config": _config_to_dict(report.cfg),
        "groups": report.groups.to_dict(),
        "num_scenes": report.num_scenes,
        "confusion": report.confusion.tolist(),
        "counters": {t.value: v for t, v in report.counters.items()},
        "metrics": {t.value: _metric_string(v) for t, v in report.metrics.items()},
        "class_iou": [_metric_string(v) for v in report.class_iou],
        "group_iou": {g: _metric_string(v) for g, v in report.group_iou.items()},
    }


def report_from_dict(path: PathLike, document: Any) -> MetricsReport:
    """Rebuilds a report from its counters and checks the stored metrics.

    Raises:
        FormatError: on unknown or missing keys and non-integer counters
        InvariantViolation: when a stored metric differs from its recomputation
    """
    _check_keys(path, document, _REPORT_KEYS)
    if _require(path, document, "format") != REPORT_FORMAT:
        raise FormatError(path, f"not a {REPORT_FORMAT} document")
    if _require(path, document, "version") != FORMAT_VERSION:
        raise FormatError(path, f"unsupported version {document['version']}")

    config = _require(path, document, "config")
    _check_keys(path, config, _CONFIG_KEYS, "config")
    try:
        cfg = EvalConfig(**config)
    except (TypeError, ValueError) as e:
        raise FormatError(path, f"bad config: {e}")

    groups_doc = _require(path, document, "groups")
    if not isinstance(groups_doc, dict):
        raise FormatError(path, "groups must be an object of class id lists")
    groups = ClassGroups(groups_doc, cfg.num_classes)
    counters_doc = _require(path, document, "counters")
    _check_keys(path, counters_doc, [t.value for t in CounterType], "counters")
    counters = {
        t: _integer(path, _require(path, counters_doc, t.value, "counters"), t.value)
        for t in CounterType
    }
    if any(v < 0 for v in counters.values()):
        raise FormatError(path, "counters can't be negative")
    confusion = np.array(_require(path, document, "confusion"))
    shape = (cfg.num_classes, cfg.num_classes)
    if confusion.shape != shape or not np.issubdtype(confusion.dtype, np.integer):
        raise FormatError(path, f"confusion must be an integer matrix of shape {shape}")
    num_scenes = _integer(path, _require(path, document, "num_scenes"), "num_scenes")
    report = report_from_counters(cfg, groups, confusion, counters, num_scenes)

    metrics_doc = _require(path, document, "metrics")
    _check_keys(path, metrics_doc, [t.value for t in MetricType], "metrics")
    for metric_type in MetricType:
        stored = metrics_doc.get(metric_type.value)
        _check_stored(path, stored, report[metric_type], metric_type.value)
    class_iou_doc = _require(path, document, "class_iou")
    if not isinstance(class_iou_doc, list) or len(class_iou_doc) != cfg.num_classes:
        raise FormatError(path, f"class_iou must list {cfg.num_classes} values")
    for class_id, (stored, value) in enumerate(zip(class_iou_doc, report.class_iou)):
        _check_stored(path, stored, value, f"IoU of class {class_id}")
    group_iou_doc = _require(path, document, "group_iou")
    _check_keys(path, group_iou_doc, list(groups), "group_iou")
    for name, value in report.group_iou.items():
        _check_stored(path, group_iou_doc.get(name), value, f"IoU of group {name}")
    return report


_REPORT_KEYS = (
    "format",
    "version",
    "config",
    "groups",
    "num_scenes",
    "confusion",
    "counters",
    "metrics",
    "class_iou",
    "group_iou",
)
_CONFIG_KEYS = tuple(f.name for f in fields(EvalConfig))


def _check_stored(path: PathLike, stored: Any, value: Optional[float], name: str):
    if stored is None or value is None:
        if stored is not None or value is not None:
            raise InvariantViolation(
                f"{path}: stored {name} {stored!r} disagrees with recomputed {value}"
            )
        return
    try:
        parsed = float(stored)
    except (TypeError, ValueError):
        raise FormatError(path, f"{name} is not a decimal string: {stored!r}")
    if abs(parsed - value) > _METRIC_TOLERANCE:
        raise InvariantViolation(
            f"{path}: stored {name} {stored} disagrees with recomputed {value!r}"
        )


def write_report(path: PathLike, report: MetricsReport):
    _dump_json(path, report_to_dict(report))
    _logger.debug(f"wrote report of {report.num_scenes} scenes to {path}")


def read_report(path: PathLike) -> MetricsReport:
    return report_from_dict(path, _load_json(path))


def write_sweep(path: PathLike, reports: Mapping[float, MetricsReport]):
    """Writes the reports of a radius sweep as one document."""
    _dump_json(
        path,
        {
            "format": SWEEP_FORMAT,
            "version": FORMAT_VERSION,
            "radii": [float(r) for r in reports],
            "reports": [report_to_dict(r) for r in reports.values()],
        },
    )


def read_sweep(path: PathLike) -> Dict[float, MetricsReport]:
    document = _load_json(path)
    _check_keys(path, document, ("format", "version", "radii", "reports"))
    if _require(path, document, "format") != SWEEP_FORMAT:
        raise FormatError(path, f"not a {SWEEP_FORMAT} document")
    radii = _require(path, document, "radii")
    reports = _require(path, document, "reports")
    if not isinstance(radii, list) or not isinstance(reports, list):
        raise FormatError(path, "radii and reports must be lists")
    if len(radii) != len(reports):
        raise FormatError(path, f"{len(radii)} radii for {len(reports)} reports")
    return {float(r): report_from_dict(path, d) for r, d in zip(radii, reports)}


def read_scene_spec(path: PathLike) -> SceneSpec:
    """Reads a :class:`~segerr.synth.SceneSpec` from a JSON object."""
    document = _load_json(path)
    _check_keys(path, document, [f.name for f in fields(SceneSpec)], "scene spec")
    try:
        return SceneSpec.from_dict(document)
    except TypeError as e:
        raise FormatError(path, f"bad scene spec: {e}")


def write_scene_spec(path: PathLike, spec: SceneSpec):
    _dump_json(path, spec.to_dict())


def read_block_config(path: PathLike) -> BlockConfig:
    document = _load_json(path)
    _check_keys(path, document, [f.name for f in fields(BlockConfig)], "block config")
    try:
        return BlockConfig(**document)
    except TypeError as e:
        raise FormatError(path, f"bad block config: {e}")


def _bench_to_dict(result: BenchResult) -> Dict[str, Any]:
    return {
        "method": result.method.value,
        "num_points": result.num_points,
        "radius_m": result.radius_m,
        "workers": result.workers,
        "repetitions": result.repetitions,
        "times_ms": list(result.times_ms),
        "mean_ms": result.mean_ms,
        "median_ms": result.median_ms,
        "throughput": result.throughput,
    }


_BENCH_DERIVED = ("repetitions", "mean_ms", "median_ms", "throughput")


def write_bench_results(path: PathLike, results: Sequence[BenchResult]):
    _dump_json(path, [_bench_to_dict(r) for r in results])


def read_bench_results(path: PathLike) -> List[BenchResult]:
    document = _load_json(path)
    if not isinstance(document, list):
        raise FormatError(path, "benchmark results must be a list")
    results = []
    for record in document:
        _check_keys(path, record, _BENCH_KEYS, "benchmark record")
        arguments = {k: v for k, v in record.items() if k not in _BENCH_DERIVED}
        try:
            results.append(BenchResult(**arguments))
        except (TypeError, ValueError) as e:
            raise FormatError(path, f"bad benchmark record: {e}")
    return results


_BENCH_KEYS = (
    "method",
    "num_points",
    "radius_m",
    "workers",
    "times_ms",
) + _BENCH_DERIVED


# Weight container


def write_weights(path: PathLike, matrices: Sequence[Array]):
    """Writes matrices as ``magic | count | (rows, cols) * count | data``.

    Counts and dimensions are little-endian uint32, the entries row-major
    little-endian float64.
    """
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    for i, matrix in enumerate(matrices):
        if matrix.ndim != 2:
            raise ShapeError(f"Matrix {i} has {matrix.ndim} dimensions, expected 2")
    dims = np.array([m.shape for m in matrices], dtype=_U32).reshape(-1)
    payload = [
        WEIGHTS_MAGIC,
        np.array([len(matrices)], dtype=_U32).tobytes(),
        dims.tobytes(),
    ]
    payload += [np.ascontiguousarray(m, dtype=_F64).tobytes() for m in matrices]
    Path(path).write_bytes(b"".join(payload))


def read_weights(path: PathLike) -> List[Array]:
    """Reads the matrices of a weight container.

    Raises:
        FormatError: on a wrong magic, a truncated header or payload, or
        trailing bytes
    """
    data = Path(path).read_bytes()
    if data[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise FormatError(path, "not a weight container (bad magic)", offset=0)
    offset = len(WEIGHTS_MAGIC)
    if len(data) < offset + _U32.itemsize:
        raise FormatError(path, "truncated matrix count", offset=offset)
    count = int(np.frombuffer(data, dtype=_U32, count=1, offset=offset)[0])
    offset += _U32.itemsize
    if len(data) < offset + 2 * count * _U32.itemsize:
        raise FormatError(path, "truncated matrix dimensions", offset=offset)
    dims = np.frombuffer(data, dtype=_U32, count=2 * count, offset=offset)
    offset += 2 * count * _U32.itemsize

    matrices = []
    for rows, cols in dims.reshape(-1, 2).astype(np.int64):
        size = int(rows * cols)
        if len(data) < offset + size * _F64.itemsize:
            raise FormatError(
                path, f"truncated payload of a {rows}x{cols} matrix", offset=offset
            )
        values = np.frombuffer(data, dtype=_F64, count=size, offset=offset)
        matrices.append(values.reshape(rows, cols).astype(np.float64))
        offset += size * _F64.itemsize
    if offset != len(data):
        raise FormatError(path, f"{len(data) - offset} trailing bytes", offset=offset)
    return matrices

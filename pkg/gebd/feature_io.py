import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .datamodel import (
    BoundaryAnnotation,
    BoundaryClass,
    FeatureSequence,
    VideoDataset,
    parse_boundary_class,
)
from .errors import FormatError, InputError

logger = logging.getLogger('gebd.feature_io')

FEATURE_MAGIC = b"GEBF"
FEATURE_VERSION = 1
FEATURE_EXT = ".gebf"
# magic, version, L, D, snippet_rate, duration
_HEADER = struct.Struct("<4sIIIdd")
_ID_LEN = struct.Struct("<H")

PathLike = Union[str, Path]


def write_feature_file(path: PathLike, seq: FeatureSequence):
    """Write one FeatureSequence in the little-endian GEBF container."""
    vid = seq.video_id.encode("utf-8")
    if len(vid) > 0xFFFF:
        raise InputError(f"video_id too long ({len(vid)} bytes)")
    length, dim = seq.features.shape
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, length, dim,
                             float(seq.snippet_rate), float(seq.duration)))
        f.write(_ID_LEN.pack(len(vid)))
        f.write(vid)
        f.write(payload)


def read_feature_file(path: PathLike) -> FeatureSequence:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    magic, version, length, dim, rate, duration = _HEADER.unpack_from(data, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)

    pos = _HEADER.size
    if len(data) < pos + _ID_LEN.size:
        raise FormatError(f"{path}: truncated video_id length", offset=len(data))
    (id_len,) = _ID_LEN.unpack_from(data, pos)
    pos += _ID_LEN.size
    if len(data) < pos + id_len:
        raise FormatError(f"{path}: truncated video_id", offset=len(data))
    try:
        video_id = data[pos:pos + id_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: video_id is not valid UTF-8", offset=pos + e.start)
    pos += id_len

    expected = length * dim
    available = (len(data) - pos) // 4
    if available < expected:
        raise FormatError(
            f"{path}: truncated payload, header claims L={length}, D={dim} "
            f"({expected} values) but payload holds {available}",
            offset=len(data),
        )
    if len(data) - pos > expected * 4:
        raise FormatError(f"{path}: trailing bytes after payload", offset=pos + expected * 4)

    values = np.frombuffer(data, dtype="<f4", count=expected, offset=pos)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{path}: non-finite feature value", offset=pos + 4 * int(bad[0]))

    features = values.astype(np.float32).reshape(length, dim)
    try:
        return FeatureSequence(video_id, rate, duration, features)
    except InputError as e:
        raise FormatError(f"{path}: {e}", offset=8)


def concat_features(seqs: Sequence[FeatureSequence]) -> FeatureSequence:
    """Concatenate one video's sequences from several extractors along the feature axis."""
    first = seqs[0]
    for seq in seqs[1:]:
        if seq.video_id != first.video_id or seq.length != first.length:
            raise FormatError(
                f"Cannot concatenate {seq.video_id} (L={seq.length}) with {first.video_id} (L={first.length})"
            )
    features = np.concatenate([s.features for s in seqs], axis=1)
    return FeatureSequence(first.video_id, first.snippet_rate, first.duration, features)


def read_json(path: PathLike):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"File not found: {path}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e.msg}", line=e.lineno)


def write_json_atomic(path: PathLike, obj) -> Path:
    """Write JSON to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def save_annotations(path: PathLike, annotations: Sequence[BoundaryAnnotation],
                     snippet_rate: Optional[float] = None):
    records = []
    for ann in sorted(annotations, key=lambda a: a.video_id):
        record = {
            "video_id": ann.video_id,
            "duration": ann.duration,
            "action_boundaries": ann.action_boundaries,
            "shot_boundaries": ann.shot_boundaries,
        }
        if snippet_rate is not None:
            record["snippet_rate"] = snippet_rate
        records.append(record)
    write_json_atomic(path, records)


def load_annotations(path: PathLike, snippet_rate: float) -> Dict[str, BoundaryAnnotation]:
    """Load annotations; the whole class is re-derived with a one-snippet merge tolerance.

    A per-record `snippet_rate` field overrides the argument.
    """
    records = read_json(path)
    if not isinstance(records, list):
        raise FormatError(f"{path}: expected a JSON array of annotations")
    annotations = {}
    for i, record in enumerate(records):
        try:
            rate = float(record.get("snippet_rate", snippet_rate))
            ann = BoundaryAnnotation.from_classes(
                str(record["video_id"]), float(record["duration"]),
                record.get("action_boundaries", []), record.get("shot_boundaries", []), rate,
            )
        except (KeyError, TypeError, AttributeError, ValueError) as e:
            raise FormatError(f"{path}: invalid annotation record #{i}: {e}")
        annotations[ann.video_id] = ann
    return annotations


def save_predictions(path: PathLike, predictions: Dict[str, Dict[BoundaryClass, List[float]]]):
    records = []
    for video_id in sorted(predictions):
        for boundary_class, timestamps in predictions[video_id].items():
            records.append({
                "video_id": video_id,
                "class": BoundaryClass(boundary_class).value,
                "timestamps": [float(t) for t in timestamps],
            })
    write_json_atomic(path, records)


def load_predictions(path: PathLike) -> Dict[str, Dict[BoundaryClass, List[float]]]:
    records = read_json(path)
    if not isinstance(records, list):
        raise FormatError(f"{path}: expected a JSON array of predictions")
    predictions: Dict[str, Dict[BoundaryClass, List[float]]] = {}
    for i, record in enumerate(records):
        try:
            boundary_class = parse_boundary_class(record["class"])
            timestamps = sorted(float(t) for t in record["timestamps"])
            predictions.setdefault(str(record["video_id"]), {})[boundary_class] = timestamps
        except (KeyError, TypeError, AttributeError, ValueError) as e:
            raise FormatError(f"{path}: invalid prediction record #{i}: {e}")
    return predictions


def feature_files(directory: PathLike) -> List[Path]:
    return sorted(Path(directory).glob(f"*{FEATURE_EXT}"))


def load_features(directory: PathLike) -> Dict[str, FeatureSequence]:
    """Read every feature file under `directory`.

    If the directory holds one subdirectory per extractor instead of files, each
    video's sequences are concatenated in sorted subdirectory order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"Feature directory not found: {directory}")
    extractors = sorted(p for p in directory.iterdir() if p.is_dir())
    if not extractors:
        seqs = [read_feature_file(p) for p in feature_files(directory)]
        return {s.video_id: s for s in seqs}

    per_extractor = [{s.video_id: s for s in map(read_feature_file, feature_files(d))} for d in extractors]
    common = set(per_extractor[0])
    for table in per_extractor[1:]:
        common &= set(table)
    dropped = set().union(*per_extractor) - common
    if dropped:
        logger.warning(f"{len(dropped)} videos lack features from every extractor and were skipped")
    logger.info(f"Concatenating features from {len(extractors)} extractors: {[d.name for d in extractors]}")
    return {v: concat_features([table[v] for table in per_extractor]) for v in sorted(common)}


def load_dataset(data_dir: PathLike, snippet_rate: float) -> VideoDataset:
    """Load `features/` and `annotations.json` from a data directory."""
    data_dir = Path(data_dir)
    features = load_features(data_dir / "features")
    if not features:
        raise InputError(f"No feature files under {data_dir / 'features'}")
    annotations = load_annotations(data_dir / "annotations.json", snippet_rate)
    missing = sorted(set(features) - set(annotations))
    if missing:
        raise InputError(f"Missing annotation for video {missing[0]}")
    dims = {s.dim for s in features.values()}
    if len(dims) != 1:
        raise FormatError(f"Inconsistent feature dimensions across videos: {sorted(dims)}")
    return VideoDataset(features, {v: annotations[v] for v in features})

"""
Report emission: JSON with sorted keys, key,value CSV, curve CSV and
run manifests.

Every float is written with 17 significant digits so equal inputs give
byte-identical files; non-finite floats become null (JSON) or the empty
string (CSV).
"""
import hashlib
import json
import logging
import math
import os
import sys

import numpy as np
from pydantic import BaseModel

from fracest.errors import InvalidInputError
from fracest.fraccalc import GridFunction, write_grid_csv

log = logging.getLogger(__name__)

FORMATS = ("json", "csv")
MANIFEST_SUFFIX = ".manifest.json"
INDENT = "  "


def format_float(v):
    v = float(v)
    if not math.isfinite(v):
        return None
    return "{:.17g}".format(v)


def to_plain(obj):
    """Reduce pydantic models, numpy values and tuples to JSON-ready Python objects."""
    if isinstance(obj, BaseModel):
        obj = obj.to_report() if hasattr(obj, "to_report") else obj.model_dump()
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, level):
    pad = INDENT * (level + 1)
    end = INDENT * level
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        text = format_float(obj)
        return "null" if text is None else text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ["{}{}: {}".format(pad, json.dumps(k), _encode(obj[k], level + 1)) for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, level + 1) for v in obj) + "\n" + end + "]"
    raise InvalidInputError("cannot serialise {!r}".format(type(obj).__name__))


def dumps_json(report):
    return _encode(to_plain(report), 0) + "\n"


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], "{}.{}".format(prefix, k) if prefix else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _flatten(v, "{}[{}]".format(prefix, i))
    else:
        yield prefix, obj


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v) or ""
    text = str(v)
    if any(c in text for c in ',"\n'):
        text = '"' + text.replace('"', '""') + '"'
    return text


def dumps_csv(report):
    """key,value rows, nested keys joined with '.' and list items indexed."""
    return "".join("{},{}\n".format(k, _csv_value(v)) for k, v in _flatten(to_plain(report)))


def emit_report(report, fmt="json", path=None):
    """
    Write a report; path None or '-' means stdout.

    A GridFunction is always written in the two-column curve format.
    """
    if isinstance(report, GridFunction):
        if path in (None, "-"):
            raise InvalidInputError("curve output needs a file path")
        write_grid_csv(report, path, alpha=report.alpha)
        log.info("wrote curve with %d nodes to %s", len(report), path)
        return
    if fmt not in FORMATS:
        raise InvalidInputError("format must be one of {}".format(FORMATS))
    text = dumps_json(report) if fmt == "json" else dumps_csv(report)
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s report to %s", fmt, path)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_digest(manifest):
    return hashlib.sha256(dumps_json(manifest.model_dump()).encode("utf-8")).hexdigest()


def manifest_path(output):
    return output + MANIFEST_SUFFIX


def write_manifest(manifest, output):
    """Write the manifest next to `output`; returns the manifest path."""
    target = manifest_path(output)
    directory = os.path.dirname(os.path.abspath(target))
    os.makedirs(directory, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(manifest.model_dump()))
    return target

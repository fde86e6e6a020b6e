"""
Sample and config file readers.

Sample files hold one or two comma-separated numbers per line; the column
count of the first data row decides between a Sample and a Sample2D.
Lines starting with '#' and blank lines are skipped. Errors carry the
1-based line number of the offending row.
"""
import logging
import math

from fracest.errors import InvalidInputError
from fracest.mixed import Sample2D
from fracest.point import Sample

log = logging.getLogger(__name__)


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def _parse_row(line, lineno):
    values = []
    for field in line.split(","):
        field = field.strip()
        try:
            v = float(field)
        except ValueError:
            raise InvalidInputError("not a number: {!r}".format(field), line=lineno)
        if math.isnan(v) or math.isinf(v):
            raise InvalidInputError("NaN or infinite value", line=lineno)
        if v < 0:
            raise InvalidInputError("negative value {!r}".format(field), line=lineno)
        values.append(v)
    return values


def ingest_sample(path):
    """
    Read a sample file into a Sample (one column) or Sample2D (two).

    Raises InvalidInputError naming the line for negative, NaN or
    non-numeric entries and for rows whose column count differs from the
    first row.
    """
    rows = []
    width = None
    for lineno, line in _data_lines(path):
        row = _parse_row(line, lineno)
        if width is None:
            width = len(row)
            if width not in (1, 2):
                raise InvalidInputError("expected 1 or 2 columns, found {}".format(width), line=lineno)
        elif len(row) != width:
            raise InvalidInputError("ragged row: expected {} columns, found {}".format(width, len(row)),
                                    line=lineno)
        rows.append(row)
    if not rows:
        raise InvalidInputError("{} contains no data rows".format(path))
    log.debug("read %d rows with %d column(s) from %s", len(rows), width, path)
    if width == 1:
        return Sample([r[0] for r in rows])
    return Sample2D([r[0] for r in rows], [r[1] for r in rows])


def read_kv(path):
    """Flat key=value file; '#' comments and blank lines are ignored."""
    out = {}
    for lineno, line in _data_lines(path):
        if "=" not in line:
            raise InvalidInputError("expected key=value, got {!r}".format(line), line=lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise InvalidInputError("empty key", line=lineno)
        if key in out:
            log.warning("%s: key %r repeated on line %d; last value wins", path, key, lineno)
        out[key] = value.strip()
    return out

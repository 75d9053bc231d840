"""Small file helpers: atomic writes and commented CSV headers."""

import json
import os
import tempfile

FORMAT_VERSION = 1


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header_lines(config):
    """Comment lines embedding the format version and resolved config."""
    if config is None:
        return []
    meta = {"format_version": FORMAT_VERSION, "config": config}
    return ["# " + json.dumps(meta, sort_keys=True, default=str)]


def read_csv_rows(path):
    """Return (header, rows, meta) for a comma separated file.

    Lines starting with ``#`` are metadata; the first one holding JSON is
    returned as ``meta``.  Blank lines are skipped.
    """
    meta = None
    header = None
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if meta is None:
                    try:
                        meta = json.loads(line[1:].strip())
                    except json.JSONDecodeError:
                        pass
                continue
            cells = [c.strip() for c in line.split(",")]
            if header is None:
                header = cells
            else:
                rows.append((lineno, cells))
    return header, rows, meta


def format_float(value):
    """17 significant digits, enough to round-trip any float64."""
    return f"{float(value):.17g}"

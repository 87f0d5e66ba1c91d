"""Small file-writing helpers shared by the library and the CLI."""

from __future__ import annotations

import os
import tempfile


def atomic_write_text(path, text: str) -> None:
    """Write text to ``path`` via a temp file + rename in one directory.

    Readers never observe a half-written file; on failure the target is
    left untouched.
    """
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def fmt_float(v: float) -> str:
    """Shortest round-trip decimal form, used by every CSV writer."""
    return repr(float(v))

import csv
import io
import json
import os
import pathlib
import tempfile

from typing import Any, Dict, Iterable, List, Sequence


def read_file(filepath: str) -> str:
    with open(filepath, mode="r") as fp:
        return fp.read()


def write_file(obj: str, filepath: str) -> None:
    """
    Replace `filepath` with `obj`. The content goes to a temporary sibling first
    so readers never observe a half-written artifact.
    """
    directory = os.path.dirname(os.path.abspath(filepath))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, mode="w", newline="") as fp:
            fp.write(obj)
        os.replace(tmp, filepath)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(obj: Any, filepath: str) -> None:
    write_file(json.dumps(obj, sort_keys=True, indent=2) + "\n", filepath)


def write_csv(
    header: Sequence[str], rows: Iterable[Sequence[Any]], filepath: pathlib.Path
) -> int:
    """Write `rows` under `header`; floats keep their full repr. Returns the row count."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    count = 0
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        count += 1
    write_file(buffer.getvalue(), str(filepath))
    return count


def read_csv(filepath: pathlib.Path) -> List[Dict[str, str]]:
    with open(filepath, mode="r", newline="") as fp:
        return list(csv.DictReader(fp))


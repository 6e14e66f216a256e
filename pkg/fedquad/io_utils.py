
import os
import tempfile

import pandas as pd

from .errors import ArtifactIOError


def ensure_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"cannot create directory {path}: {e}") from e
    return path


def ensure_parent(path: str):
    ensure_dir(os.path.dirname(path) or ".")


def atomic_write_bytes(path: str, data: bytes):
    """Write to a temp file in the target directory, then rename over `path`."""
    try:
        ensure_parent(path)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=os.path.dirname(path) or ".")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
    except ArtifactIOError:
        raise
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def save_csv(df: pd.DataFrame, path: str):
    # lineterminator fixed so files are byte-identical across platforms
    atomic_write_text(path, df.to_csv(index=False, lineterminator="\n"))


def load_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e

"""Deterministic single-file archives of named arrays plus JSON metadata.

Files are uncompressed zips with fixed member timestamps, so identical
contents always produce identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np

FORMAT = "msgc-checkpoint/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = dict(meta, format=FORMAT,
                arrays={k: {"shape": list(np.shape(v)), "dtype": str(np.asarray(v).dtype)}
                        for k, v in arrays.items()})
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_member("meta.json"), json.dumps(meta, indent=1, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(_member(f"arrays/{name}.npy"), buf.getvalue())


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not a checkpoint ({meta.get('format')!r})")
        arrays = {}
        for name in meta["arrays"]:
            with zf.open(f"arrays/{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return meta, arrays

"""Checkpoint snapshots and their on-disk format.

On disk a checkpoint is two files: a text manifest with one line per
parameter (``id= block_label= shape= offset= frozen=``) and a raw
little-endian float64 payload next to it (``<manifest>.bin``).
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


@dataclass
class Entry:
    id: str
    block_label: str
    values: np.ndarray
    frozen: bool


class Checkpoint:
    """An ordered, immutable-by-convention copy of parameter values."""

    def __init__(self, entries):
        self.entries = list(entries)
        self._by_id = {e.id: e for e in self.entries}

    @classmethod
    def capture(cls, params):
        return cls(Entry(p.id, p.block_label, p.values.copy(), p.frozen) for p in params)

    def __getitem__(self, pid):
        return self._by_id[pid]

    def __contains__(self, pid):
        return pid in self._by_id

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def ids(self):
        return [e.id for e in self.entries]

    def restore(self, params, strict=True):
        """Copy stored values back into live parameters (in place)."""
        for p in params:
            if p.id not in self._by_id:
                if strict:
                    raise KeyError(f"parameter {p.id!r} missing from checkpoint")
                continue
            src = self._by_id[p.id].values
            if src.shape != p.values.shape:
                raise ValueError(f"shape mismatch for {p.id!r}: {src.shape} vs {p.values.shape}")
            p.values[...] = src


def payload_path(manifest_path):
    manifest_path = Path(manifest_path)
    return manifest_path.with_name(manifest_path.name + ".bin")


def save_checkpoint(source, path):
    """Write ``source`` (a Checkpoint or iterable of Parameters) to ``path``."""
    ckpt = source if isinstance(source, Checkpoint) else Checkpoint.capture(source)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# codepersona checkpoint v{FORMAT_VERSION}", f"payload={payload_path(path).name}"]
    offset = 0
    with open(payload_path(path), "wb") as fh:
        for e in ckpt:
            shape = "x".join(str(n) for n in e.values.shape) or "scalar"
            lines.append(
                f"id={e.id} block_label={e.block_label} shape={shape} "
                f"offset={offset} frozen={int(e.frozen)}"
            )
            raw = np.ascontiguousarray(e.values, dtype=_LE_F64).tobytes()
            fh.write(raw)
            offset += len(raw)
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_line(line):
    fields = dict(tok.split("=", 1) for tok in line.split())
    shape = () if fields["shape"] == "scalar" else tuple(int(n) for n in fields["shape"].split("x"))
    return fields["id"], fields["block_label"], shape, int(fields["offset"]), fields["frozen"] == "1"


def load_checkpoint(path):
    path = Path(path)
    text = path.read_text().splitlines()
    payload = payload_path(path).read_bytes()
    entries = []
    for line in text:
        if not line or line.startswith("#") or line.startswith("payload="):
            continue
        pid, label, shape, offset, frozen = _parse_line(line)
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(payload, dtype=_LE_F64, count=count, offset=offset)
        entries.append(Entry(pid, label, values.astype(np.float64).reshape(shape), frozen))
    return Checkpoint(entries)

"""Binary file formats. All integers are little-endian u32, all tensors little-endian f32.

``SPEC1``  one spectrogram: magic, n_time, n_freq, values (time-major).
``SPDS1``  labelled set: magic, count, n_time, n_freq, n_classes, then
           ``count`` records of (label, n_time*n_freq values).
``APC1``   controller checkpoint: magic, search space, widths, optimizer
           scalars, then named tensors.
``TRN1``   toy classifier checkpoint: magic, widths, then named tensors.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .controller import PARAM_NAMES, AdamState, ControllerState
from .core import OperationKind, SearchSpace, Spectrogram
from .trainee import LabeledSet, ToyClassifier

SPEC_MAGIC = b"SPEC1"
SPDS_MAGIC = b"SPDS1"
APC_MAGIC = b"APC1"
TRN_MAGIC = b"TRN1"

F32 = np.dtype("<f4")


class FormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.buf = memoryview(data)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}")
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, n: int) -> list[int]:
        return list(struct.unpack(f"<{n}I", self.take(4 * n)))

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype=F32).astype(np.float64)

    def magic(self, magic: bytes) -> None:
        if self.take(len(magic)) != magic:
            raise FormatError(f"{self.what}: bad magic, expected {magic!r}")

    def end(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")


def _u32(*vals) -> bytes:
    return struct.pack(f"<{len(vals)}I", *vals)


def _f32(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise FormatError("refusing to write non-finite values")
    return np.ascontiguousarray(a, dtype=F32).tobytes()


# -- spectrograms and datasets ------------------------------------------------

def spectrogram_bytes(s: Spectrogram) -> bytes:
    return SPEC_MAGIC + _u32(s.n_time, s.n_freq) + _f32(s.values)


def spectrogram_from_bytes(data: bytes) -> Spectrogram:
    r = _Reader(data, "SPEC1")
    r.magic(SPEC_MAGIC)
    n_time, n_freq = r.u32s(2)
    values = r.f32s(n_time * n_freq).reshape(n_time, n_freq)
    r.end()
    return Spectrogram(values)


def write_spectrogram(path, s: Spectrogram) -> None:
    atomic_write(path, spectrogram_bytes(s))


def read_spectrogram(path) -> Spectrogram:
    return spectrogram_from_bytes(Path(path).read_bytes())


def dataset_bytes(ds: LabeledSet) -> bytes:
    n, t, f = ds.x.shape
    out = io.BytesIO()
    out.write(SPDS_MAGIC + _u32(n, t, f, ds.n_classes))
    for label, x in zip(ds.y, ds.x):
        out.write(_u32(int(label)))
        out.write(_f32(x))
    return out.getvalue()


def dataset_from_bytes(data: bytes) -> LabeledSet:
    r = _Reader(data, "SPDS1")
    r.magic(SPDS_MAGIC)
    n, t, f, n_classes = r.u32s(4)
    # records are (u32 label, t*f f32) so read them as one structured array
    rec = np.dtype([("label", "<u4"), ("x", F32, (t, f))])
    body = r.take(rec.itemsize * n)
    r.end()
    arr = np.frombuffer(body, dtype=rec)
    labels = arr["label"].astype(np.int64)
    if n and labels.max() >= n_classes:
        raise FormatError(f"SPDS1: label {labels.max()} >= n_classes {n_classes}")
    return LabeledSet(arr["x"].astype(np.float64), labels, n_classes)


def write_dataset(path, ds: LabeledSet) -> None:
    atomic_write(path, dataset_bytes(ds))


def read_dataset(path) -> LabeledSet:
    return dataset_from_bytes(Path(path).read_bytes())


# -- checkpoints --------------------------------------------------------------

def _tensors_bytes(tensors: list[tuple[str, np.ndarray]]) -> bytes:
    out = [_u32(len(tensors))]
    for name, a in tensors:
        a = np.asarray(a)
        raw = name.encode("ascii")
        out.append(_u32(len(raw)) + raw + _u32(a.ndim, *a.shape) + _f32(a))
    return b"".join(out)


def _read_tensors(r: _Reader) -> dict:
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("ascii")
        shape = tuple(r.u32s(r.u32()))
        tensors[name] = r.f32s(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    return tensors


def controller_bytes(c: ControllerState) -> bytes:
    sp = c.space
    head = [APC_MAGIC, _u32(sp.policy_length, int(sp.distinct))]
    for grid in ([int(k) for k in sp.kinds], sp.counts, sp.sizes, sp.warps):
        head.append(_u32(len(grid), *grid))
    head.append(_u32(c.hidden, c.embed, c.adam.step))
    head.append(struct.pack("<5d", c.lr, c.entropy_weight, c.adam.beta1, c.adam.beta2, c.adam.eps))
    tensors = [(k, c.params[k]) for k in PARAM_NAMES]
    if c.adam.step:
        tensors += [(f"adam_m.{k}", c.adam.m[k]) for k in PARAM_NAMES if k in c.adam.m]
        tensors += [(f"adam_v.{k}", c.adam.v[k]) for k in PARAM_NAMES if k in c.adam.v]
    return b"".join(head) + _tensors_bytes(tensors)


def controller_from_bytes(data: bytes) -> ControllerState:
    r = _Reader(data, "APC1")
    r.magic(APC_MAGIC)
    length, distinct = r.u32s(2)
    kinds, counts, sizes, warps = (r.u32s(r.u32()) for _ in range(4))
    space = SearchSpace(tuple(OperationKind(k) for k in kinds), tuple(counts), tuple(sizes), tuple(warps),
                        length, bool(distinct))
    hidden, embed, step = r.u32s(3)
    lr, lam, b1, b2, eps = struct.unpack("<5d", r.take(40))
    tensors = _read_tensors(r)
    r.end()
    params = {k: tensors.pop(k) for k in PARAM_NAMES}
    adam = AdamState(b1, b2, eps, step)
    for name, a in tensors.items():
        kind, _, key = name.partition(".")
        getattr(adam, kind[-1])[key] = a
    return ControllerState(space, params, hidden, embed, lr, lam, adam)


def save_controller(path, c: ControllerState) -> None:
    atomic_write(path, controller_bytes(c))


def load_controller(path) -> ControllerState:
    return controller_from_bytes(Path(path).read_bytes())


def trainee_bytes(model: ToyClassifier) -> bytes:
    head = TRN_MAGIC + _u32(model.n_freq, model.n_classes, model.hidden)
    return head + _tensors_bytes(sorted(model.params.items()))


def trainee_from_bytes(data: bytes) -> ToyClassifier:
    r = _Reader(data, "TRN1")
    r.magic(TRN_MAGIC)
    n_freq, n_classes, hidden = r.u32s(3)
    tensors = _read_tensors(r)
    r.end()
    model = ToyClassifier(n_freq, n_classes, hidden, zero=True)
    model.restore(tensors)
    return model

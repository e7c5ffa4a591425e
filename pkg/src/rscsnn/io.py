"""Binary dataset and checkpoint formats, atomic writes, run configs.

Dataset file (little-endian)::

    b"TDS1" | u8 dtype code | u8 rank | u32 dims[rank] | payload (row-major)

dtype codes: 1 = uint8, 2 = float32, 3 = float64.

Label file::

    b"TLB1" | u32 n | u32 k | u32 labels[n]

Checkpoint::

    b"RSCSNN01" | u32 format version | u32 header length | header (UTF-8 JSON,
    sorted keys) | u64 value count | float64 values

The header stores the network spec, coding config, RNG identifier, seeds,
training metadata and the ordered parameter/buffer names and shapes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .attacks import AttackConfig
from .coding import RNG_ID, CodingConfig
from .model import Classifier
from .snn import Network, NetworkSpec
from .training import TrainConfig

DATA_MAGIC = b"TDS1"
LABEL_MAGIC = b"TLB1"
CKPT_MAGIC = b"RSCSNN01"
CKPT_VERSION = 1

_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<f4"), 3: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    """A file does not match the expected binary layout."""


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@contextmanager
def directory_lock(directory):
    """Hold ``directory/.lock`` exclusively; fail fast if another writer has it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RuntimeError(f"output directory {directory} is locked by another run ({lock})") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# -- datasets -----------------------------------------------------------------

def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("<", "|", "=") else arr.dtype
    dt = np.dtype(dt.str.replace("=", "<"))
    if dt not in _CODES:
        arr = arr.astype("<f8")
        dt = np.dtype("<f8")
    head = DATA_MAGIC + struct.pack("<BB", _CODES[dt], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != DATA_MAGIC:
        raise FormatError("not a TDS1 tensor file (bad magic)")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    off = 6 + 4 * rank
    dt = _DTYPES[code]
    expected = int(np.prod(dims)) * dt.itemsize
    if len(buf) - off != expected:
        raise FormatError(f"payload has {len(buf) - off} bytes, header implies {expected}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def encode_labels(y: np.ndarray, k: int) -> bytes:
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise FormatError(f"labels must lie in [0, {k})")
    return LABEL_MAGIC + struct.pack("<II", y.size, k) + y.astype("<u4").tobytes()


def decode_labels(buf: bytes) -> tuple[np.ndarray, int]:
    if buf[:4] != LABEL_MAGIC:
        raise FormatError("not a TLB1 label file (bad magic)")
    n, k = struct.unpack_from("<II", buf, 4)
    if len(buf) - 12 != 4 * n:
        raise FormatError(f"label payload has {len(buf) - 12} bytes, expected {4 * n}")
    y = np.frombuffer(buf, dtype="<u4", offset=12).astype(np.int64)
    if y.size and y.max() >= k:
        raise FormatError(f"label {y.max()} out of range for k={k}")
    return y, k


def save_dataset(prefix, x: np.ndarray, y: np.ndarray, k: int) -> tuple[Path, Path]:
    """Write ``prefix.tds`` and ``prefix.tlb``."""
    prefix = Path(prefix)
    data_path, label_path = prefix.with_suffix(".tds"), prefix.with_suffix(".tlb")
    atomic_write(data_path, encode_tensor(np.asarray(x, dtype=np.float64)))
    atomic_write(label_path, encode_labels(y, k))
    return data_path, label_path


def load_dataset(prefix) -> tuple[np.ndarray, np.ndarray, int]:
    prefix = Path(prefix)
    x = decode_tensor(prefix.with_suffix(".tds").read_bytes()).astype(np.float64)
    y, k = decode_labels(prefix.with_suffix(".tlb").read_bytes())
    if len(x) != len(y):
        raise FormatError(f"{len(x)} images but {len(y)} labels")
    return x, y, k


# -- checkpoints ------------------------------------------------------------------

@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: np.ndarray
    coding: CodingConfig | None
    ann: bool = False
    seeds: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    names: list = field(default_factory=list)

    def build(self) -> Classifier:
        net = Network(self.spec, ann=self.ann)
        net.load_flat_parameters(self.params)
        return Classifier(net, None if self.ann else self.coding)

    @classmethod
    def from_classifier(cls, model: Classifier, seeds=None, meta=None) -> "Checkpoint":
        net = model.net
        names = [[k, list(v.shape)] for k, v in net.params.items()]
        names += [[k, list(v.shape)] for k, v in net.buffers.items()]
        return cls(net.spec, net.flat_parameters(), model.coding, net.ann, dict(seeds or {}),
                   dict(meta or {}), names)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    header = {
        "network": ck.spec.to_dict(),
        "ann": ck.ann,
        "coding": ck.coding.to_dict() if ck.coding else None,
        "rng": RNG_ID,
        "seeds": ck.seeds,
        "meta": ck.meta,
        "tensors": ck.names,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = np.ascontiguousarray(ck.params, dtype="<f8")
    return (CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb
            + struct.pack("<Q", blob.size) + blob.tobytes())


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:8] != CKPT_MAGIC:
        raise FormatError("not an RSCSNN01 checkpoint (bad magic)")
    if len(buf) < 16:
        raise FormatError("checkpoint truncated inside the fixed header")
    version, hlen = struct.unpack_from("<II", buf, 8)
    if version != CKPT_VERSION:
        raise FormatError(f"checkpoint format version {version} unsupported (expected {CKPT_VERSION})")
    off = 16 + hlen
    if len(buf) < off + 8:
        raise FormatError("checkpoint truncated inside the JSON header")
    try:
        header = json.loads(buf[16:off].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    (count,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) - off != 8 * count:
        raise FormatError("checkpoint truncated: parameter blob length mismatch")
    params = np.frombuffer(buf, dtype="<f8", offset=off).astype(np.float64)
    try:
        coding = CodingConfig(**header["coding"]) if header["coding"] else None
        return Checkpoint(NetworkSpec.from_dict(header["network"]), params, coding, header["ann"],
                          header["seeds"], header["meta"], header["tensors"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}") from exc


def save_checkpoint(path, ck: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ck))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# -- run configuration ------------------------------------------------------------

class ConfigError(ValueError):
    """Invalid run configuration."""


def _section(cls, data, name):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


@dataclass
class EvalConfig:
    n_eval_noise: int = 1
    vote: bool = False
    seed: int = 0


@dataclass
class PathsConfig:
    dataset: str = ""
    val_dataset: str = ""
    output: str = "runs/default"
    teacher: str = ""


@dataclass
class RunConfig:
    network: NetworkSpec | None  # None: toy network sized from the dataset
    coding: CodingConfig
    train: TrainConfig
    attack: list
    eval: EvalConfig
    paths: PathsConfig
    init_seed: int = 0

    def echo(self) -> dict:
        return {
            "network": self.network.to_dict() if self.network else "toy",
            "coding": self.coding.to_dict(),
            "train": self.train.to_dict(),
            "attack": [a.to_dict() for a in self.attack],
            "eval": vars(self.eval),
            "paths": vars(self.paths),
            "init_seed": self.init_seed,
        }


SECTIONS = ("network", "coding", "train", "attack", "eval", "paths", "init_seed")


def parse_config(doc: dict) -> RunConfig:
    doc = dict(doc or {})
    extra = set(doc) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    try:
        net_doc = doc.get("network")
        network = NetworkSpec.from_dict(net_doc) if net_doc else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"[network]: {exc}") from exc
    coding_doc = dict(doc.get("coding") or {})
    if "T" not in coding_doc and "scheme" in coding_doc:
        from .coding import DEFAULT_T

        coding_doc["T"] = DEFAULT_T.get(coding_doc["scheme"], 8)
    coding = _section(CodingConfig, coding_doc, "coding")
    train = _section(TrainConfig, doc.get("train"), "train")
    attacks = [_section(AttackConfig, a, "attack") for a in (doc.get("attack") or [])]
    return RunConfig(network, coding, train, attacks, _section(EvalConfig, doc.get("eval"), "eval"),
                     _section(PathsConfig, doc.get("paths"), "paths"), int(doc.get("init_seed", 0)))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if doc is not None and not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return parse_config(doc)

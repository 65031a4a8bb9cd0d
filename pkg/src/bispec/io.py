"""
File formats: RFC-4180 CSV with 17-significant-digit floats, UTF-8 JSON with
stable key order, a little-endian binary format for coefficient sets, the flat
TOML experiment config and the run manifest.
"""

import csv
import hashlib
import io
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .sphere import HarmonicCoefficientSet

__all__ = [
    "format_value",
    "write_csv",
    "read_csv",
    "dumps_json",
    "write_json",
    "save_alm",
    "load_alm",
    "AlmHeader",
    "load_config",
    "parse_config",
    "config_hash",
    "RunManifest",
    "sha256_file",
]


def format_value(x):
    """Text form of a CSV cell: 17 significant digits for floats."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(target, header, rows):
    """Write rows as RFC-4180 CSV (CRLF line ends) to a path or text stream."""
    own = not hasattr(target, "write")
    fh = open(target, "w", newline="", encoding="utf-8") if own else target
    try:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(x) for x in row])
    finally:
        if own:
            fh.close()


def read_csv(source):
    """Parse CSV text (path or stream) into (header, rows of strings)."""
    own = not hasattr(source, "read")
    fh = open(source, newline="", encoding="utf-8") if own else source
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows:
        raise ValueError("empty CSV input")
    return rows[0], rows[1:]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dumps_json(obj):
    """JSON text in insertion (stable) key order, non-finite floats as null."""
    return json.dumps(_jsonable(obj), indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


# --------------------------------------------------------------------------
# coefficient binary format
# --------------------------------------------------------------------------

_ALM_MAGIC = b"BSPALM\x00\x00"
_ALM_VERSION = 1
_ALM_HEADER = struct.Struct("<8sIIQQdQI")   # magic, version, band, seed, stream, f_nl, count, crc


@dataclass(frozen=True)
class AlmHeader:
    band: int
    seed: int
    stream: int
    f_nl: float


def _packed_index(band):
    ell, m = np.tril_indices(band + 1)
    keep = ell >= 1
    return ell[keep], m[keep]


def save_alm(path, alms, seed, stream, f_nl):
    """Write one coefficient set: header then complex128 values, l >= 1, 0 <= m <= l."""
    alm = alms.alm if isinstance(alms, HarmonicCoefficientSet) else np.asarray(alms)
    if alm.ndim != 2:
        raise ValueError("save_alm writes a single (unbatched) coefficient set")
    band = alm.shape[-1] - 1
    ell, m = _packed_index(band)
    payload = np.ascontiguousarray(alm[ell, m], dtype="<c16").tobytes()
    header = _ALM_HEADER.pack(_ALM_MAGIC, _ALM_VERSION, band, int(seed), int(stream), float(f_nl),
                              len(ell), zlib.crc32(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_alm(path):
    """Read a file written by :func:`save_alm`; returns (AlmHeader, set)."""
    raw = Path(path).read_bytes()
    if len(raw) < _ALM_HEADER.size:
        raise ValueError("truncated coefficient file")
    magic, version, band, seed, stream, f_nl, count, crc = _ALM_HEADER.unpack_from(raw)
    if magic != _ALM_MAGIC:
        raise ValueError("not a coefficient file")
    if version != _ALM_VERSION:
        raise ValueError(f"unsupported coefficient file version {version}")
    payload = raw[_ALM_HEADER.size:]
    ell, m = _packed_index(band)
    if count != len(ell) or len(payload) != 16 * count:
        raise ValueError("coefficient payload does not match the header")
    if zlib.crc32(payload) != crc:
        raise ValueError("coefficient file checksum mismatch")
    alm = np.zeros((band + 1, band + 1), dtype=complex)
    alm[ell, m] = np.frombuffer(payload, dtype="<c16")
    return AlmHeader(band, seed, stream, f_nl), HarmonicCoefficientSet(alm)


# --------------------------------------------------------------------------
# config and manifest
# --------------------------------------------------------------------------

def parse_config(text):
    """Parse a flat key = value document (TOML grammar, no tables)."""
    data = tomllib.loads(text)
    for key, value in data.items():
        if isinstance(value, dict):
            raise ValueError(f"config must be flat; [{key}] tables are not allowed")
    return data


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def config_hash(config_dict):
    """SHA-256 of the canonical (sorted-key, compact) JSON form of a config."""
    canon = json.dumps(_jsonable(config_dict), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    config_hash: str
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str = ""
    output_paths: dict = field(default_factory=dict)

    def add(self, path, root):
        self.output_paths[str(Path(path).relative_to(root))] = sha256_file(path)

    def finish(self):
        self.finished = datetime.now(timezone.utc).isoformat()

    def to_dict(self):
        return asdict(self)


def csv_text(header, rows):
    buf = io.StringIO()
    write_csv(buf, header, rows)
    return buf.getvalue()

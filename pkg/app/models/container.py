# app/models/container.py
"""Versioned little-endian container for features and checkpoints.

Layout::

    magic     4 bytes   b"SFGN"
    version   u32
    kind      4 bytes   b"FEAT" or b"CKPT"
    hdr_len   u64
    header    hdr_len bytes of UTF-8 JSON: {"meta": {...}, "blobs": [...]}
    blobs     raw little-endian arrays, back to back

Each blob index entry holds ``name``, ``dtype`` (numpy string, e.g. "<f4"),
``shape``, ``offset`` (from the start of the blob area) and ``nbytes``.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

from app.errors import ContainerError

MAGIC = b'SFGN'
VERSION = 1
KIND_FEATURES = b'FEAT'
KIND_CHECKPOINT = b'CKPT'

_PREAMBLE = struct.Struct('<4sI4sQ')
_ALLOWED_DTYPES = {'<f4', '<f8', '<i4', '<i8', '|u1', '|b1', '<u8', '<u4'}


def _little_endian(arr):
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype.byteorder == '>' or (arr.dtype.byteorder == '=' and not np.little_endian):
        arr = arr.astype(arr.dtype.newbyteorder('<'))
    return arr


def write_container(path, kind, meta, blobs):
    """Serialise ``meta`` (JSON-able dict) and named numpy arrays to ``path``"""
    index = []
    payloads = []
    offset = 0
    for name, value in blobs.items():
        arr = _little_endian(np.asarray(value))
        dtype = arr.dtype.str
        if dtype not in _ALLOWED_DTYPES:
            raise ContainerError(f"Unsupported blob dtype for '{name}': {dtype}")
        data = arr.tobytes()
        index.append({'name': name, 'dtype': dtype, 'shape': list(arr.shape), 'offset': offset, 'nbytes': len(data)})
        payloads.append(data)
        offset += len(data)

    header = json.dumps({'meta': meta, 'blobs': index}, sort_keys=True).encode('utf-8')
    os.makedirs(Path(path).parent, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'wb') as f:
        f.write(_PREAMBLE.pack(MAGIC, VERSION, kind, len(header)))
        f.write(header)
        for data in payloads:
            f.write(data)
    os.replace(tmp_path, path)


def read_container(path, expected_kind=None):
    """Return ``(meta, blobs)``; every structural problem raises ContainerError"""
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _PREAMBLE.size:
        raise ContainerError(f"Container {path} is truncated ({len(raw)} bytes)")
    magic, version, kind, header_len = _PREAMBLE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ContainerError(f"Not a container file: {path} (magic {magic!r})")
    if version > VERSION:
        raise ContainerError(f"Unsupported container version: {version} (this build reads up to {VERSION})")
    if expected_kind is not None and kind != expected_kind:
        raise ContainerError(f"Container {path} holds {kind.decode('ascii', 'replace')}, expected "
                             f"{expected_kind.decode('ascii')}")

    start = _PREAMBLE.size
    if start + header_len > len(raw):
        raise ContainerError(f"Container {path} header runs past the end of the file")
    try:
        header = json.loads(raw[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"Container {path} has an unreadable header: {e}") from e

    base = start + header_len
    blobs = {}
    for entry in header.get('blobs', []):
        try:
            name, dtype, shape = entry['name'], entry['dtype'], tuple(entry['shape'])
            offset, nbytes = int(entry['offset']), int(entry['nbytes'])
        except (KeyError, TypeError, ValueError) as e:
            raise ContainerError(f"Container {path} has a malformed blob entry: {entry}") from e
        if dtype not in _ALLOWED_DTYPES:
            raise ContainerError(f"Blob '{name}' has unsupported dtype {dtype}")
        expected = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
        if expected != nbytes:
            raise ContainerError(f"Blob '{name}' size {nbytes} does not match shape {list(shape)} of {dtype}")
        if base + offset + nbytes > len(raw):
            raise ContainerError(f"Blob '{name}' runs past the end of {path}")
        arr = np.frombuffer(raw, dtype=dtype, count=expected // np.dtype(dtype).itemsize, offset=base + offset)
        blobs[name] = arr.reshape(shape).astype(np.dtype(dtype).newbyteorder('='))
    return header.get('meta', {}), blobs


def with_prefix(prefix, state):
    return {f"{prefix}/{name}": value for name, value in state.items()}


def section(blobs, prefix):
    """Blobs under ``prefix/`` with the prefix stripped"""
    marker = f"{prefix}/"
    return {name[len(marker):]: value for name, value in blobs.items() if name.startswith(marker)}

"""The "STWN" weight container for networks and linear classifiers.

Layout (all integers little-endian):

    magic "STWN" | u32 version=1 | u8 model kind (0 = network, 1 = svm)

Network payload: u8 input rank, u32 per dim; u32 layer count; then per
layer a descriptor (u8 kind code, length-prefixed name, kernel dims,
stride dims, u32 out_channels or 0) followed by its parameter tensors
(u8 count, each: u8 rank, u32 dims, float32 payload).

SVM payload: u32 classes, u32 feature length, f64 lambda, float32 weight
matrix then float32 bias vector.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"STWN"
VERSION = 1
KIND_NETWORK = 0
KIND_SVM = 1


class Writer:
    def __init__(self):
        self.parts = []

    def bytes_(self, b):
        self.parts.append(b)

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def name(self, s):
        raw = s.encode("utf-8")
        self.u16(len(raw))
        self.bytes_(raw)

    def tensor(self, arr):
        arr = np.ascontiguousarray(arr, dtype="<f4")
        self.u8(arr.ndim)
        for d in arr.shape:
            self.u32(d)
        self.bytes_(arr.tobytes())

    def getvalue(self):
        return b"".join(self.parts)


class Reader:
    def __init__(self, blob, path="<blob>"):
        self.blob = blob
        self.pos = 0
        self.path = path

    def fail(self, why):
        raise FormatError(f"{self.path}: {why}")

    def take(self, n):
        if self.pos + n > len(self.blob):
            self.fail("truncated file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def name(self):
        n = self.u16()
        return self.take(n).decode("utf-8")

    def tensor(self):
        ndim = self.u8()
        shape = tuple(self.u32() for _ in range(ndim))
        count = 1
        for d in shape:
            count *= d
        data = np.frombuffer(self.take(count * 4), dtype="<f4")
        return data.reshape(shape).copy()

    def done(self):
        if self.pos != len(self.blob):
            self.fail(f"{len(self.blob) - self.pos} trailing bytes")


def open_container(path, expected_kind):
    with open(path, "rb") as f:
        blob = f.read()
    r = Reader(blob, path=str(path))
    if r.take(4) != MAGIC:
        r.fail("bad magic")
    version = r.u32()
    if version != VERSION:
        r.fail(f"unsupported version {version}")
    kind = r.u8()
    if kind != expected_kind:
        r.fail(f"model kind {kind} does not match expected {expected_kind}")
    return r


def new_container(kind):
    w = Writer()
    w.bytes_(MAGIC)
    w.u32(VERSION)
    w.u8(kind)
    return w

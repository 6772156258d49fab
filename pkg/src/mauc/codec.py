"""Lossless codec: framed streams produced by a 64-bit carry-propagating range
coder driven by the CTW predictive model.

Stream layout (byte exact, big endian):

    magic "MAUC" | version=1 | mode (0/1/2) | k (2B) | depth (1B) | n (8B)
    | memory_digest (8B, zero for mode 0) | cluster_id (2B, mode 2 only)
    | payload bit count (8B) | payload, zero-padded to a byte boundary

Modes: 0 = plain universal coding, 1 = memory-primed, 2 = memory-primed with a
cluster id recorded so both sides prime with the same cluster.

Predictive probabilities are quantized to 30-bit integer frequencies with a
floor of 1, identically on both sides. The final flush picks the shortest bit
string inside the final interval and then pads so that the declared payload
bit count always lands in [ideal, ideal + 2).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .ctw import ContextTree, batch_codelength
from .errors import InvalidParameterError, MemoryDesyncError, StreamFormatError
from .source_model import MemoryStore

MAGIC = b"MAUC"
VERSION = 1

MODE_UCOMP = "ucomp"
MODE_UCOMPM = "ucompm"
MODE_UCOMPCM = "ucompcm"
MODES = (MODE_UCOMP, MODE_UCOMPM, MODE_UCOMPCM)
_MODE_BYTE = {MODE_UCOMP: 0, MODE_UCOMPM: 1, MODE_UCOMPCM: 2}
_BYTE_MODE = {v: m for m, v in _MODE_BYTE.items()}

_MASK64 = (1 << 64) - 1
_TOP = 1 << 56
_FF_TOP = 0xFF << 56
_TOT_BITS = 30
_TOT = 1 << _TOT_BITS


class RangeEncoder:
    """Carry-propagating byte-oriented range coder (64-bit window)."""

    def __init__(self):
        self._low = 0
        self._range = 1 << 64
        self._cache = 0
        self._ff_run = 0
        self._started = False
        self._out = bytearray()

    def encode(self, cum: int, freq: int, tot: int) -> None:
        r = self._range // tot
        self._low += r * cum
        self._range = r * freq
        while self._range < _TOP:
            self._shift_low()
            self._range <<= 8

    def _shift_low(self) -> None:
        low = self._low
        if low < _FF_TOP or low > _MASK64:
            carry = low >> 64
            if self._started:
                self._out.append((self._cache + carry) & 0xFF)
            elif carry:
                raise AssertionError("carry before the first output byte")
            if self._ff_run:
                self._out.extend(bytes([(0xFF + carry) & 0xFF]) * self._ff_run)
                self._ff_run = 0
            self._cache = (low >> 56) & 0xFF
            self._started = True
        else:
            self._ff_run += 1
        self._low = (low << 8) & _MASK64

    def finish(self, min_bits: int = 0) -> tuple[bytes, int]:
        """Close the stream; returns (payload, payload_bits).

        Picks the value with the most trailing zero bits inside the final
        interval, then pads the declared bit count up to min_bits.
        """
        low, rng = self._low, self._range
        s = 0
        for s in range(64, -1, -1):
            step = 1 << s
            v = ((low + step - 1) >> s) << s
            if v < low + rng:
                break
        self._low = v
        for _ in range(8):
            self._shift_low()
        if self._started:
            self._out.append(self._cache)
        if self._ff_run:
            self._out.extend(b"\xff" * self._ff_run)
            self._ff_run = 0
        bits = max(8 * len(self._out) - s, min_bits, 0)
        nbytes = (bits + 7) // 8
        if nbytes <= len(self._out):
            payload = bytes(self._out[:nbytes])
        else:
            payload = bytes(self._out) + b"\x00" * (nbytes - len(self._out))
        return payload, bits


class RangeDecoder:
    """Mirror of RangeEncoder; reads zeros past the end of the payload."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._range = 1 << 64
        self._state = 0
        self._r = 0
        for _ in range(8):
            self._state = (self._state << 8) | self._next_byte()

    def _next_byte(self) -> int:
        b = self._data[self._pos] if self._pos < len(self._data) else 0
        self._pos += 1
        return b

    def decode_target(self, tot: int) -> int:
        self._r = self._range // tot
        t = self._state // self._r
        return t if t < tot else tot - 1

    def consume(self, cum: int, freq: int) -> None:
        self._state -= self._r * cum
        self._range = self._r * freq
        while self._range < _TOP:
            self._state = (self._state << 8) | self._next_byte()
            self._range <<= 8


def _quantize(p: np.ndarray) -> np.ndarray:
    """30-bit integer frequencies, floor 1, summing exactly to 2**30."""
    f = np.floor(p * _TOT).astype(np.int64)
    np.maximum(f, 1, out=f)
    f[int(np.argmax(f))] += _TOT - int(f.sum())
    return f


def memory_digest(sequences) -> int:
    """64-bit FNV-1a over the memory: per sequence, 8 length bytes then one
    byte per symbol. Cheap desync detection, not cryptographic."""
    h = 0xCBF29CE484222325
    prime = 0x100000001B3
    for seq in sequences:
        arr = np.asarray(seq)
        blob = struct.pack(">Q", arr.size) + arr.astype(np.uint8).tobytes()
        for b in blob:
            h = ((h ^ b) * prime) & _MASK64
    return h


@dataclass
class CodeStream:
    """A framed compressed sequence."""

    mode: str
    k: int
    depth: int
    n: int
    memory_digest: int
    payload_bits: int
    payload: bytes
    cluster_id: int | None = None

    def to_bytes(self) -> bytes:
        if self.mode not in MODES:
            raise InvalidParameterError(f"unknown mode {self.mode!r}")
        if self.mode == MODE_UCOMPCM and self.cluster_id is None:
            raise InvalidParameterError("cluster_id required for clustered-memory streams")
        head = MAGIC + struct.pack(">BBHBQQ", VERSION, _MODE_BYTE[self.mode],
                                   self.k, self.depth, self.n, self.memory_digest)
        if self.mode == MODE_UCOMPCM:
            head += struct.pack(">H", self.cluster_id)
        return head + struct.pack(">Q", self.payload_bits) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodeStream":
        if len(data) < 24 or data[:4] != MAGIC:
            raise StreamFormatError("bad magic")
        version, mode_b, k, depth, n, digest = struct.unpack(">BBHBQQ", data[4:25])
        if version != VERSION:
            raise StreamFormatError(f"unsupported version {version}")
        if mode_b not in _BYTE_MODE:
            raise StreamFormatError(f"unknown mode byte {mode_b}")
        mode = _BYTE_MODE[mode_b]
        pos = 25
        cluster_id = None
        if mode == MODE_UCOMPCM:
            if len(data) < pos + 2:
                raise StreamFormatError("truncated header")
            (cluster_id,) = struct.unpack(">H", data[pos : pos + 2])
            pos += 2
        if len(data) < pos + 8:
            raise StreamFormatError("truncated header")
        (bits,) = struct.unpack(">Q", data[pos : pos + 8])
        pos += 8
        payload = data[pos:]
        if len(payload) != (bits + 7) // 8:
            raise StreamFormatError(
                f"payload length {len(payload)} does not match bit count {bits}"
            )
        return cls(mode=mode, k=k, depth=depth, n=n, memory_digest=digest,
                   payload_bits=bits, payload=payload, cluster_id=cluster_id)


def _memory_sequences(memory) -> list[np.ndarray]:
    if memory is None:
        return []
    if isinstance(memory, MemoryStore):
        return memory.sequences
    return [np.asarray(s, dtype=np.int64) for s in memory]


def _check_mode_memory(mode: str, memory) -> list[np.ndarray]:
    if mode not in MODES:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if mode == MODE_UCOMP:
        return []
    if memory is None:
        raise InvalidParameterError(f"mode {mode!r} requires memory (--memory)")
    return _memory_sequences(memory)


def ideal_codelength(mode: str, x, memory=None, *, k: int, depth: int) -> float:
    """-log2 of the sequential CTW probability of x given the (possibly
    primed) tree, in bits."""
    seqs = _check_mode_memory(mode, memory)
    x = np.asarray(x, dtype=np.int64)
    if not seqs:
        return batch_codelength(k, depth, [x])
    base = batch_codelength(k, depth, seqs)
    return batch_codelength(k, depth, seqs + [x]) - base


def encode(mode: str, x, memory=None, *, k: int, depth: int,
           cluster_id: int | None = None) -> CodeStream:
    """Compress x into a framed stream. For clustered-memory mode, `memory`
    must already be the chosen cluster's sequences and `cluster_id` is
    recorded in the header."""
    seqs = _check_mode_memory(mode, memory)
    if k < 2 or k > 256:
        raise InvalidParameterError(f"streams support 2 <= k <= 256, got {k}")
    if not 0 <= depth <= 255:
        raise InvalidParameterError(f"depth must fit a byte, got {depth}")
    if mode == MODE_UCOMPCM and cluster_id is None:
        raise InvalidParameterError("clustered-memory mode requires cluster_id (--cluster)")
    x = np.asarray(x, dtype=np.int64)
    if x.size and (x.min() < 0 or x.max() >= k):
        raise InvalidParameterError("sequence symbols outside alphabet")
    digest = memory_digest(seqs) if mode != MODE_UCOMP else 0

    tree = ContextTree(k, depth)
    tree.prime(seqs)
    if x.size == 0:
        payload, bits = b"", 0
    else:
        enc = RangeEncoder()
        ideal = 0.0
        cums = np.empty(k + 1, dtype=np.int64)
        cums[0] = 0
        for sym in x.tolist():
            p = tree.predictive()
            ideal -= math.log2(p[sym])
            f = _quantize(p)
            np.cumsum(f, out=cums[1:])
            enc.encode(int(cums[sym]), int(f[sym]), _TOT)
            tree.update(sym)
        payload, bits = enc.finish(min_bits=math.floor(ideal) + 1)
    return CodeStream(mode=mode, k=k, depth=depth, n=int(x.size),
                      memory_digest=digest, payload_bits=bits, payload=payload,
                      cluster_id=cluster_id if mode == MODE_UCOMPCM else None)


def decode(stream: CodeStream, memory=None) -> np.ndarray:
    """Exact inverse of encode. Memory must match the encoder's digest."""
    if stream.mode != MODE_UCOMP:
        seqs = _check_mode_memory(stream.mode, memory)
        digest = memory_digest(seqs)
        if digest != stream.memory_digest:
            raise MemoryDesyncError(
                f"memory digest {digest:016x} does not match stream "
                f"{stream.memory_digest:016x}"
            )
    else:
        seqs = []
    tree = ContextTree(stream.k, stream.depth)
    tree.prime(seqs)
    out = np.empty(stream.n, dtype=np.int64)
    if stream.n == 0:
        return out
    dec = RangeDecoder(stream.payload)
    k = stream.k
    cums = np.empty(k + 1, dtype=np.int64)
    cums[0] = 0
    for i in range(stream.n):
        p = tree.predictive()
        f = _quantize(p)
        np.cumsum(f, out=cums[1:])
        target = dec.decode_target(_TOT)
        sym = int(np.searchsorted(cums, target, side="right")) - 1
        dec.consume(int(cums[sym]), int(f[sym]))
        out[i] = sym
        tree.update(sym)
    return out

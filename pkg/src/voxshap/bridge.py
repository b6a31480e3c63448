"""Client for out-of-process patch predictors speaking voxshap-predictor/1.

Wire format over the adapter's stdio: frames of a 4-byte little-endian
unsigned payload length followed by the payload. The payload's first byte
is a type tag (0 = tensor, 1 = JSON). The adapter sends one JSON hello
frame on startup; after that the engine sends one tensor request per
patch (f32 LE, x-fastest) and reads one tensor response (f32 LE,
class-major then x-fastest) in strict alternation. A JSON payload in
place of a response carries {"error": ...} and aborts the run.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import struct
import subprocess
import threading
import time
from collections import deque

import numpy as np

from .errors import PredictorError
from .grid import Triple

PROTOCOL_VERSION = "voxshap-predictor/1"
TAG_TENSOR = 0
TAG_JSON = 1
MAX_PAYLOAD = 256 * 2**20
_STDERR_TAIL_BYTES = 4096


def encode_frame(tag: int, payload: bytes) -> bytes:
    body = bytes([tag]) + payload
    if len(body) > MAX_PAYLOAD:
        raise PredictorError(f"frame payload {len(body)} exceeds {MAX_PAYLOAD} bytes")
    return struct.pack("<I", len(body)) + body


def decode_frames(buffer: bytes) -> tuple[list[tuple[int, bytes]], bytes]:
    """Split a byte stream into complete (tag, data) frames plus the unparsed tail."""
    frames = []
    offset = 0
    while len(buffer) - offset >= 4:
        (length,) = struct.unpack_from("<I", buffer, offset)
        if length > MAX_PAYLOAD:
            raise PredictorError(f"frame length {length} exceeds {MAX_PAYLOAD} bytes")
        if len(buffer) - offset - 4 < length:
            break
        body = buffer[offset + 4 : offset + 4 + length]
        if len(body) < 1:
            raise PredictorError("empty frame payload (missing type tag)")
        frames.append((body[0], body[1:]))
        offset += 4 + length
    return frames, buffer[offset:]


class _StderrTail(threading.Thread):
    """Drains the adapter's stderr, keeping the last few KiB for error reports."""

    def __init__(self, pipe):
        super().__init__(daemon=True)
        self._pipe = pipe
        self._chunks: deque[bytes] = deque()
        self._size = 0
        self._lock = threading.Lock()
        self.start()

    def run(self):
        try:
            while True:
                chunk = self._pipe.read(1024)
                if not chunk:
                    return
                with self._lock:
                    self._chunks.append(chunk)
                    self._size += len(chunk)
                    while self._size > _STDERR_TAIL_BYTES and len(self._chunks) > 1:
                        self._size -= len(self._chunks.popleft())
        except Exception:
            return

    def tail(self) -> str:
        with self._lock:
            return b"".join(self._chunks).decode("utf-8", errors="replace")[-_STDERR_TAIL_BYTES:]


class ExternalPredictor:
    """PatchPredictor backed by an adapter subprocess.

    The adapter command is launched once with the patch shape and class
    count appended as arguments; requests are strictly single-flight
    (supports_concurrency is False and predict takes a lock).
    """

    supports_concurrency = False
    num_channels = 1

    def __init__(self, command: str, patch_size: Triple, num_classes: int, timeout_s: float = 30.0):
        self.patch_size = tuple(int(p) for p in patch_size)
        self.num_classes = int(num_classes)
        self.timeout_s = timeout_s
        self._lock = threading.Lock()
        argv = shlex.split(command) + [
            "--patch",
            ",".join(str(p) for p in self.patch_size),
            "--num-classes",
            str(self.num_classes),
        ]
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE
            )
        except OSError as e:
            raise PredictorError(f"failed to launch predictor adapter {argv[0]!r}: {e}") from e
        self._stderr = _StderrTail(self._proc.stderr)
        try:
            self.hello = self._handshake()
        except PredictorError:
            self.close()
            raise

    def _fail(self, message: str) -> PredictorError:
        tail = self._stderr.tail()
        suffix = f"; adapter stderr tail:\n{tail}" if tail.strip() else ""
        return PredictorError(message + suffix)

    def _read_exact(self, n: int, deadline: float, what: str) -> bytes:
        buf = bytearray()
        fd = self._proc.stdout.fileno()
        while len(buf) < n:
            if self._proc.poll() is not None and not select.select([fd], [], [], 0)[0]:
                raise self._fail(
                    f"adapter exited (code {self._proc.returncode}) at byte {len(buf)}/{n} of {what}"
                )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise self._fail(f"timeout after {self.timeout_s}s at byte {len(buf)}/{n} of {what}")
            ready, _, _ = select.select([fd], [], [], min(remaining, 0.25))
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if not chunk:
                raise self._fail(f"adapter closed stdout at byte {len(buf)}/{n} of {what}")
            buf.extend(chunk)
        return bytes(buf)

    def _read_frame(self, what: str) -> tuple[int, bytes]:
        deadline = time.monotonic() + self.timeout_s
        header = self._read_exact(4, deadline, f"{what} frame header")
        (length,) = struct.unpack("<I", header)
        if length > MAX_PAYLOAD:
            raise self._fail(f"{what}: frame length {length} exceeds {MAX_PAYLOAD}")
        if length < 1:
            raise self._fail(f"{what}: empty frame payload (missing type tag)")
        body = self._read_exact(length, deadline, f"{what} frame payload")
        return body[0], body[1:]

    def _write_frame(self, tag: int, payload: bytes) -> None:
        try:
            self._proc.stdin.write(encode_frame(tag, payload))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise self._fail(f"adapter pipe closed while sending request: {e}") from e

    def _handshake(self) -> dict:
        tag, data = self._read_frame("hello")
        if tag != TAG_JSON:
            raise self._fail(f"hello must be a JSON frame, got tag {tag}")
        try:
            hello = json.loads(data)
        except json.JSONDecodeError as e:
            raise self._fail(f"malformed hello JSON: {e}") from e
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise self._fail(
                f"protocol version mismatch: adapter={hello.get('protocol')!r}, "
                f"engine={PROTOCOL_VERSION!r}"
            )
        if tuple(hello.get("patch_size", ())) != self.patch_size:
            raise self._fail(
                f"adapter patch size {hello.get('patch_size')} != configured {list(self.patch_size)}"
            )
        if hello.get("num_classes") != self.num_classes:
            raise self._fail(
                f"adapter num_classes {hello.get('num_classes')} != configured {self.num_classes}"
            )
        return hello

    def predict(self, patch: np.ndarray) -> np.ndarray:
        if patch.shape != self.patch_size:
            raise PredictorError(f"patch shape {patch.shape} != {self.patch_size}")
        with self._lock:
            request = np.ascontiguousarray(patch, dtype="<f4").ravel(order="F").tobytes()
            self._write_frame(TAG_TENSOR, request)
            tag, data = self._read_frame("response")
        if tag == TAG_JSON:
            try:
                detail = json.loads(data).get("error", "unspecified adapter error")
            except json.JSONDecodeError:
                detail = data[:200].decode("utf-8", errors="replace")
            raise self._fail(f"adapter error frame: {detail}")
        if tag != TAG_TENSOR:
            raise self._fail(f"unknown response frame tag {tag}")
        n_vox = int(np.prod(self.patch_size))
        expected = self.num_classes * n_vox * 4
        if len(data) != expected:
            raise self._fail(f"response length {len(data)} != expected {expected} bytes")
        flat = np.frombuffer(data, dtype="<f4").reshape(self.num_classes, n_vox)
        return np.stack(
            [flat[c].reshape(self.patch_size, order="F") for c in range(self.num_classes)]
        ).astype(np.float32)

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        try:
            if proc.stdin:
                proc.stdin.close()
            proc.wait(timeout=2.0)
        except Exception:
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

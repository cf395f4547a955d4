"""Transparent TCP intercept proxy for control channels.

The proxy sits as an explicit man-in-the-middle between a switch-side
client and an upstream controller.  Both directions are relayed byte for
byte; each direction is additionally segmented into messages using the
declared 16-bit length field of the common header so that one selected
message per session (the target_ordinal-th of the target type in its
direction) can be handed to a fuzz hook and replaced with the hook's
output.  Everything else, including message types the registry does not
know, is forwarded unmodified and in order.

One accepted connection is one independent session.  Hooks are dequeued
in acceptance order; reserve() lets a caller pair a hook with its own
connection by serializing the register-then-connect step.
"""
from __future__ import annotations

import contextlib
import logging
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .codec import HEADER_BYTES, SchemaRegistry

log = logging.getLogger(__name__)

_RECV_CHUNK = 65536

Hook = Callable[[bytes], bytes]


class LengthFieldInvalidError(Exception):
    """A framed header declares a length smaller than the header itself."""


class UpstreamUnreachableError(Exception):
    """The proxy could not connect to the upstream endpoint."""


@dataclass(frozen=True)
class InterceptConfig:
    listen_host: str
    listen_port: int
    upstream_host: str
    upstream_port: int
    target_type: str
    target_ordinal: int = 1


@dataclass
class SessionRecord:
    session_id: int
    target_seen: bool = False
    hook_fired: bool = False
    bytes_client_to_upstream: int = 0
    bytes_upstream_to_client: int = 0
    error: str | None = None


class StreamSegmenter:
    """Incremental reassembly of length-framed messages from a byte stream."""

    def __init__(self) -> None:
        self.residual = b""

    def feed(self, data: bytes) -> list[bytes]:
        """Consume a chunk, returning every message completed by it."""
        self.residual += data
        frames = []
        while True:
            buf = self.residual
            if len(buf) < 4:
                break
            declared = int.from_bytes(buf[2:4], "big")
            if declared < HEADER_BYTES:
                raise LengthFieldInvalidError(
                    f"declared length {declared} below header size {HEADER_BYTES}"
                )
            if len(buf) < declared:
                break
            frames.append(buf[:declared])
            self.residual = buf[declared:]
        return frames


def segment(data: bytes) -> tuple[list[bytes], bytes]:
    """One-shot framing: (complete messages, trailing residual)."""
    seg = StreamSegmenter()
    frames = seg.feed(data)
    return frames, seg.residual


class _Session:
    """Relay state shared by the two pump threads of one connection."""

    def __init__(
        self,
        record: SessionRecord,
        target_code: int | None,
        target_ordinal: int,
        hook: Hook | None,
    ):
        self.record = record
        self.target_code = target_code
        self.target_ordinal = target_ordinal
        self.hook = hook
        self._lock = threading.Lock()

    def process(self, frame: bytes, direction: str, seen_of_type: int) -> bytes:
        """Apply the hook if this frame is the session's target."""
        if self.target_code is None or frame[1] != self.target_code:
            return frame
        with self._lock:
            self.record.target_seen = True
            if self.record.hook_fired or self.hook is None:
                return frame
            if seen_of_type != self.target_ordinal:
                return frame
            self.record.hook_fired = True
            try:
                out = self.hook(frame)
            except Exception as exc:  # hook bugs must not wedge the relay
                log.warning("session %d hook failed: %s", self.record.session_id, exc)
                self.record.error = f"hook: {exc}"
                return frame
            log.debug(
                "session %d fuzzed %s frame (%d -> %d bytes)",
                self.record.session_id, direction, len(frame), len(out),
            )
            return out


def _pump(
    src: socket.socket,
    dst: socket.socket,
    session: _Session,
    direction: str,
    count_attr: str,
) -> None:
    """Relay one direction until EOF, framing to spot the target message."""
    segmenter = StreamSegmenter()
    seen_of_type = 0
    record = session.record
    try:
        while True:
            try:
                chunk = src.recv(_RECV_CHUNK)
            except OSError:
                break
            if not chunk:
                break
            try:
                frames = segmenter.feed(chunk)
            except LengthFieldInvalidError as exc:
                record.error = f"{direction}: {exc}"
                log.warning("session %d aborted: %s", record.session_id, exc)
                break
            out = b""
            for frame in frames:
                if session.target_code is not None and frame[1] == session.target_code:
                    seen_of_type += 1
                out += session.process(frame, direction, seen_of_type)
            if out:
                try:
                    dst.sendall(out)
                except OSError:
                    break
                setattr(record, count_attr, getattr(record, count_attr) + len(out))
    finally:
        # Forward any incomplete trailing bytes, then propagate the close.
        if segmenter.residual and record.error is None:
            with contextlib.suppress(OSError):
                dst.sendall(segmenter.residual)
                setattr(
                    record, count_attr,
                    getattr(record, count_attr) + len(segmenter.residual),
                )
        with contextlib.suppress(OSError):
            dst.shutdown(socket.SHUT_WR)
        with contextlib.suppress(OSError):
            src.shutdown(socket.SHUT_RD)


def _relay(
    client: socket.socket,
    upstream: socket.socket,
    session: _Session,
) -> None:
    t1 = threading.Thread(
        target=_pump,
        args=(client, upstream, session, "client->upstream", "bytes_client_to_upstream"),
        daemon=True,
    )
    t2 = threading.Thread(
        target=_pump,
        args=(upstream, client, session, "upstream->client", "bytes_upstream_to_client"),
        daemon=True,
    )
    t1.start()
    t2.start()
    t1.join()
    t2.join()
    for sock in (client, upstream):
        with contextlib.suppress(OSError):
            sock.close()
    rec = session.record
    log.info(
        "session %d done: target_seen=%s hook_fired=%s c2u=%d u2c=%d error=%s",
        rec.session_id, rec.target_seen, rec.hook_fired,
        rec.bytes_client_to_upstream, rec.bytes_upstream_to_client, rec.error,
    )


class InterceptProxy:
    """Long-running proxy serving one session per accepted connection."""

    def __init__(
        self,
        config: InterceptConfig,
        registry: SchemaRegistry,
        default_hook: Hook | None = None,
    ):
        self.config = config
        self.registry = registry
        self.default_hook = default_hook
        self.records: list[SessionRecord] = []
        self._hooks: queue.SimpleQueue[Hook] = queue.SimpleQueue()
        self._reserve_lock = threading.Lock()
        self._records_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._session_threads: list[threading.Thread] = []
        self._running = False
        self._next_id = 0
        code = None
        if config.target_type:
            code = registry.by_name(config.target_type).header_type_code
        self._target_code = code

    @property
    def endpoint(self) -> tuple[str, int]:
        assert self._listener is not None, "proxy not started"
        host, port = self._listener.getsockname()[:2]
        return host, port

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.config.listen_host, self.config.listen_port))
        listener.listen(128)
        self._listener = listener
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def stop(self) -> None:
        self._running = False
        if self._listener is not None:
            with contextlib.suppress(OSError):
                self._listener.close()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        for t in self._session_threads:
            t.join(timeout=2)

    def submit_hook(self, hook: Hook) -> None:
        """Queue a hook for the next accepted session."""
        self._hooks.put(hook)

    @contextlib.contextmanager
    def reserve(self, hook: Hook) -> Iterator[tuple[str, int]]:
        """Pair `hook` with the connection made inside the with block.

        Connect attempts are serialized so that kernel accept order (FIFO
        over completed handshakes) matches hook queue order.
        """
        with self._reserve_lock:
            self.submit_hook(hook)
            yield self.endpoint

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while self._running:
            try:
                client, _ = self._listener.accept()
            except OSError:
                break
            try:
                hook = self._hooks.get_nowait()
            except queue.Empty:
                hook = self.default_hook
            with self._records_lock:
                self._next_id += 1
                record = SessionRecord(session_id=self._next_id)
                self.records.append(record)
            t = threading.Thread(
                target=self._serve, args=(client, hook, record), daemon=True
            )
            self._session_threads.append(t)
            t.start()

    def _serve(self, client: socket.socket, hook: Hook | None, record: SessionRecord) -> None:
        try:
            upstream = socket.create_connection(
                (self.config.upstream_host, self.config.upstream_port), timeout=5
            )
        except OSError as exc:
            record.error = f"upstream unreachable: {exc}"
            log.warning("session %d: %s", record.session_id, record.error)
            with contextlib.suppress(OSError):
                client.close()
            return
        session = _Session(record, self._target_code, self.config.target_ordinal, hook)
        _relay(client, upstream, session)


def run_session(
    config: InterceptConfig, hook: Hook | None, registry: SchemaRegistry
) -> SessionRecord:
    """Serve exactly one proxied session on the configured listen endpoint.

    Binds, accepts a single connection, relays it to the upstream with the
    hook armed, and returns the session record once both directions close.
    Raises UpstreamUnreachableError if the upstream cannot be reached.
    """
    target_code = None
    if config.target_type:
        target_code = registry.by_name(config.target_type).header_type_code
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        listener.bind((config.listen_host, config.listen_port))
        listener.listen(1)
        client, _ = listener.accept()
    finally:
        listener.close()
    record = SessionRecord(session_id=0)
    try:
        upstream = socket.create_connection(
            (config.upstream_host, config.upstream_port), timeout=5
        )
    except OSError as exc:
        with contextlib.suppress(OSError):
            client.close()
        raise UpstreamUnreachableError(str(exc)) from exc
    session = _Session(record, target_code, config.target_ordinal, hook)
    _relay(client, upstream, session)
    return record

"""Intercept proxy: framing, transparency, hook pairing, and bookkeeping."""

import random
import socket
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulefuzz.codec import HEADER_BYTES, builtin_registry
from rulefuzz.proxy import (
    InterceptConfig,
    InterceptProxy,
    LengthFieldInvalidError,
    StreamSegmenter,
    UpstreamUnreachableError,
    run_session,
    segment,
)

REGISTRY = builtin_registry()


def frame(type_code, length=None, fill=0xAB, declared=None):
    length = HEADER_BYTES if length is None else length
    declared = length if declared is None else declared
    body = bytes([4, type_code]) + declared.to_bytes(2, "big") + (0).to_bytes(4, "big")
    return body + bytes([fill]) * (length - HEADER_BYTES)


def chunked(data, rng):
    out = []
    i = 0
    while i < len(data):
        step = rng.randint(1, 9)
        out.append(data[i : i + step])
        i += step
    return out


def test_segmenter_reassembles_across_any_chunking():
    rng = random.Random(21)
    for _ in range(200):
        frames = [
            frame(rng.randint(0, 255), rng.randint(HEADER_BYTES, 40), fill=rng.randint(0, 255))
            for _ in range(rng.randint(1, 8))
        ]
        stream = b"".join(frames)
        seg = StreamSegmenter()
        got = []
        for chunk in chunked(stream, rng):
            got.extend(seg.feed(chunk))
        assert got == frames
        assert seg.residual == b""


def test_segmenter_keeps_partial_frame_as_residual():
    f = frame(10, 20)
    seg = StreamSegmenter()
    assert seg.feed(f[:5]) == []
    assert seg.residual == f[:5]
    assert seg.feed(f[5:] + f[:3]) == [f]
    assert seg.residual == f[:3]


def test_segmenter_rejects_undersized_declared_length():
    seg = StreamSegmenter()
    with pytest.raises(LengthFieldInvalidError):
        seg.feed(frame(10, 20, declared=HEADER_BYTES - 1))


def test_segment_one_shot():
    a, b = frame(1, 12), frame(2, 9)
    frames, residual = segment(a + b + a[:4])
    assert frames == [a, b]
    assert residual == a[:4]


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_segmenter_chunking_invariance_property(seed):
    rng = random.Random(seed)
    frames = [
        frame(rng.randint(0, 255), rng.randint(HEADER_BYTES, 24))
        for _ in range(rng.randint(1, 5))
    ]
    tail = frames[0][: rng.randint(0, HEADER_BYTES - 1)]
    stream = b"".join(frames) + tail
    got, residual = segment(stream)
    assert got == frames
    assert residual == tail


class EchoUpstream:
    """Accepts connections, buffers until client EOF, echoes back, closes."""

    def __init__(self):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.listen(8)
        self.port = self.sock.getsockname()[1]
        self._threads = []
        self._accept = threading.Thread(target=self._loop, daemon=True)
        self._accept.start()

    def _loop(self):
        while True:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, conn):
        conn.settimeout(5)
        buf = b""
        try:
            while True:
                chunk = conn.recv(65536)
                if not chunk:
                    break
                buf += chunk
            conn.sendall(buf)
        except OSError:
            pass
        finally:
            conn.close()

    def close(self):
        self.sock.close()
        for t in self._threads:
            t.join(timeout=2)


def roundtrip(endpoint, payload):
    with socket.create_connection(endpoint, timeout=5) as sock:
        sock.settimeout(5)
        sock.sendall(payload)
        sock.shutdown(socket.SHUT_WR)
        buf = b""
        while True:
            chunk = sock.recv(65536)
            if not chunk:
                return buf
            buf += chunk


@pytest.fixture()
def upstream():
    server = EchoUpstream()
    yield server
    server.close()


def make_proxy(upstream_port, target_type="packet_in", hook=None, ordinal=1):
    config = InterceptConfig(
        listen_host="127.0.0.1",
        listen_port=0,
        upstream_host="127.0.0.1",
        upstream_port=upstream_port,
        target_type=target_type,
        target_ordinal=ordinal,
    )
    proxy = InterceptProxy(config, REGISTRY, default_hook=hook)
    proxy.start()
    return proxy


def test_relay_is_byte_transparent_without_hook(upstream):
    proxy = make_proxy(upstream.port)
    try:
        payload = frame(0, 8) + frame(21, 8) + b"\x01\x02"  # trailing junk too
        assert roundtrip(proxy.endpoint, payload) == payload
        record = proxy.records[0]
        assert record.error is None
        assert not record.hook_fired  # no packet_in in the stream
        assert record.bytes_client_to_upstream == len(payload)
        assert record.bytes_upstream_to_client == len(payload)
    finally:
        proxy.stop()


def test_hook_replaces_only_first_target_frame(upstream):
    target = REGISTRY.by_name("packet_in")
    original = frame(target.header_type_code, target.total_bytes, fill=0x11)
    replacement = frame(target.header_type_code, target.total_bytes, fill=0x99)
    calls = []

    def hook(data):
        calls.append(data)
        return replacement

    proxy = make_proxy(upstream.port, hook=hook)
    try:
        payload = frame(0, 8) + original + original
        got = roundtrip(proxy.endpoint, payload)
        # first pass through the proxy replaces occurrence one only; the
        # echoed copy must not re-trigger the session's hook
        assert got == frame(0, 8) + replacement + original
        assert calls == [original]
        record = proxy.records[0]
        assert record.target_seen and record.hook_fired
    finally:
        proxy.stop()


def test_target_ordinal_selects_later_occurrence(upstream):
    target = REGISTRY.by_name("packet_in")
    first = frame(target.header_type_code, target.total_bytes, fill=0x01)
    second = frame(target.header_type_code, target.total_bytes, fill=0x02)
    replacement = frame(target.header_type_code, target.total_bytes, fill=0xEE)
    proxy = make_proxy(upstream.port, hook=lambda _data: replacement, ordinal=2)
    try:
        got = roundtrip(proxy.endpoint, first + second)
        assert got == first + replacement
    finally:
        proxy.stop()


def test_unknown_message_types_pass_through(upstream):
    # 0xEE is not in the registry; the relay must not care
    proxy = make_proxy(upstream.port, hook=lambda data: b"")
    try:
        payload = frame(0xEE, 16, fill=0x42)
        assert roundtrip(proxy.endpoint, payload) == payload
        assert not proxy.records[0].hook_fired
    finally:
        proxy.stop()


def test_hook_exception_keeps_relay_alive(upstream):
    target = REGISTRY.by_name("packet_in")
    original = frame(target.header_type_code, target.total_bytes)

    def bad_hook(_data):
        raise RuntimeError("boom")

    proxy = make_proxy(upstream.port, hook=bad_hook)
    try:
        assert roundtrip(proxy.endpoint, original) == original
        record = proxy.records[0]
        assert record.hook_fired
        assert "boom" in record.error
    finally:
        proxy.stop()


def test_reserve_pairs_hooks_with_connections(upstream):
    target = REGISTRY.by_name("packet_in")
    proxy = make_proxy(upstream.port)
    results = {}
    try:

        def one(tag):
            marker = frame(target.header_type_code, target.total_bytes, fill=tag)

            def hook(_data):
                return marker

            with proxy.reserve(hook) as endpoint:
                sock = socket.create_connection(endpoint, timeout=5)
            try:
                sock.settimeout(5)
                sock.sendall(frame(target.header_type_code, target.total_bytes))
                sock.shutdown(socket.SHUT_WR)
                buf = b""
                while True:
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    buf += chunk
                results[tag] = buf
            finally:
                sock.close()

        threads = [threading.Thread(target=one, args=(tag,)) for tag in range(1, 9)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=10)
        for tag, buf in results.items():
            assert buf == frame(target.header_type_code, target.total_bytes, fill=tag)
        assert len(results) == 8
    finally:
        proxy.stop()


def test_run_session_single_shot():
    upstream = EchoUpstream()
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    port = listener.getsockname()[1]
    listener.close()
    config = InterceptConfig(
        listen_host="127.0.0.1",
        listen_port=port,
        upstream_host="127.0.0.1",
        upstream_port=upstream.port,
        target_type="hello",
    )
    replacement = frame(0, 8, fill=0)
    holder = {}

    def serve():
        holder["record"] = run_session(config, lambda _d: replacement, REGISTRY)

    t = threading.Thread(target=serve)
    t.start()
    try:
        time.sleep(0.1)  # give the listener time to bind
        payload = frame(0, 8, fill=7) + frame(21, 8)
        got = roundtrip(("127.0.0.1", port), payload)
        t.join(timeout=5)
        assert got == replacement + frame(21, 8)
        assert holder["record"].hook_fired
    finally:
        upstream.close()


def test_run_session_upstream_unreachable():
    gone = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    gone.bind(("127.0.0.1", 0))
    dead_port = gone.getsockname()[1]
    gone.close()

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    port = listener.getsockname()[1]
    listener.close()
    config = InterceptConfig(
        listen_host="127.0.0.1",
        listen_port=port,
        upstream_host="127.0.0.1",
        upstream_port=dead_port,
        target_type="hello",
    )
    holder = {}

    def serve():
        try:
            run_session(config, None, REGISTRY)
        except UpstreamUnreachableError as exc:
            holder["error"] = exc

    t = threading.Thread(target=serve)
    t.start()
    time.sleep(0.1)
    with socket.create_connection(("127.0.0.1", port), timeout=5):
        pass
    t.join(timeout=5)
    assert "error" in holder

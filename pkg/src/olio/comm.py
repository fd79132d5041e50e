"""MOP/1 wire codec, channels, listeners and dialers.

Frame layout, bit-exact:

    bytes 0-3   magic "MOP1"
    bytes 4-7   big-endian u32 body length N (N <= 16 MiB)
    bytes 8..   UTF-8 JSON body, object keys in lexicographic order

The body is ``{"op", "res", "val"}`` plus ``"fault"`` when set. A value
node is an object whose ``"$"`` key holds the root — null for empty,
bare strings and booleans, ``{"i":n}`` / ``{"l":n}`` / ``{"d":x}`` for
the three numeric kinds, ``{"b":base64}`` for bytes — and whose every
other key is a child name mapping to an array of nodes.
"""

from __future__ import annotations

import base64
import binascii
import json
import socket
import struct
import threading
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from .typesys import Long, ValueTree

MAGIC = b"MOP1"
MAX_BODY = 16 * 1024 * 1024
PROTOCOL_NAME = "mop"
DEFAULT_TIMEOUT = 30.0


class CommError(Exception):
    pass


class EncodeError(CommError):
    pass


class DecodeError(CommError):
    pass


class BindError(CommError):
    pass


class ConnectError(CommError):
    pass


class TimeoutError(CommError):
    pass


class ChannelClosed(CommError):
    """Orderly end of stream at a frame boundary."""


@dataclass
class Message:
    operation: str
    payload: ValueTree = field(default_factory=ValueTree)
    fault: str | None = None
    resource_path: str = "/"


def parse_socket_location(location):
    """'socket://host:port' -> (host, port)."""
    parts = urlsplit(location)
    if parts.scheme != "socket":
        raise ValueError(f"unsupported location scheme {parts.scheme!r} "
                         f"in {location!r}")
    if parts.hostname is None or parts.port is None:
        raise ValueError(f"location {location!r} needs host and port")
    return parts.hostname, parts.port


# --- codec -------------------------------------------------------------------

def _encode_root(root):
    if root is None:
        return None
    if isinstance(root, bool):
        return root
    if isinstance(root, Long):
        return {"l": int(root)}
    if isinstance(root, float):
        return {"d": root}
    if isinstance(root, int):
        return {"i": root}
    if isinstance(root, str):
        return root
    if isinstance(root, (bytes, bytearray)):
        return {"b": base64.b64encode(bytes(root)).decode("ascii")}
    raise EncodeError(f"value root of kind {type(root).__name__} has no "
                      f"wire encoding")


def _encode_value(value):
    node = {"$": _encode_root(value.root)}
    for name, kids in value.children.items():
        if kids:
            node[name] = [_encode_value(kid) for kid in kids]
    return node


def _decode_root(obj):
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, dict):
        if len(obj) != 1:
            raise DecodeError("malformed root tag")
        (tag, raw), = obj.items()
        if tag == "i" and isinstance(raw, int) and not isinstance(raw, bool):
            return raw
        if tag == "l" and isinstance(raw, int) and not isinstance(raw, bool):
            return Long(raw)
        if tag == "d" and isinstance(raw, (int, float)) \
                and not isinstance(raw, bool):
            return float(raw)
        if tag == "b" and isinstance(raw, str):
            try:
                return base64.b64decode(raw, validate=True)
            except binascii.Error as e:
                raise DecodeError(f"bad base64 payload: {e}") from None
        raise DecodeError(f"unknown value tag {tag!r}")
    raise DecodeError(f"malformed value root {obj!r}")


def _decode_value(obj):
    if not isinstance(obj, dict) or "$" not in obj:
        raise DecodeError("value node must be an object with a '$' key")
    children = {}
    for name, kids in obj.items():
        if name == "$":
            continue
        if not isinstance(kids, list) or not kids:
            raise DecodeError(f"child {name!r} must be a non-empty array")
        children[name] = [_decode_value(kid) for kid in kids]
    return ValueTree(_decode_root(obj["$"]), children)


def encode_message(message: Message) -> bytes:
    body = {
        "op": message.operation,
        "res": message.resource_path,
        "val": _encode_value(message.payload),
    }
    if message.fault is not None:
        body["fault"] = message.fault
    try:
        text = json.dumps(body, sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False)
    except ValueError as e:
        raise EncodeError(str(e)) from None
    data = text.encode("utf-8")
    if len(data) > MAX_BODY:
        raise EncodeError(f"body of {len(data)} bytes exceeds the "
                          f"{MAX_BODY}-byte frame limit")
    return MAGIC + struct.pack(">I", len(data)) + data


def encoded_payload_size(message: Message) -> int:
    """Byte length of just the encoded value node (used by tracing)."""
    text = json.dumps(_encode_value(message.payload), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)
    return len(text.encode("utf-8"))


def _parse_body(data: bytes) -> Message:
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DecodeError(f"malformed frame body: {e}") from None
    if not isinstance(body, dict):
        raise DecodeError("frame body must be a JSON object")
    extra = set(body) - {"op", "res", "val", "fault"}
    if extra:
        raise DecodeError(f"unknown body keys {sorted(extra)}")
    for key in ("op", "res", "val"):
        if key not in body:
            raise DecodeError(f"frame body misses {key!r}")
    op = body["op"]
    res = body["res"]
    fault = body.get("fault")
    if not isinstance(op, str) or not op:
        raise DecodeError("operation must be a non-empty string")
    if not isinstance(res, str):
        raise DecodeError("resource path must be a string")
    if fault is not None and not isinstance(fault, str):
        raise DecodeError("fault must be a string")
    return Message(op, _decode_value(body["val"]), fault, res)


def decode_message(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < 8:
        raise DecodeError("frame shorter than its header")
    if data[:4] != MAGIC:
        raise DecodeError("bad frame magic")
    (length,) = struct.unpack(">I", data[4:8])
    if length > MAX_BODY:
        raise DecodeError(f"frame length {length} exceeds the "
                          f"{MAX_BODY}-byte limit")
    if len(data) != 8 + length:
        raise DecodeError(f"frame length field says {length} but "
                          f"{len(data) - 8} body bytes are present")
    return _parse_body(data[8:])


# --- channels ----------------------------------------------------------------

class Channel:
    """One bidirectional framed stream. Single reader and single writer
    per direction; send is additionally locked so replies from parallel
    strands never interleave frames."""

    def __init__(self, sock):
        self._sock = sock
        self._send_lock = threading.Lock()

    def send(self, message: Message):
        frame = encode_message(message)
        with self._send_lock:
            try:
                self._sock.sendall(frame)
            except OSError as e:
                raise ChannelClosed(f"send failed: {e}") from None

    def _recv_exact(self, n, at_boundary):
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise TimeoutError("timed out waiting for a frame") from None
            except OSError as e:
                raise ChannelClosed(f"receive failed: {e}") from None
            if not chunk:
                if at_boundary and not buf:
                    raise ChannelClosed("peer closed the connection")
                raise DecodeError("connection closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def receive(self, timeout=None) -> Message:
        self._sock.settimeout(timeout)
        header = self._recv_exact(8, at_boundary=True)
        if header[:4] != MAGIC:
            raise DecodeError("bad frame magic")
        (length,) = struct.unpack(">I", header[4:])
        if length > MAX_BODY:
            raise DecodeError(f"frame length {length} exceeds the "
                              f"{MAX_BODY}-byte limit")
        return _parse_body(self._recv_exact(length, at_boundary=False))

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


# --- listeners and dialers ---------------------------------------------------

class Listener:
    """Accepts connections on a socket location, handing each to
    ``handler(channel)`` on its own thread."""

    def __init__(self, location, handler):
        try:
            host, port = parse_socket_location(location)
        except ValueError as e:
            raise BindError(str(e)) from None
        self._handler = handler
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._server.bind((host, port))
            self._server.listen(128)
        except OSError as e:
            self._server.close()
            raise BindError(f"cannot bind {location}: {e}") from None
        self.host = host
        self.port = self._server.getsockname()[1]
        # closing a socket does not wake a thread parked in accept(), so
        # the accept loop polls and watches the stop flag instead
        self._server.settimeout(0.2)
        self._lock = threading.Lock()
        self._handlers = set()
        self._stopping = False
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"accept:{self.port}", daemon=True)
        self._accept_thread.start()

    @property
    def location(self):
        return f"socket://{self.host}:{self.port}"

    def _accept_loop(self):
        while True:
            try:
                conn, _addr = self._server.accept()
            except socket.timeout:
                if self._stopping:
                    return
                continue
            except OSError:
                return  # listener closed
            t = threading.Thread(target=self._run_handler, args=(conn,),
                                 daemon=True)
            with self._lock:
                if self._stopping:
                    conn.close()
                    return
                self._handlers.add(t)
            t.start()

    def _run_handler(self, conn):
        channel = Channel(conn)
        try:
            self._handler(channel)
        finally:
            channel.close()
            with self._lock:
                self._handlers.discard(threading.current_thread())

    def stop(self, drain=True, drain_timeout=10.0):
        """Stop accepting; optionally wait for in-flight handlers."""
        with self._lock:
            self._stopping = True
            pending = list(self._handlers)
        try:
            self._server.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=drain_timeout)
        if drain:
            for t in pending:
                t.join(timeout=drain_timeout)


def listen(location, handler) -> Listener:
    return Listener(location, handler)


def solicit(location, message: Message,
            request_timeout=DEFAULT_TIMEOUT) -> Message:
    """Send one message and block for exactly one reply."""
    try:
        host, port = parse_socket_location(location)
    except ValueError as e:
        raise ConnectError(str(e)) from None
    try:
        sock = socket.create_connection((host, port), timeout=request_timeout)
    except socket.timeout:
        raise TimeoutError(f"connect to {location} timed out") from None
    except OSError as e:
        raise ConnectError(f"cannot reach {location}: {e}") from None
    channel = Channel(sock)
    try:
        channel.send(message)
        try:
            return channel.receive(timeout=request_timeout)
        except ChannelClosed:
            raise ConnectError(f"{location} closed the connection before "
                               f"replying") from None
    finally:
        channel.close()


def notify(location, message: Message):
    """Fire-and-forget send of one frame; no reply awaited."""
    try:
        host, port = parse_socket_location(location)
    except ValueError as e:
        raise ConnectError(str(e)) from None
    try:
        sock = socket.create_connection((host, port), timeout=DEFAULT_TIMEOUT)
    except OSError as e:
        raise ConnectError(f"cannot reach {location}: {e}") from None
    channel = Channel(sock)
    try:
        channel.send(message)
    finally:
        channel.close()

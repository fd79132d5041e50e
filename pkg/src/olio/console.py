"""Embedded Console service backing ``println@Console``.

Registered as an in-process port (no socket) whenever a program includes
``console.iol``; the include loader serves CONSOLE_IOL_SOURCE below so the
corpus listings work without a console daemon.
"""

from __future__ import annotations

import sys
import threading

from .typesys import Long, ValueTree

CONSOLE_LOCATION = "builtin://console"

CONSOLE_IOL_SOURCE = """\
interface ConsoleInterface {
    RequestResponse:
        println( undefined )( void )
}

outputPort Console {
    Location: "builtin://console"
    Protocol: mop
    Interfaces: ConsoleInterface
}
"""


def render_basic(root) -> str:
    """Text form of a basic value, shared with string concatenation."""
    if root is None:
        return ""
    if isinstance(root, bool):
        return "true" if root else "false"
    if isinstance(root, (int, Long)):
        return str(int(root))
    if isinstance(root, float):
        return repr(root)
    if isinstance(root, str):
        return root
    if isinstance(root, (bytes, bytearray)):
        return bytes(root).decode("utf-8", errors="replace")
    raise TypeError(f"cannot render {type(root).__name__} as text")


class ConsoleService:
    """println writes whole lines; the lock keeps concurrent sessions
    from interleaving inside one line."""

    def __init__(self, stream=None):
        self._stream = stream if stream is not None else sys.stdout
        self._lock = threading.Lock()

    def handle(self, operation: str, payload: ValueTree) -> ValueTree:
        if operation != "println":
            raise LookupError(f"console provides no operation {operation!r}")
        line = render_basic(payload.root) + "\n"
        with self._lock:
            self._stream.write(line)
            self._stream.flush()
        return ValueTree()

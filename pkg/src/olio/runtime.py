"""Execution engine: turns a verified program into a tree of process nodes
and runs sessions against it, over live sockets or in-process.

The model is session-per-message: every inbound message that passes the
admission checks (known operation, conforming payload) gets its own copy of
the post-init state and runs the main behavior from the top.  Execution
modes only differ in scheduling:

  concurrent -- sessions run inline in their connection's thread, so many
                run at once;
  sequential -- admitted messages queue up and one worker runs their
                sessions in arrival order;
  single     -- main runs exactly once, feeding every receive from a global
                mailbox shared by all connections.

Process nodes are immutable after build and hold no session state, so one
tree serves any number of concurrent sessions.
"""

import collections
import itertools
import logging
import queue
import sys
import threading

from . import comm
from .ast_nodes import (
    Assign,
    Binary,
    CallDefine,
    If,
    InputChoice,
    IsDefined,
    Literal,
    Match,
    Nil,
    Notification,
    OneWayRecv,
    Parallel,
    PathRead,
    RequestResponseRecv,
    Sequence,
    SolicitResponse,
)
from .comm import ChannelClosed, Message
from .console import CONSOLE_LOCATION, ConsoleService, render_basic
from .typesys import (
    Long,
    UnresolvedLink,
    ValueTree,
    _same_root,
    conforms,
    leaf,
    resolve,
    resolve_type_ref,
    select_arm,
)

log = logging.getLogger("olio.runtime")

CALL_DEPTH_LIMIT = 10_000

# Deep define recursion needs room: every language-level call costs a
# handful of Python frames, and the default 8 MiB thread stack and 1000
# frame limit both fall over long before CALL_DEPTH_LIMIT.
_STRAND_STACK_BYTES = 64 * 1024 * 1024
_PY_RECURSION_LIMIT = 150_000

_thread_config_lock = threading.Lock()
_thread_config_done = False


def _ensure_thread_config():
    global _thread_config_done
    with _thread_config_lock:
        if _thread_config_done:
            return
        threading.stack_size(_STRAND_STACK_BYTES)
        if sys.getrecursionlimit() < _PY_RECURSION_LIMIT:
            sys.setrecursionlimit(_PY_RECURSION_LIMIT)
        _thread_config_done = True


class FaultSignal(Exception):
    """A named application-level fault travelling up the behavior tree.

    Caught at request-response boundaries, where it is reported to the
    remote caller as a fault reply before continuing upward.
    """

    def __init__(self, name, detail=""):
        super().__init__(detail or name)
        self.name = name
        self.detail = detail


class EvalError(FaultSignal):
    """Expression evaluation over incompatible basic values."""

    def __init__(self, detail):
        super().__init__("EvalError", detail)


class BuildError(Exception):
    """The program handed to the tree builder is internally inconsistent
    (should have been rejected by verification)."""


# --- session state ------------------------------------------------------------

_session_ids = itertools.count(1)


class SessionState:
    """One session's variable store: a single value tree addressed by paths.

    The lock serializes individual statements, so parallel strands of the
    same session never see a half-written assignment or graft.
    """

    __slots__ = ("session_id", "root", "lock")

    def __init__(self, root=None):
        self.session_id = next(_session_ids)
        self.root = root if root is not None else ValueTree()
        self.lock = threading.RLock()


class ExecutionContext:
    """Everything a running strand can reach: its session, the resolved
    type table, output port bindings, the inbound message source, and the
    reply handle of the request-response body currently executing."""

    __slots__ = ("interpreter", "session", "source", "resolved_types",
                 "input_ops", "output_ports", "pending_reply")

    def __init__(self, interpreter, session, source=None):
        self.interpreter = interpreter
        self.session = session
        self.source = source
        self.resolved_types = interpreter.resolved_types
        self.input_ops = interpreter.input_ops
        self.output_ports = interpreter.output_ports
        self.pending_reply = None


def _descend(node, path, create):
    """Walk a dotted path from a value tree node, taking the first element
    of each child list; optionally creates missing steps."""
    for name in path:
        kids = node.children.get(name)
        if kids:
            node = kids[0]
        elif create:
            kid = ValueTree()
            node.children[name] = [kid]
            node = kid
        else:
            return None
    return node


def _graft(dst, src):
    """Replace dst's root and children with a private copy of src."""
    fresh = src.copy()
    dst.root = fresh.root
    dst.children = fresh.children


# --- expressions --------------------------------------------------------------

_KIND_NAMES = {type(None): "void", bool: "bool", Long: "long", int: "int",
               float: "double", str: "string", bytes: "raw"}


def _kind_name(v):
    return _KIND_NAMES.get(type(v), type(v).__name__)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _add(left, right):
    # one string operand turns + into concatenation of rendered values
    if isinstance(left, str) or isinstance(right, str):
        l = left if isinstance(left, str) else render_basic(left)
        r = right if isinstance(right, str) else render_basic(right)
        return l + r
    if _is_number(left) and _is_number(right):
        if isinstance(left, float) or isinstance(right, float):
            return float(left) + float(right)
        if isinstance(left, Long) or isinstance(right, Long):
            return Long(int(left) + int(right))
        return left + right
    raise EvalError(f"cannot add {_kind_name(left)} and {_kind_name(right)}")


def eval_expr(expr, ctx):
    """Evaluate an expression to a basic value. Callers hold the session
    lock so a whole statement reads one consistent state."""
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, PathRead):
        node = _descend(ctx.session.root, expr.path, create=False)
        return node.root if node is not None else None
    if isinstance(expr, IsDefined):
        node = _descend(ctx.session.root, expr.path, create=False)
        if node is None:
            return False
        return node.root is not None or any(node.children.values())
    if isinstance(expr, Binary):
        left = eval_expr(expr.left, ctx)
        right = eval_expr(expr.right, ctx)
        if expr.op == "==":
            return _same_root(left, right)
        if expr.op == "!=":
            return not _same_root(left, right)
        if expr.op == "+":
            return _add(left, right)
    raise BuildError(f"unknown expression node {type(expr).__name__}")


# --- message plumbing ---------------------------------------------------------

class OpInfo:
    """Kind and resolved request/response types of one input operation."""

    __slots__ = ("kind", "request", "response")

    def __init__(self, kind, request, response=None):
        self.kind = kind          # "rr" | "ow"
        self.request = request
        self.response = response


class ReplyHandle:
    """Reply side of one request-response exchange. Sends at most once;
    later attempts are ignored so a fault can't produce two frames."""

    __slots__ = ("interpreter", "channel", "operation", "used")

    def __init__(self, interpreter, channel, operation):
        self.interpreter = interpreter
        self.channel = channel
        self.operation = operation
        self.used = False

    def send(self, payload, fault=None):
        if self.used:
            return
        self.used = True
        msg = Message(self.operation, payload, fault)
        try:
            self.channel.send(msg)
        except comm.CommError as e:
            log.warning("reply for %s lost: %s", self.operation, e)
            return
        self.interpreter._trace("OUT", msg)


class ChannelSource:
    """Feeds a session's receives from its own connection."""

    def __init__(self, interpreter, channel):
        self._interpreter = interpreter
        self._channel = channel

    def take(self):
        msg = self._channel.receive()
        return msg, ReplyHandle(self._interpreter, self._channel,
                                msg.operation)


class PresetSource(ChannelSource):
    """A channel source whose first take() is the already-admitted message
    that opened the session."""

    def __init__(self, interpreter, channel, msg, reply):
        super().__init__(interpreter, channel)
        self._first = (msg, reply)

    def take(self):
        if self._first is not None:
            pair, self._first = self._first, None
            return pair
        return super().take()


class MailboxSource:
    """Feeds the lone session of single mode from all connections at once.
    A None sentinel means the service is shutting down."""

    def __init__(self, mailbox):
        self._mailbox = mailbox

    def take(self):
        item = self._mailbox.get()
        if item is None:
            self._mailbox.put(None)  # wake any sibling strand as well
            raise ChannelClosed("service is shutting down")
        msg, reply, _channel = item
        return msg, reply


def _receive_matching(ctx, wanted):
    """Block until an inbound message names a wanted operation and its
    payload conforms to that operation's request type.

    Anything else is answered with a fault (request-response) or logged
    and dropped (one-way), and the wait continues. The failed message
    never touches session state.
    """
    if ctx.source is None:
        raise FaultSignal("IOException",
                          "receive outside a served session")
    while True:
        msg, reply = ctx.source.take()
        info = ctx.input_ops.get(msg.operation)
        if msg.operation in wanted:
            if conforms(msg.payload, info.request):
                ctx.interpreter._trace("IN", msg)
                return msg, reply
            if info.kind == "rr":
                reply.send(leaf(), fault="TypeMismatch")
            else:
                log.warning("dropped %s: payload does not conform to the "
                            "declared request type", msg.operation)
        elif info is not None and info.kind == "ow":
            log.warning("dropped stray one-way %s", msg.operation)
        else:
            # unknown operation, or a request-response we are not waiting on
            reply.send(leaf(), fault="OperationMismatch")


# --- process nodes ------------------------------------------------------------

class ProcessNode:
    """One executable behavior step. Immutable and session-free: run(ctx)
    may be called by many sessions at once."""

    __slots__ = ()

    def run(self, ctx):
        raise NotImplementedError


class NilNode(ProcessNode):
    __slots__ = ()

    def run(self, ctx):
        pass


NIL = NilNode()


class SequenceNode(ProcessNode):
    __slots__ = ("items",)

    def __init__(self, items):
        self.items = tuple(items)

    def run(self, ctx):
        for item in self.items:
            item.run(ctx)


class ParallelNode(ProcessNode):
    """Runs both strands over the same session state and joins before
    continuing; a fault in either strand propagates after the join (the
    left strand's fault wins when both fail)."""

    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = left
        self.right = right

    def run(self, ctx):
        failure = []

        def strand():
            try:
                self.right.run(ctx)
            except BaseException as e:
                failure.append(e)

        t = threading.Thread(target=strand, daemon=True)
        t.start()
        try:
            self.left.run(ctx)
        finally:
            t.join()
        if failure:
            raise failure[0]


class AssignNode(ProcessNode):
    __slots__ = ("path", "expr")

    def __init__(self, path, expr):
        self.path = tuple(path)
        self.expr = expr

    def run(self, ctx):
        with ctx.session.lock:
            value = eval_expr(self.expr, ctx)
            node = _descend(ctx.session.root, self.path, create=True)
            node.root = value


class IfNode(ProcessNode):
    __slots__ = ("cond", "then", "orelse")

    def __init__(self, cond, then, orelse):
        self.cond = cond
        self.then = then
        self.orelse = orelse

    def run(self, ctx):
        with ctx.session.lock:
            test = eval_expr(self.cond, ctx)
        if not isinstance(test, bool):
            raise EvalError(f"if condition must be a bool, "
                            f"got {_kind_name(test)}")
        (self.then if test else self.orelse).run(ctx)


class MatchNode(ProcessNode):
    """Data-driven branching: the subject is snapshot once, the first arm
    whose type it conforms to runs, and no match is a TypeMismatch fault."""

    __slots__ = ("subject_path", "arms")

    def __init__(self, subject_path, arms):
        self.subject_path = tuple(subject_path)
        self.arms = tuple(arms)  # (type name, resolved type, body node)

    def run(self, ctx):
        with ctx.session.lock:
            node = _descend(ctx.session.root, self.subject_path,
                            create=False)
            subject = node.copy() if node is not None else ValueTree()
        idx = select_arm(subject, [rtype for _, rtype, _ in self.arms])
        if idx is None:
            names = ", ".join(name for name, _, _ in self.arms)
            raise FaultSignal(
                "TypeMismatch",
                f"value at {'.'.join(self.subject_path)} matches none "
                f"of: {names}")
        self.arms[idx][2].run(ctx)


_strand_depth = threading.local()


class CallNode(ProcessNode):
    """Invocation of a named define. All call sites share the one body
    node, looked up lazily so mutually recursive defines link up."""

    __slots__ = ("name", "_defines")

    def __init__(self, name, defines):
        self.name = name
        self._defines = defines

    @property
    def target(self):
        try:
            return self._defines[self.name]
        except KeyError:
            raise BuildError(f"call to unbuilt procedure "
                             f"{self.name!r}") from None

    def run(self, ctx):
        depth = getattr(_strand_depth, "value", 0) + 1
        if depth > CALL_DEPTH_LIMIT:
            raise FaultSignal(
                "RecursionLimit",
                f"procedure call depth exceeded {CALL_DEPTH_LIMIT}")
        _strand_depth.value = depth
        try:
            self.target.run(ctx)
        finally:
            _strand_depth.value = depth - 1


class OneWayRecvNode(ProcessNode):
    __slots__ = ("operation", "var_path")

    def __init__(self, operation, var_path):
        self.operation = operation
        self.var_path = tuple(var_path)

    def run(self, ctx):
        msg, reply = _receive_matching(ctx, {self.operation})
        self.accept(ctx, msg, reply)

    def accept(self, ctx, msg, reply):
        with ctx.session.lock:
            _graft(_descend(ctx.session.root, self.var_path, create=True),
                   msg.payload)


class RequestResponseRecvNode(ProcessNode):
    """Receive, run the attached body, then reply with the value at the
    output path — or with a fault if the body raised one. The reply value
    is checked against the declared response type; a mismatch turns the
    reply into a TypeMismatch fault."""

    __slots__ = ("operation", "in_path", "out_path", "body", "response")

    def __init__(self, operation, in_path, out_path, body, response):
        self.operation = operation
        self.in_path = tuple(in_path)
        self.out_path = tuple(out_path)
        self.body = body
        self.response = response

    def run(self, ctx):
        msg, reply = _receive_matching(ctx, {self.operation})
        self.accept(ctx, msg, reply)

    def accept(self, ctx, msg, reply):
        with ctx.session.lock:
            _graft(_descend(ctx.session.root, self.in_path, create=True),
                   msg.payload)
        prev = ctx.pending_reply
        ctx.pending_reply = reply
        try:
            self.body.run(ctx)
        except FaultSignal as f:
            reply.send(leaf(), fault=f.name)
            raise
        finally:
            ctx.pending_reply = prev
        with ctx.session.lock:
            out = _descend(ctx.session.root, self.out_path, create=False)
            out_value = out.copy() if out is not None else ValueTree()
        if conforms(out_value, self.response):
            reply.send(out_value)
        else:
            log.warning("reply for %s does not conform to its declared "
                        "response type; sent a TypeMismatch fault instead",
                        self.operation)
            reply.send(leaf(), fault="TypeMismatch")


class InputChoiceNode(ProcessNode):
    """Process-driven branching: waits on all guard operations at once and
    runs exactly the branch whose operation arrives first."""

    __slots__ = ("branches", "_by_op")

    def __init__(self, branches):
        self.branches = tuple(branches)  # (guard recv node, body node)
        by_op = {}
        for i, (guard, _body) in enumerate(self.branches):
            by_op.setdefault(guard.operation, i)
        self._by_op = by_op

    def run(self, ctx):
        msg, reply = _receive_matching(ctx, set(self._by_op))
        guard, body = self.branches[self._by_op[msg.operation]]
        ctx.interpreter._bump("branches")
        guard.accept(ctx, msg, reply)
        body.run(ctx)


def _payload_for_send(ctx, arg):
    """A bare path argument ships that whole subtree; any other expression
    ships its basic value at the root; no argument ships an empty value."""
    if arg is None:
        return ValueTree()
    with ctx.session.lock:
        if isinstance(arg, PathRead):
            node = _descend(ctx.session.root, arg.path, create=False)
            return node.copy() if node is not None else ValueTree()
        return leaf(eval_expr(arg, ctx))


class NotificationNode(ProcessNode):
    __slots__ = ("operation", "port", "arg")

    def __init__(self, operation, port, arg):
        self.operation = operation
        self.port = port
        self.arg = arg

    def run(self, ctx):
        payload = _payload_for_send(ctx, self.arg)
        binding = ctx.output_ports[self.port]
        msg = Message(self.operation, payload)
        if binding.location.startswith("builtin://"):
            ctx.interpreter._builtin_call(binding, msg)
            return
        try:
            comm.notify(binding.location, msg)
        except comm.CommError as e:
            raise FaultSignal("IOException", str(e)) from None
        ctx.interpreter._trace("OUT", msg)


class SolicitNode(ProcessNode):
    """Send a request through an output port and block for the reply; a
    fault reply re-raises here as a local fault."""

    __slots__ = ("operation", "port", "arg", "result_path")

    def __init__(self, operation, port, arg, result_path):
        self.operation = operation
        self.port = port
        self.arg = arg
        self.result_path = None if result_path is None else tuple(result_path)

    def run(self, ctx):
        payload = _payload_for_send(ctx, self.arg)
        binding = ctx.output_ports[self.port]
        msg = Message(self.operation, payload)
        if binding.location.startswith("builtin://"):
            reply = ctx.interpreter._builtin_call(binding, msg)
        else:
            ctx.interpreter._trace("OUT", msg)
            try:
                reply = comm.solicit(binding.location, msg,
                                     ctx.interpreter.request_timeout)
            except comm.TimeoutError as e:
                raise FaultSignal("Timeout", str(e)) from None
            except comm.CommError as e:
                raise FaultSignal("IOException", str(e)) from None
            ctx.interpreter._trace("IN", reply)
        if reply.fault:
            raise FaultSignal(reply.fault,
                              f"{self.operation}@{self.port} replied with "
                              f"fault {reply.fault}")
        if self.result_path is not None:
            with ctx.session.lock:
                _graft(_descend(ctx.session.root, self.result_path,
                                create=True),
                       reply.payload)


# --- tree building ------------------------------------------------------------

def _collect_input_ops(program, resolved):
    interfaces = {i.name: i for i in program.interfaces}
    ops = {}
    try:
        for port in program.input_ports:
            for iface_name in port.interfaces:
                iface = interfaces[iface_name]
                for op in iface.request_response_ops:
                    ops[op.name] = OpInfo(
                        "rr",
                        resolve_type_ref(op.request_type, resolved),
                        resolve_type_ref(op.response_type, resolved))
                for op in iface.one_way_ops:
                    ops[op.name] = OpInfo(
                        "ow",
                        resolve_type_ref(op.request_type, resolved))
    except (KeyError, UnresolvedLink) as e:
        raise BuildError(f"program was not verified: {e}") from None
    return ops


class _TreeBuilder:
    def __init__(self, program, resolved):
        self.program = program
        self.resolved = resolved
        self.input_ops = _collect_input_ops(program, resolved)
        self.defines = {}

    def build(self):
        for name, body in self.program.defines.items():
            self.defines[name] = self._process(body)
        main = (self._process(self.program.main_block)
                if self.program.main_block is not None else NIL)
        init = (self._process(self.program.init_block)
                if self.program.init_block is not None else None)
        return main, init, self.defines

    def _response_type(self, operation):
        info = self.input_ops.get(operation)
        if info is None or info.kind != "rr":
            raise BuildError(f"program was not verified: {operation!r} is "
                             f"not a request-response input operation")
        return info.response

    def _process(self, p):
        if isinstance(p, Nil):
            return NIL
        if isinstance(p, Sequence):
            return SequenceNode(self._process(item) for item in p.items)
        if isinstance(p, Parallel):
            return ParallelNode(self._process(p.left), self._process(p.right))
        if isinstance(p, Assign):
            return AssignNode(p.path, p.expr)
        if isinstance(p, If):
            orelse = NIL if p.orelse is None else self._process(p.orelse)
            return IfNode(p.cond, self._process(p.then), orelse)
        if isinstance(p, Match):
            arms = []
            for arm in p.arms:
                try:
                    rtype = resolve_type_ref(arm.type_name, self.resolved)
                except UnresolvedLink as e:
                    raise BuildError(
                        f"program was not verified: {e}") from None
                arms.append((arm.type_name, rtype, self._process(arm.body)))
            return MatchNode(p.subject_path, arms)
        if isinstance(p, CallDefine):
            return CallNode(p.name, self.defines)
        if isinstance(p, OneWayRecv):
            return OneWayRecvNode(p.operation, p.var_path)
        if isinstance(p, RequestResponseRecv):
            return RequestResponseRecvNode(
                p.operation, p.in_path, p.out_path, self._process(p.body),
                self._response_type(p.operation))
        if isinstance(p, InputChoice):
            branches = []
            for branch in p.branches:
                guard = self._process(branch.guard)
                branches.append((guard, self._process(branch.body)))
            return InputChoiceNode(branches)
        if isinstance(p, Notification):
            return NotificationNode(p.operation, p.port, p.arg)
        if isinstance(p, SolicitResponse):
            return SolicitNode(p.operation, p.port, p.arg, p.result_path)
        raise BuildError(f"unknown process node {type(p).__name__}")


def build_process_tree(program, resolved):
    """Build the executable tree for a verified program's main behavior."""
    main, _init, _defines = _TreeBuilder(program, resolved).build()
    return main


# --- the interpreter ----------------------------------------------------------

class PortBinding:
    """A port's effective network identity after any override."""

    __slots__ = ("name", "location", "protocol")

    def __init__(self, name, location, protocol):
        self.name = name
        self.location = location
        self.protocol = protocol


def format_trace_line(direction, message):
    parts = [f"{direction} op={message.operation}"]
    if message.fault:
        parts.append(f"fault={message.fault}")
    parts.append(f"bytes={comm.encoded_payload_size(message)}")
    return " ".join(parts)


def _run_in_strand(fn):
    """Run fn on a fresh big-stack thread and re-raise its failure here.
    Keeps deep recursion off the caller's (often default-size) stack."""
    failure = []

    def go():
        try:
            fn()
        except BaseException as e:
            failure.append(e)

    t = threading.Thread(target=go, daemon=True)
    t.start()
    t.join()
    if failure:
        raise failure[0]


class Interpreter:
    """One verified program, resolved and built, ready to run sessions.

    Construct with the output of the parse→optimize→verify pipeline;
    construction itself re-resolves types and builds the process tree but
    performs no verification.
    """

    def __init__(self, program, *, console_stream=None, trace=None,
                 location_overrides=None,
                 request_timeout=comm.DEFAULT_TIMEOUT):
        self.program = program
        self.resolved_types = resolve(program.type_table())
        self.input_ops = _collect_input_ops(program, self.resolved_types)

        overrides = dict(location_overrides or {})
        self.output_ports = {}
        for port in program.output_ports:
            location = overrides.pop(port.name, port.location)
            self.output_ports[port.name] = PortBinding(
                port.name, location, port.protocol)
        self.input_bindings = []
        for port in program.input_ports:
            location = overrides.pop(port.name, port.location)
            self.input_bindings.append(PortBinding(
                port.name, location, port.protocol))
        if overrides:
            raise BuildError("location override names unknown port(s): "
                             + ", ".join(sorted(overrides)))
        for binding in (*self.input_bindings, *self.output_ports.values()):
            if binding.protocol != comm.PROTOCOL_NAME and \
                    not binding.location.startswith("builtin://"):
                log.warning("port %s: protocol %r has no native codec "
                            "here; the wire speaks %s", binding.name,
                            binding.protocol, comm.PROTOCOL_NAME)

        builder = _TreeBuilder(program, self.resolved_types)
        self.main_tree, self.init_tree, self.defines = builder.build()

        self.console = ConsoleService(console_stream)
        self.request_timeout = request_timeout
        self._trace_fn = trace
        self.stats = collections.Counter()
        self._stats_lock = threading.Lock()
        self._base_root = ValueTree()
        self._init_done = False
        self._mailbox = None
        self._stop = threading.Event()
        self.listeners = []

    # -- small shared plumbing

    def _bump(self, key, n=1):
        with self._stats_lock:
            self.stats[key] += n

    def _trace(self, direction, message):
        if self._trace_fn is not None:
            self._trace_fn(format_trace_line(direction, message))

    def _builtin_call(self, binding, msg):
        self._trace("OUT", msg)
        if binding.location != CONSOLE_LOCATION:
            raise FaultSignal("IOException",
                              f"no builtin service at {binding.location}")
        try:
            result = self.console.handle(msg.operation, msg.payload)
        except LookupError as e:
            raise FaultSignal("OperationMismatch", str(e)) from None
        reply = Message(msg.operation, result)
        self._trace("IN", reply)
        return reply

    # -- session lifecycle

    def run_init(self):
        """Run the init block once, over the template state every new
        session starts from a copy of."""
        if self._init_done:
            return
        self._init_done = True
        if self.init_tree is None:
            return
        session = SessionState(self._base_root)
        ctx = ExecutionContext(self, session)
        _run_in_strand(lambda: self.init_tree.run(ctx))

    def _new_session(self):
        self._bump("sessions")
        return SessionState(self._base_root.copy())

    def run_once(self, source=None):
        """Run init (first time through) and then one main session to
        completion. Returns the finished session for inspection."""
        _ensure_thread_config()
        self.run_init()
        session = self._new_session()
        ctx = ExecutionContext(self, session, source)
        _run_in_strand(lambda: self.main_tree.run(ctx))
        return session

    # -- inbound admission and session execution

    def _admit(self, msg, reply):
        """Session-independent checks a message must pass before it may
        open (or join) a session; failures answer the peer directly."""
        info = self.input_ops.get(msg.operation)
        if info is None:
            reply.send(leaf(), fault="OperationMismatch")
            return None
        if not conforms(msg.payload, info.request):
            if info.kind == "rr":
                reply.send(leaf(), fault="TypeMismatch")
            else:
                log.warning("dropped %s: payload does not conform to the "
                            "declared request type", msg.operation)
            return None
        return info

    def _run_session(self, msg, reply, channel):
        session = self._new_session()
        source = PresetSource(self, channel, msg, reply)
        ctx = ExecutionContext(self, session, source)
        try:
            self.main_tree.run(ctx)
        except FaultSignal as f:
            log.warning("session %d ended with fault %s: %s",
                        session.session_id, f.name, f)
            info = self.input_ops.get(msg.operation)
            if info is not None and info.kind == "rr" and not reply.used:
                reply.send(leaf(), fault=f.name)
        except ChannelClosed:
            pass  # peer went away mid-session
        except comm.CommError as e:
            log.warning("session %d aborted: %s", session.session_id, e)

    def _connection_loop(self, channel, deliver):
        while True:
            try:
                msg = channel.receive()
            except ChannelClosed:
                return
            except comm.DecodeError as e:
                log.warning("closing connection after undecodable "
                            "frame: %s", e)
                return
            reply = ReplyHandle(self, channel, msg.operation)
            if self._admit(msg, reply) is None:
                continue
            deliver(msg, reply, channel)

    def _sequential_loop(self):
        while True:
            item = self._mailbox.get()
            if item is None:
                return
            self._run_session(*item)

    # -- serving

    def serve(self, ready=None):
        """Bind every input port and process inbound traffic until stop().

        In single mode, returns as soon as main completes instead. The
        optional ready callback receives [(port name, bound location)]
        once all listeners are up — bind locations with port 0 to let the
        system pick.
        """
        _ensure_thread_config()
        self.run_init()
        mode = self.program.execution_mode
        if mode != "concurrent":
            self._mailbox = queue.SimpleQueue()
            deliver = lambda *item: self._mailbox.put(item)
        else:
            deliver = self._run_session
        handler = lambda channel: self._connection_loop(channel, deliver)

        try:
            for binding in self.input_bindings:
                listener = comm.listen(binding.location, handler)
                self.listeners.append((binding.name, listener))
            if ready is not None:
                ready([(name, lst.location) for name, lst in self.listeners])

            if mode == "concurrent":
                self._stop.wait()
            elif mode == "sequential":
                _run_in_strand(self._sequential_loop)
            else:  # single: main runs exactly once over a shared mailbox
                source = MailboxSource(self._mailbox)
                session = SessionState(self._base_root)
                ctx = ExecutionContext(self, session, source)
                try:
                    _run_in_strand(lambda: self.main_tree.run(ctx))
                except ChannelClosed:
                    pass
        finally:
            self.stop()
            for _name, listener in self.listeners:
                listener.stop()
            self.listeners = []

    def stop(self):
        """Ask serve() to wind down; safe to call from any thread."""
        self._stop.set()
        if self._mailbox is not None:
            self._mailbox.put(None)

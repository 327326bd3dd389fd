"""Party state machines for the four-server PPSR runtime.

Roles:

* ``C1 .. CK`` data owners. Each holds a vertical slice of the features;
  ``CK`` also holds the target.
* ``P0``, ``P1`` compute servers. They hold additive shares of the joint
  dataset and evaluate candidate expressions over them in lockstep.
* ``P2`` triple dealer. It streams Beaver triple shares to ``P0``/``P1``
  on request from ``P0``.
* ``P3`` coordinator. It runs the evolutionary loop and only ever sees
  expression text and reconstructed fitness values.

Each party owns its state and talks to the others only through a
:class:`~ppsr.protocol.transport.Transport`.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np

from ..errors import (
    ChannelFailure,
    DimensionMismatch,
    MagnitudeOverflow,
    PPSRError,
    TripleExhaustion,
)
from ..expr import Binary, Constant, Node, Unary, Variable, eval_plain, has_variable, parse
from ..kernels import TRIG_ITERATIONS, kernel_cost, sec_sincos
from ..ring import FixedCodec
from ..sharing import SecureContext, open_masked, beaver_combine, truncate_share
from .messages import BeaverOpen, Control, EvalRequest, FitnessShare, ShareUpload, TripleBatch
from .transport import Transport

log = logging.getLogger(__name__)

P0, P1, P2, P3 = "P0", "P1", "P2", "P3"
COMPUTE = (P0, P1)
DEFAULT_TRIPLE_BATCH = 1 << 14

_ERRORS = {
    "TripleExhaustion": TripleExhaustion,
    "DimensionMismatch": DimensionMismatch,
    "MagnitudeOverflow": MagnitudeOverflow,
}


def client_role(j: int) -> str:
    return f"C{j}"


def _raise_remote(msg_payload: Control, sender: str):
    kind = msg_payload.args.get("kind", "ChannelFailure")
    reason = msg_payload.args.get("reason", "")
    raise _ERRORS.get(kind, ChannelFailure)(f"{sender} aborted: {reason}")


def expect(transport: Transport, me: str, sender: str, payload_type):
    """Receive from ``sender`` and insist on a payload type; remote errors re-raise here."""
    msg = transport.recv(me, sender)
    p = msg.payload
    if isinstance(p, Control) and p.op == "error":
        _raise_remote(p, sender)
    if not isinstance(p, payload_type):
        raise ChannelFailure(f"{me} expected {payload_type.__name__} from {sender}, got {msg.kind}")
    return p


def _error_control(exc: BaseException) -> Control:
    kind = type(exc).__name__ if type(exc).__name__ in _ERRORS else "ChannelFailure"
    return Control("error", {"kind": kind, "reason": str(exc)})


# -- data owners ------------------------------------------------------------------


@dataclass
class ClientData:
    """A data owner's private columns (and the target, for the last client)."""

    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)


class Client:
    """Data owner ``C_j``: shares its block with ``P0``/``P1`` (Secret Data Sharing)."""

    def __init__(self, j: int, data: ClientData, codec: FixedCodec, rng: np.random.Generator):
        self.role = client_role(j)
        self.data = data
        self.codec = codec
        self.rng = rng

    def _split(self, values):
        enc = self.codec.encode(values)
        mask = self.codec.ring.random(self.rng, enc.shape)
        return mask, self.codec.ring.sub(enc, mask)

    def upload(self, transport: Transport, tag: str = "train"):
        r, rest = self._split(self.data.X)
        transport.send(self.role, P0, ShareUpload(f"{tag}:X", r))
        transport.send(self.role, P1, ShareUpload(f"{tag}:X", rest))
        if self.data.y is not None:
            w, rest_y = self._split(self.data.y)
            transport.send(self.role, P0, ShareUpload(f"{tag}:y", w))
            transport.send(self.role, P1, ShareUpload(f"{tag}:y", rest_y))

    def disclose_sst(self, transport: Transport, tag: str = "train"):
        """Release the target's variance (SST/m) to the coordinator, once per dataset."""
        y = self.data.y
        transport.send(self.role, P3, Control("sst", {"dataset": tag, "value": float(np.mean((y - y.mean()) ** 2))}))


# -- compute servers -------------------------------------------------------------------


class TriplePool:
    """Own halves of dealt triples, consumed strictly in order."""

    def __init__(self, party: "ComputeParty", batch_size: int):
        self.party = party
        self.batch_size = batch_size
        empty = np.zeros(0, dtype=np.uint64)
        self.a, self.b, self.c = empty, empty, empty
        self.received = 0
        self.used = 0

    def take(self, n: int):
        while len(self.a) < n:
            if self.party.index == 0:
                self.party.transport.send(P0, P2, Control("triples", {"count": max(self.batch_size, n - len(self.a))}))
            batch = expect(self.party.transport, self.party.role, P2, TripleBatch)
            self.a = np.concatenate([self.a, batch.a])
            self.b = np.concatenate([self.b, batch.b])
            self.c = np.concatenate([self.c, batch.c])
            self.received += len(batch)
        out = self.a[:n], self.b[:n], self.c[:n]
        self.a, self.b, self.c = self.a[n:], self.b[n:], self.c[n:]
        self.used += n
        return out


class PartyContext(SecureContext):
    """One compute server's view: shared values are its own share arrays."""

    def __init__(self, party: "ComputeParty"):
        super().__init__(party.codec)
        self.party = party
        self.i = party.index

    def public(self, template, value):
        shape = np.shape(template)
        # both servers encode, so an out-of-range constant fails on both
        enc = self.codec.encode(np.full(shape, float(value)))
        return enc if self.i == 0 else self.ring.zeros(shape)

    def add(self, x, y):
        return self.ring.add(x, y)

    def sub(self, x, y):
        return self.ring.sub(x, y)

    def add_public_raw(self, x, v):
        return self.ring.add(x, v) if self.i == 0 else x

    def mul_int(self, x, k):
        return self.ring.mul(x, int(k) & self.ring.mask)

    def shift(self, x, bits):
        return truncate_share(self.i, x, bits, self.ring)

    def mul_raw_many(self, pairs):
        shapes = [np.shape(p[0]) for p in pairs]
        xs = np.concatenate([np.ravel(p[0]) for p in pairs])
        ys = np.concatenate([np.ravel(p[1]) for p in pairs])
        n = len(xs)
        a, b, c = self.party.pool.take(n)
        eps_i, delta_i = open_masked(xs, ys, a, b, self.ring)
        party = self.party
        party.transport.send(party.role, party.peer, BeaverOpen(np.concatenate([eps_i, delta_i])))
        other = expect(party.transport, party.role, party.peer, BeaverOpen).values
        if len(other) != 2 * n:
            raise ChannelFailure("opening size mismatch between compute parties")
        eps = self.ring.add(eps_i, other[:n])
        delta = self.ring.add(delta_i, other[n:])
        prod = beaver_combine(self.i, a, b, c, eps, delta, self.ring)
        self.rounds += 1
        self.triples_used += n
        out, start = [], 0
        for shape in shapes:
            size = int(np.prod(shape)) if shape else 1
            out.append(prod[start:start + size].reshape(shape))
            start += size
        return out


@dataclass
class SharedDataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def m(self) -> int:
        return self.X.shape[0]


class ComputeParty:
    """Compute server ``P_i`` for ``i`` in ``{0, 1}``."""

    def __init__(self, index: int, transport: Transport, codec: FixedCodec, triple_batch: int = DEFAULT_TRIPLE_BATCH):
        self.index = index
        self.role = COMPUTE[index]
        self.peer = COMPUTE[1 - index]
        self.transport = transport
        self.codec = codec
        self.datasets: dict[str, SharedDataset] = {}
        self.pool = TriplePool(self, triple_batch)
        self.ctx = PartyContext(self)
        self.error: BaseException | None = None

    # Secret Data Sharing, receiving side.
    def receive_dataset(self, tag: str, client_roles) -> SharedDataset:
        blocks, y = [], None
        for role in client_roles:
            up = expect(self.transport, self.role, role, ShareUpload)
            if up.tag != f"{tag}:X":
                raise ChannelFailure(f"unexpected upload {up.tag!r} from {role}")
            blocks.append(up.values)
        # the target comes from the last client, after its feature block
        up = expect(self.transport, self.role, client_roles[-1], ShareUpload)
        if up.tag != f"{tag}:y":
            raise ChannelFailure(f"expected target share from {client_roles[-1]}, got {up.tag!r}")
        y = up.values
        rows = {b.shape[0] for b in blocks} | {y.shape[0]}
        if len(rows) != 1:
            raise DimensionMismatch(f"clients disagree on the number of rows: {sorted(rows)}")
        ds = SharedDataset(np.concatenate(blocks, axis=1), y)
        self.datasets[tag] = ds
        return ds

    def evaluate(self, tree: Node, tag: str = "train"):
        return secure_eval_expression(self.ctx, tree, self.datasets[tag].X)

    def mse_share(self, tree: Node, tag: str = "train"):
        return secure_mse(self.ctx, tree, self.datasets[tag])

    def handle_eval(self, req: EvalRequest) -> FitnessShare:
        if req.fitness.lower() != "mse":
            raise ChannelFailure(f"unsupported fitness function {req.fitness!r}")
        values, invalid = [], []
        for text in req.expressions:
            try:
                values.append(int(self.mse_share(parse(text), req.dataset)))
                invalid.append(False)
            except MagnitudeOverflow:
                # raised on public constants only, so both servers agree
                values.append(0)
                invalid.append(True)
        return FitnessShare(np.array(values, dtype=np.uint64), tuple(invalid))

    def serve(self):
        """Command loop driven by ``P3``; returns on ``stop`` or after reporting an error."""
        try:
            while True:
                msg = self.transport.recv(self.role, P3)
                p = msg.payload
                if isinstance(p, Control) and p.op == "stop":
                    return
                if isinstance(p, Control) and p.op == "load":
                    ds = self.receive_dataset(p.args["dataset"], p.args["clients"])
                    self.transport.send(self.role, P3, Control("loaded", {"dataset": p.args["dataset"], "rows": ds.m, "cols": ds.X.shape[1]}))
                elif isinstance(p, EvalRequest):
                    self.transport.send(self.role, P3, self.handle_eval(p))
                else:
                    raise ChannelFailure(f"{self.role} cannot handle {msg.kind}")
        except PPSRError as exc:
            self.error = exc
            log.debug("%s aborting: %s", self.role, exc)
            for target in (P3, self.peer):
                try:
                    self.transport.send(self.role, target, _error_control(exc))
                except ChannelFailure:
                    pass


# -- triple dealer ---------------------------------------------------------------------


class DealerParty:
    """``P2``: answers triple requests from ``P0`` with a batch for each compute server."""

    def __init__(self, transport: Transport, codec: FixedCodec, rng: np.random.Generator, budget: int | None = None):
        self.transport = transport
        self.ring = codec.ring
        self.rng = rng
        self.budget = budget
        self.dealt = 0

    def deal(self, count: int) -> tuple[TripleBatch, TripleBatch]:
        ring, rng = self.ring, self.rng
        a, b = ring.random(rng, count), ring.random(rng, count)
        c = ring.mul(a, b)
        halves = []
        for v in (a, b, c):
            r = ring.random(rng, count)
            halves.append((r, ring.sub(v, r)))
        self.dealt += count
        return tuple(TripleBatch(halves[0][i], halves[1][i], halves[2][i]) for i in (0, 1))

    def serve(self):
        while True:
            try:
                msg = self.transport.recv(P2, P0)
            except ChannelFailure:
                return
            p = msg.payload
            if not isinstance(p, Control) or p.op == "stop":
                return
            if p.op == "error":
                continue
            count = int(p.args["count"])
            if self.budget is not None and self.dealt + count > self.budget:
                exc = TripleExhaustion(f"dealer budget of {self.budget} triples exhausted")
                for target in COMPUTE:
                    self.transport.send(P2, target, _error_control(exc))
                continue
            for target, batch in zip(COMPUTE, self.deal(count)):
                self.transport.send(P2, target, batch)


# -- secure evaluation -----------------------------------------------------------------


def secure_eval_expression(ctx: SecureContext, tree: Node, X_share):
    """Shares of the tree's value on every row of the shared matrix.

    Variable-free subtrees are public and evaluated in the clear by both
    servers. Products with a public side are local; each secret-by-secret
    product is one opening round over all rows; ``sin``/``cos`` call the
    rotation kernel.
    """
    m = np.shape(X_share)[0]
    template = X_share[:, 0] if np.ndim(X_share) == 2 else X_share

    def public_value(node):
        try:
            return eval_plain(node, ())
        except (ValueError, OverflowError) as exc:
            raise MagnitudeOverflow(f"public subexpression is not finite: {exc}") from None

    def rec(node):
        if not has_variable(node):
            return ctx.public(template, public_value(node))
        if isinstance(node, Variable):
            return X_share[:, node.index - 1]
        if isinstance(node, Unary):
            cos, sin = sec_sincos(ctx, rec(node.child))
            return sin if node.op == "sin" else cos
        if node.op == "*":
            left_public = not has_variable(node.left)
            right_public = not has_variable(node.right)
            if left_public:
                return ctx.mul_public(rec(node.right), public_value(node.left))
            if right_public:
                return ctx.mul_public(rec(node.left), public_value(node.right))
            return ctx.mul(rec(node.left), rec(node.right))
        left, right = rec(node.left), rec(node.right)
        return ctx.add(left, right) if node.op == "+" else ctx.sub(left, right)

    out = rec(tree)
    assert np.shape(out)[0] == m
    return out


def secure_mse(ctx: SecureContext, tree: Node, data: SharedDataset):
    """This party's share of ``(1/m) * sum (y - yhat)^2`` at the fixed-point scale."""
    yhat = secure_eval_expression(ctx, tree, data.X)
    resid = ctx.sub(data.y, yhat)
    (sq,) = ctx.mul_raw_many([(resid, resid)])
    total = ctx.shift(ctx.ring.element(np.sum(sq, dtype=np.uint64)), ctx.frac_bits)
    return ctx.mul_public(total, 1.0 / data.m)


def opening_rounds(tree: Node, trig_iterations: int = TRIG_ITERATIONS) -> int:
    """Opening rounds :func:`secure_eval_expression` spends on ``tree``."""
    if not has_variable(tree) or isinstance(tree, (Variable, Constant)):
        return 0
    if isinstance(tree, Unary):
        return opening_rounds(tree.child, trig_iterations) + kernel_cost("sin", iterations=trig_iterations)[0]
    rounds = opening_rounds(tree.left, trig_iterations) + opening_rounds(tree.right, trig_iterations)
    if tree.op == "*" and has_variable(tree.left) and has_variable(tree.right):
        rounds += 1
    return rounds


def multiplication_nodes(tree: Node) -> int:
    """Secret-by-secret ``*`` nodes (those that need a Beaver triple)."""
    if not isinstance(tree, Binary):
        return multiplication_nodes(tree.child) if isinstance(tree, Unary) else 0
    own = int(tree.op == "*" and has_variable(tree.left) and has_variable(tree.right))
    return own + multiplication_nodes(tree.left) + multiplication_nodes(tree.right)


def run_compute_pair(fn, parties, *args):
    """Run ``fn(party, *args)`` on both compute servers concurrently; return both results."""
    results: list = [None, None]
    errors: list = [None, None]

    def work(i):
        try:
            results[i] = fn(parties[i], *args)
        except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
            errors[i] = exc
            try:
                parties[i].transport.send(parties[i].role, parties[i].peer, _error_control(exc))
            except Exception:  # noqa: BLE001
                pass

    threads = [threading.Thread(target=work, args=(i,), daemon=True) for i in (0, 1)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for exc in errors:
        if exc is not None:
            raise exc
    return results


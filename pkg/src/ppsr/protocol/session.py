"""Wiring the parties into a running session.

:class:`Session` owns one transport, the two compute servers, the dealer and
the clients, runs the servers and dealer on their own threads and exposes the
coordinator-side operations: loading shared datasets, secure fitness
evaluation and the full secure GP run.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import uuid
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ChannelFailure, PPSRError
from ..expr import Node, format_expr
from ..gp import WORST_FITNESS, GpConfig, RunResult, evolve
from ..ring import FixedCodec, Ring
from ..sharing import reconstruct, Share
from .messages import Control, EvalRequest, FitnessShare, ShareUpload, TripleBatch
from .parties import (
    COMPUTE,
    DEFAULT_TRIPLE_BATCH,
    P0,
    P1,
    P2,
    P3,
    Client,
    ClientData,
    ComputeParty,
    DealerParty,
    SharedDataset,
    expect,
    run_compute_pair,
)
from .transport import InProcTransport, TcpTransport, Transport


@dataclass(frozen=True)
class SessionConfig:
    ring_bits: int = 64
    frac_bits: int = 16
    seed: int = 0
    triple_batch: int = DEFAULT_TRIPLE_BATCH
    triple_budget: int | None = None

    def digest(self, extra: dict | None = None) -> bytes:
        payload = {"session": asdict(self), "extra": extra or {}}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).digest()


class Session:
    """One PPSR deployment: ``K`` clients, ``P0``-``P3``, one transport.

    ``transport`` may be ``"inproc"``, ``"tcp"`` or a ready
    :class:`Transport` instance.
    """

    def __init__(
        self,
        clients: list[ClientData],
        config: SessionConfig = SessionConfig(),
        transport: str | Transport = "inproc",
        session_id: str | None = None,
        config_extra: dict | None = None,
    ):
        if len(clients) < 2:
            raise ValueError("vertical PPSR needs at least two clients")
        if clients[-1].y is None or any(c.y is not None for c in clients[:-1]):
            raise ValueError("exactly the last client must hold the target")
        self.config = config
        self.codec = FixedCodec(config.frac_bits, Ring(config.ring_bits))
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.config_hash = config.digest(config_extra)
        seeds = np.random.SeedSequence(config.seed).spawn(len(clients) + 1)
        self.client_roles = [f"C{j}" for j in range(1, len(clients) + 1)]
        roles = [P0, P1, P2, P3, *self.client_roles]
        if isinstance(transport, Transport):
            self.transport = transport
        elif transport == "inproc":
            self.transport = InProcTransport(self.session_id)
        elif transport == "tcp":
            self.transport = TcpTransport(roles, self.session_id, config.ring_bits, config.frac_bits, self.config_hash)
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self.clients = [
            Client(j, data, self.codec, np.random.default_rng(seeds[j - 1]))
            for j, data in enumerate(clients, start=1)
        ]
        self.parties = [ComputeParty(i, self.transport, self.codec, config.triple_batch) for i in (0, 1)]
        self.dealer = DealerParty(self.transport, self.codec, np.random.default_rng(seeds[-1]), config.triple_budget)
        self.sst: dict[str, float] = {}
        self.loaded: dict[str, tuple[int, int]] = {}
        self._threads: list[threading.Thread] = []
        self._started = False
        self._closed = False

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        if self._started:
            return self
        self._started = True
        for target in (self.parties[0].serve, self.parties[1].serve, self.dealer.serve):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def close(self):
        if self._closed:
            return
        self._closed = True
        if self._started:
            for role in (P0, P1):
                try:
                    self.transport.send(P3, role, Control("stop"))
                except ChannelFailure:
                    pass
            for t in self._threads[:2]:
                t.join(timeout=10)
            try:
                self.transport.send(P0, P2, Control("stop"))
            except ChannelFailure:
                pass
            self._threads[2].join(timeout=10)
        self.transport.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    @property
    def triples_used(self) -> int:
        return self.parties[0].pool.used

    @property
    def opening_rounds(self) -> int:
        return self.parties[0].ctx.rounds

    # -- coordinator operations ----------------------------------------------

    def _collect(self, payload_type):
        out = []
        for role in COMPUTE:
            out.append(expect(self.transport, P3, role, payload_type))
        return out

    def share_dataset(self, tag: str, clients: list[ClientData] | None = None):
        """Secret Data Sharing for one dataset, driven from ``P3``.

        ``clients`` replaces the clients' held data for this tag (used for the
        test split); by default the session's own client data is shared.
        """
        self.start()
        for role in COMPUTE:
            self.transport.send(P3, role, Control("load", {"dataset": tag, "clients": self.client_roles}))
        for k, client in enumerate(self.clients):
            if clients is not None:
                client.data = clients[k]
            client.upload(self.transport, tag)
        acks = self._collect(Control)
        shapes = {(a.args["rows"], a.args["cols"]) for a in acks}
        if len(shapes) != 1:
            raise ChannelFailure("compute servers disagree on the loaded dataset shape")
        self.loaded[tag] = shapes.pop()
        self.clients[-1].disclose_sst(self.transport, tag)
        sst = expect(self.transport, P3, self.clients[-1].role, Control)
        self.sst[tag] = float(sst.args["value"])
        return self.loaded[tag]

    def evaluate_fitness(self, trees: list[Node], tag: str = "train") -> list[float]:
        """Secure Fitness Evaluation of a batch of expressions; returns z at ``P3``."""
        if not trees:
            return []
        req = EvalRequest(tag, "mse", tuple(format_expr(t) for t in trees))
        for role in COMPUTE:
            self.transport.send(P3, role, req)
        shares = self._collect(FitnessShare)
        z = self.codec.decode(reconstruct(Share(0, shares[0].values), Share(1, shares[1].values), self.codec.ring))
        invalid = shares[0].invalid or (False,) * len(trees)
        return [WORST_FITNESS if bad else float(v) for v, bad in zip(np.atleast_1d(z), invalid)]

    def oracle(self, tag: str = "train"):
        return lambda trees: self.evaluate_fitness(list(trees), tag)


def secret_data_sharing(clients: list[ClientData], transport: Transport, codec: FixedCodec = FixedCodec(), seed: int = 0, tag: str = "train"):
    """Run Secret Data Sharing without servers' command loops.

    Returns the two compute servers, each holding its share of the joint
    dataset under ``tag``.
    """
    seeds = np.random.SeedSequence(seed).spawn(len(clients))
    owners = [Client(j, c, codec, np.random.default_rng(s)) for j, (c, s) in enumerate(zip(clients, seeds), start=1)]
    for owner in owners:
        owner.upload(transport, tag)
    parties = [ComputeParty(i, transport, codec) for i in (0, 1)]
    roles = [o.role for o in owners]
    for p in parties:
        p.receive_dataset(tag, roles)
    return parties[0], parties[1]


def run_secure_gp(
    config: GpConfig,
    clients: list[ClientData],
    transport: str | Transport = "inproc",
    session_config: SessionConfig | None = None,
    rng: random.Random | None = None,
) -> tuple[RunResult, Session]:
    """Full secure GP run; ``P3`` drives evolution with secure fitness.

    On any protocol error the session is closed and the error propagates;
    no result is returned.
    """
    session_config = session_config or SessionConfig(seed=config.rng_seed)
    n_vars = sum(c.X.shape[1] for c in clients)
    session = Session(clients, session_config, transport, config_extra=asdict(config))
    try:
        session.share_dataset("train")
        result = evolve(config, session.oracle("train"), rng=rng, n_vars=n_vars)
    except PPSRError:
        session.close()
        raise
    session.close()
    return result, session


# -- audits ---------------------------------------------------------------------------


def _value_set(values, codec: FixedCodec) -> tuple[set, set]:
    arr = np.asarray(values, dtype=np.float64).ravel()
    return set(arr.tolist()), {int(v) for v in np.atleast_1d(codec.encode(arr))}


def audit_inbox(transport: Transport, role: str, plaintext, codec: FixedCodec) -> list[str]:
    """Problems found in ``role``'s inbox.

    Flags payload kinds a role should never receive and any plaintext data
    value (as a float or as its fixed-point encoding) appearing in a
    numeric field or expression text.
    """
    floats, encoded = _value_set(plaintext, codec)
    allowed = {
        P3: {"FitnessShare", "Control"},
        P0: {"ShareUpload", "TripleBatch", "EvalRequest", "BeaverOpen", "Control"},
        P1: {"ShareUpload", "TripleBatch", "EvalRequest", "BeaverOpen", "Control"},
        P2: {"Control"},
    }.get(role)
    problems = []
    for msg in transport.inbox.get(role, []):
        if allowed is not None and msg.kind not in allowed:
            problems.append(f"{role} received {msg.kind} from {msg.sender}")
        p = msg.payload
        arrays = []
        if isinstance(p, (ShareUpload, FitnessShare)):
            arrays.append(p.values)
        elif isinstance(p, TripleBatch):
            arrays += [p.a, p.b, p.c]
        elif hasattr(p, "values"):
            arrays.append(p.values)
        for arr in arrays:
            hits = encoded.intersection(int(v) for v in np.ravel(arr))
            if hits:
                problems.append(f"{role} saw encoded data value(s) {sorted(hits)[:3]} from {msg.sender}")
        if isinstance(p, Control):
            for key, v in p.args.items():
                if isinstance(v, float) and v in floats:
                    problems.append(f"{role} saw raw data value {v} in control {p.op}.{key}")
        if isinstance(p, EvalRequest):
            for text in p.expressions:
                for tok in text.replace("(", " ").replace(")", " ").split():
                    try:
                        if float(tok) in floats:
                            problems.append(f"{role} saw data value {tok} in expression text")
                    except ValueError:
                        pass
    return problems

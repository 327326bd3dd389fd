import random
import struct
import threading

import numpy as np
import pytest

from ppsr.errors import ChannelFailure, DimensionMismatch, HandshakeMismatch, TripleExhaustion
from ppsr.expr import Constant, Variable, eval_rows, parse
from ppsr.gp import Dataset, GpConfig, evolve, fitness_mse, full_tree
from ppsr.protocol import (
    P0,
    P1,
    P2,
    P3,
    BeaverOpen,
    ClientData,
    Control,
    DealerParty,
    EvalRequest,
    FitnessShare,
    Handshake,
    HandshakeAck,
    InProcTransport,
    Message,
    Session,
    SessionConfig,
    ShareUpload,
    TcpTransport,
    TripleBatch,
    audit_inbox,
    decode_frame,
    encode_handshake,
    encode_message,
    multiplication_nodes,
    opening_rounds,
    run_compute_pair,
    run_secure_gp,
    secret_data_sharing,
)
from ppsr.ring import FixedCodec
from ppsr.sharing import reconstruct, Share

CODEC = FixedCodec()
NGUYEN9 = parse("(+ (sin x1) (sin (* x2 x2)))")


def nguyen9(seed=0, m=20):
    X = np.random.default_rng(seed).uniform(0, 1, (m, 2))
    data = Dataset(X, eval_rows(NGUYEN9, X))
    return data, [ClientData(X[:, :1]), ClientData(X[:, 1:], data.y)]


class Servers:
    """P0/P1 after Secret Data Sharing, with a live dealer thread."""

    def __init__(self, clients, seed=0):
        self.transport = InProcTransport("t")
        self.p0, self.p1 = secret_data_sharing(clients, self.transport, CODEC, seed)
        self.dealer = DealerParty(self.transport, CODEC, np.random.default_rng(seed + 1))
        threading.Thread(target=self.dealer.serve, daemon=True).start()

    def reveal(self, fn, *args):
        s0, s1 = run_compute_pair(fn, [self.p0, self.p1], *args)
        return CODEC.decode(reconstruct(Share(0, s0), Share(1, s1), CODEC.ring))

    def close(self):
        self.transport.send(P0, P2, Control("stop"))


@pytest.fixture
def servers():
    data, clients = nguyen9()
    s = Servers(clients)
    yield data, s
    s.close()


# -- Secret Data Sharing ------------------------------------------------------------


def test_sharing_reconstructs_exactly(servers):
    data, s = servers
    X = reconstruct(Share(0, s.p0.datasets["train"].X), Share(1, s.p1.datasets["train"].X), CODEC.ring)
    y = reconstruct(Share(0, s.p0.datasets["train"].y), Share(1, s.p1.datasets["train"].y), CODEC.ring)
    assert np.array_equal(X, CODEC.encode(data.X))
    assert np.array_equal(y, CODEC.encode(data.y))
    assert s.p0.datasets["train"].X.shape == (20, 2)


def test_three_clients_concatenate_in_order():
    X = np.random.default_rng(1).uniform(0, 1, (6, 4))
    clients = [ClientData(X[:, :1]), ClientData(X[:, 1:3]), ClientData(X[:, 3:], X[:, 0])]
    t = InProcTransport("t")
    p0, p1 = secret_data_sharing(clients, t, CODEC)
    joint = reconstruct(Share(0, p0.datasets["train"].X), Share(1, p1.datasets["train"].X), CODEC.ring)
    assert np.array_equal(joint, CODEC.encode(X))


def test_row_count_disagreement():
    clients = [ClientData(np.zeros((5, 1))), ClientData(np.zeros((4, 1)), np.zeros(4))]
    with pytest.raises(DimensionMismatch):
        secret_data_sharing(clients, InProcTransport("t"), CODEC)
    with Session(clients) as s, pytest.raises(DimensionMismatch):
        s.share_dataset("train")


def test_leakage_discipline():
    """Same randomness, different data: P0's inbox is identical, P1's moves by exactly the data change."""
    _, a = nguyen9(seed=1)
    _, b = nguyen9(seed=2)
    inboxes = []
    for clients in (a, b):
        t = InProcTransport("t")
        secret_data_sharing(clients, t, CODEC, seed=9)
        inboxes.append({role: [m.payload.values for m in t.inbox[role]] for role in (P0, P1)})
    for u, v in zip(inboxes[0][P0], inboxes[1][P0]):
        assert np.array_equal(u, v)
    blocks = [c.X for c in a] + [a[-1].y], [c.X for c in b] + [b[-1].y]
    for u, v, pa, pb in zip(inboxes[0][P1], inboxes[1][P1], *blocks):
        delta = CODEC.ring.sub(CODEC.encode(pa), CODEC.encode(pb))
        assert np.array_equal(CODEC.ring.sub(u, v), delta)


# -- secure evaluation ----------------------------------------------------------------


def test_constant_and_variable(servers):
    data, s = servers
    got = s.reveal(lambda p: p.evaluate(Constant(0.8125)))
    assert np.all(np.abs(got - 0.8125) <= CODEC.ulp)
    for k in (1, 2):
        got = s.reveal(lambda p: p.evaluate(Variable(k)))
        assert np.max(np.abs(got - data.X[:, k - 1])) <= CODEC.ulp


def test_random_trees_match_plaintext_rows(servers):
    data, s = servers
    rng = random.Random(3)
    for _ in range(25):
        t = full_tree(rng.randint(1, 6), 2, rng)
        got = s.reveal(lambda p: p.evaluate(t))
        assert np.max(np.abs(got - eval_rows(t, data.X))) <= 1e-2


@pytest.mark.parametrize(
    "text",
    ["(* -0.248150282 (+ (- 0.0417310568 x1) x1))", "(* (- x2 x2) -3.5)", "(* -2 (* (+ (- 0.1 x1) x1) -0.5))"],
)
def test_cancelling_subtrees_stay_accurate(servers, text):
    # x - x leaves one server holding the whole value, which truncation must survive
    data, s = servers
    t = parse(text)
    got = s.reveal(lambda p: p.evaluate(t))
    assert np.max(np.abs(got - eval_rows(t, data.X))) <= 1e-3


def test_round_counts(servers):
    _, s = servers
    rng = random.Random(4)
    for text in ("(* x1 x2)", "(* (* x1 x2) (+ x1 0.5))", "(* 3 (* 2 x1))", "(sin (* x1 x1))", "(- x1 (cos 2))"):
        t = parse(text)
        before = s.p0.ctx.rounds
        s.reveal(lambda p: p.evaluate(t))
        assert s.p0.ctx.rounds - before == opening_rounds(t)
    assert [multiplication_nodes(parse(x)) for x in ("(* x1 x2)", "(* 3 (* 2 x1))", "(* (* x1 x2) (+ x1 x2))")] == [1, 0, 2]
    for _ in range(20):
        t = full_tree(rng.randint(1, 4), 2, rng)
        before = s.p0.ctx.rounds
        s.reveal(lambda p: p.evaluate(t))
        assert s.p0.ctx.rounds - before == opening_rounds(t)


def test_fitness_examples():
    data, clients = nguyen9()
    ones = [ClientData(data.X[:, :1]), ClientData(data.X[:, 1:], np.ones(20))]
    with Session(clients) as s:
        s.share_dataset("train")
        z, = s.evaluate_fitness([NGUYEN9])
        assert z <= 1e-3
        s.share_dataset("ones", ones)
        z, = s.evaluate_fitness([Constant(0.0)], "ones")
        assert abs(z - 1.0) <= 1e-3
        assert s.sst["ones"] == 0.0


def test_secure_fitness_matches_plaintext():
    data, clients = nguyen9(seed=5)
    rng = random.Random(5)
    trees = [full_tree(rng.randint(1, 5), 2, rng) for _ in range(40)]
    with Session(clients, SessionConfig(seed=5)) as s:
        s.share_dataset("train")
        before = s.opening_rounds
        z = s.evaluate_fitness(trees)
        assert s.opening_rounds - before == sum(opening_rounds(t) + 1 for t in trees)
    for t, zs in zip(trees, z):
        plain = fitness_mse(t, data)
        assert abs(zs - plain) <= max(1e-2, 1e-2 * plain)


def test_out_of_range_constant_is_worst_fitness():
    _, clients = nguyen9()
    with Session(clients) as s:
        s.share_dataset("train")
        z = s.evaluate_fitness([parse("(+ x1 1e300)"), Variable(1)])
        assert z[0] == float("inf") and z[1] < 10


# -- messages and transports ------------------------------------------------------


PAYLOADS = [
    ShareUpload("train:X", np.arange(6, dtype=np.uint64).reshape(3, 2)),
    ShareUpload("train:y", np.array([2**64 - 1, 0], dtype=np.uint64)),
    TripleBatch(*(np.arange(k, k + 3, dtype=np.uint64) for k in (0, 3, 6))),
    EvalRequest("train", "mse", ("(+ x1 x2)", "(sin x1)")),
    BeaverOpen(np.array([1, 2**63], dtype=np.uint64)),
    FitnessShare(np.array([5, 6], dtype=np.uint64), (False, True)),
    Control("load", {"dataset": "train", "clients": ["C1", "C2"]}),
]


@pytest.mark.parametrize("payload", PAYLOADS, ids=lambda p: type(p).__name__)
def test_wire_round_trip(payload):
    msg = Message("sess-1", 41, "P0", "P1", payload)
    back = decode_frame(encode_message(msg))
    assert (back.session_id, back.sequence_no, back.sender, back.receiver) == ("sess-1", 41, "P0", "P1")
    assert type(back.payload) is type(payload)
    for name, value in vars(payload).items():
        other = getattr(back.payload, name)
        if isinstance(value, np.ndarray):
            assert np.array_equal(value, other) and other.dtype == np.uint64
        else:
            assert other == value


def test_frame_layout():
    frame = encode_message(Message("s", 5, "P0", "P1", BeaverOpen(np.array([1, 258], dtype=np.uint64))))
    body = (
        b"\x04"  # tag
        + b"\x01\x00s"  # str16 session
        + struct.pack("<Q", 5)
        + b"\x02P0\x02P1"
        + struct.pack("<I", 2)
        + struct.pack("<QQ", 1, 258)
    )
    assert frame == struct.pack(">I", len(body)) + body
    hs = Handshake("s", "P0", 64, 16, bytes(range(32)))
    assert decode_frame(encode_handshake(hs)) == hs
    assert decode_frame(encode_handshake(HandshakeAck(False, "nope"))) == HandshakeAck(False, "nope")


def test_corrupt_frames_are_rejected():
    frame = encode_message(Message("s", 0, "P0", "P1", Control("stop")))
    with pytest.raises(ChannelFailure):
        decode_frame(frame[:-1])
    with pytest.raises(ChannelFailure):
        decode_frame(frame[:4] + b"\x63" + frame[5:])


def test_sequence_and_session_checks():
    t = InProcTransport("s")
    t.send(P0, P1, Control("a"))
    t.send(P0, P1, Control("b"))
    assert [t.recv(P1, P0).payload.op for _ in range(2)] == ["a", "b"]
    t._deliver(Message("s", 1, P0, P1, Control("replay")))
    with pytest.raises(ChannelFailure):
        t.recv(P1, P0)
    t._deliver(Message("other", 9, P0, P2, Control("x")))
    with pytest.raises(ChannelFailure):
        t.recv(P2, P0)
    with pytest.raises(ChannelFailure):
        t.recv(P3, P0, timeout=0.05)


def test_wire_checked_inproc_session():
    data, clients = nguyen9(seed=6)
    t = InProcTransport("w", wire_check=True)
    with Session(clients, transport=t, session_id="w") as s:
        s.share_dataset("train")
        z, = s.evaluate_fitness([parse("(* x1 x2)")])
    assert abs(z - fitness_mse(parse("(* x1 x2)"), data)) <= 1e-3
    assert t.bytes_sent > 0


def test_tcp_session_matches_inproc():
    data, clients = nguyen9(seed=7)
    trees = [parse("(+ (sin x1) x2)"), parse("(* (cos x2) x1)")]
    out = {}
    for kind in ("inproc", "tcp"):
        with Session(clients, SessionConfig(seed=7), kind, session_id="same") as s:
            s.share_dataset("train")
            out[kind] = s.evaluate_fitness(trees)
    assert out["tcp"] == out["inproc"]


def test_tcp_handshake_mismatch():
    digest = bytes(32)
    a = TcpTransport([P0], "s", 64, 16, digest)
    b = TcpTransport([P1], "s", 64, 20, digest)
    c = TcpTransport([P2], "other", 64, 16, digest)
    try:
        a.connect_peers({**b.addresses, **c.addresses})
        with pytest.raises(HandshakeMismatch):
            a.send(P0, P1, Control("hello"))
        with pytest.raises(HandshakeMismatch):
            a.send(P0, P2, Control("hello"))
        assert any("ring parameter" in r for r in b.rejections)
        assert any("session id" in r for r in c.rejections)
    finally:
        for t in (a, b, c):
            t.close()


def test_tcp_between_transports():
    digest = bytes(range(32))
    a = TcpTransport([P0], "s", 64, 16, digest)
    b = TcpTransport([P1], "s", 64, 16, digest)
    try:
        a.connect_peers(b.addresses)
        a.send(P0, P1, BeaverOpen(np.array([7, 8], dtype=np.uint64)))
        got = b.recv(P1, P0, timeout=10)
        assert got.payload.values.tolist() == [7, 8]
    finally:
        a.close()
        b.close()


def test_handshake_requires_config_hash_size():
    with pytest.raises(ValueError):
        encode_handshake(Handshake("s", "P0", 64, 16, b"short"))


# -- failures ------------------------------------------------------------------------


def test_channel_failure_surfaces_at_coordinator():
    _, clients = nguyen9()
    with Session(clients) as s:
        s.share_dataset("train")
        s.transport.fail_channel(P0, P1, "cable cut")
        with pytest.raises(ChannelFailure):
            s.evaluate_fitness([parse("(* x1 x2)")])


def test_triple_exhaustion_aborts_session():
    _, clients = nguyen9()
    with Session(clients, SessionConfig(triple_batch=64, triple_budget=200)) as s:
        s.share_dataset("train")
        with pytest.raises(TripleExhaustion):
            s.evaluate_fitness([parse("(sin (* x1 x2))")])


def test_secure_gp_aborts_without_result_on_exhaustion():
    _, clients = nguyen9()
    cfg = GpConfig(population_size=20, max_generations=3)
    with pytest.raises(TripleExhaustion):
        run_secure_gp(cfg, clients, session_config=SessionConfig(triple_batch=256, triple_budget=2000))


def test_session_requires_target_at_last_client():
    X = np.zeros((3, 1))
    with pytest.raises(ValueError):
        Session([ClientData(X, np.zeros(3)), ClientData(X)])
    with pytest.raises(ValueError):
        Session([ClientData(X, np.zeros(3))])


# -- end to end and audits -------------------------------------------------------------


def test_secure_and_plain_trajectories_agree():
    data, clients = nguyen9(seed=8)
    cfg = GpConfig(population_size=40, max_generations=4, rng_seed=8)
    secure, session = run_secure_gp(cfg, clients, session_config=SessionConfig(seed=8))
    plain = evolve(cfg, data)
    assert np.allclose(secure.best_history, plain.best_history, atol=1e-3)
    assert secure.best.tree == plain.best.tree
    assert session.triples_used > 0


def test_audits():
    data, clients = nguyen9(seed=9)
    cfg = GpConfig(population_size=30, max_generations=2, rng_seed=9)
    _, session = run_secure_gp(cfg, clients, session_config=SessionConfig(seed=9))
    plain = np.concatenate([data.X.ravel(), data.y])
    for role in (P3, P0, P1, P2):
        assert audit_inbox(session.transport, role, plain, CODEC) == []
    kinds = {m.kind for m in session.transport.inbox[P3]}
    assert kinds <= {"FitnessShare", "Control"}
    # the audit does catch a leak
    session.transport._deliver(Message(session.session_id, 10**6, "C1", P3, ShareUpload("x", CODEC.encode(data.X[:, 0]))))
    assert audit_inbox(session.transport, P3, plain, CODEC)

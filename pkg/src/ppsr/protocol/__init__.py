"""Four-party runtime: messages, transports, party state machines, sessions."""

from .messages import (
    BeaverOpen,
    Control,
    EvalRequest,
    FitnessShare,
    Handshake,
    HandshakeAck,
    Message,
    ShareUpload,
    TripleBatch,
    decode_frame,
    encode_handshake,
    encode_message,
)
from .parties import (
    P0,
    P1,
    P2,
    P3,
    Client,
    ClientData,
    ComputeParty,
    DealerParty,
    PartyContext,
    client_role,
    multiplication_nodes,
    opening_rounds,
    run_compute_pair,
    secure_eval_expression,
    secure_mse,
)
from .session import Session, SessionConfig, audit_inbox, run_secure_gp, secret_data_sharing
from .transport import InProcTransport, TcpTransport, Transport

"""Privacy-preserving symbolic regression over vertically partitioned data.

Genetic programming searches for an expression; candidate fitness is computed
by two non-colluding servers over additive secret shares of the joint
dataset, with Beaver triples from a trusted dealer.

Modules
-------
ring       Z_{2^L} arithmetic and fixed-point encoding
sharing    additive shares, Beaver multiplication, truncation, simulators
kernels    secure sin/cos/exp/log/reciprocal
expr       expression trees, s-expression I/O, simplification, equivalence
gp         the evolutionary loop
protocol   party state machines, transports and sessions
bench      benchmark suite, experiments and result files
"""

from .errors import (
    ChannelFailure,
    DegenerateTarget,
    DimensionMismatch,
    ExpressionSyntaxError,
    HandshakeMismatch,
    IncompletePartition,
    IndexMismatch,
    MagnitudeOverflow,
    TripleExhaustion,
    TripleReuse,
)
from .expr import equivalent, eval_plain, eval_rows, format_expr, parse, simplify
from .gp import Dataset, GpConfig, evolve
from .ring import FixedCodec, Ring

__version__ = "0.1.0"

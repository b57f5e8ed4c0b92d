from .core import (
    OP_NAMES,
    DiffRecord,
    Tensor,
    active_record,
    add,
    backward,
    concat,
    debug_checks_enabled,
    div,
    exp,
    index,
    log,
    matmul,
    maximum,
    mul,
    neg,
    record_op,
    relu,
    reshape,
    set_debug_checks,
    sigmoid,
    sqrt,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
    unary_map,
)
from .gradcheck import finite_diff_check
from .io import load_tns, save_tns
from .linalg import fiedler_pair, fiedler_value, inverse, normalized_laplacian
from .nn import (
    LstmWeights,
    bilstm,
    conv3d,
    layer_norm,
    linear,
    log_softmax,
    lstm_cell,
    softmax,
)

__all__ = [
    "OP_NAMES",
    "DiffRecord",
    "Tensor",
    "LstmWeights",
    "active_record",
    "add",
    "backward",
    "bilstm",
    "concat",
    "conv3d",
    "debug_checks_enabled",
    "div",
    "exp",
    "fiedler_pair",
    "fiedler_value",
    "finite_diff_check",
    "index",
    "inverse",
    "layer_norm",
    "linear",
    "load_tns",
    "log",
    "log_softmax",
    "lstm_cell",
    "matmul",
    "maximum",
    "mul",
    "neg",
    "normalized_laplacian",
    "record_op",
    "relu",
    "reshape",
    "save_tns",
    "set_debug_checks",
    "sigmoid",
    "softmax",
    "sqrt",
    "sub",
    "tanh",
    "tmean",
    "transpose",
    "tsum",
    "unary_map",
]

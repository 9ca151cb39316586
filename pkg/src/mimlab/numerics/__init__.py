"""Minimal dense-tensor engine: forward ops, recorded backward rules,
finite-difference verification, and the checkpoint blob format."""

from .tensor import (
    NumericsError,
    Tensor,
    absolute,
    add,
    alloc_tracker,
    broadcast_to,
    concat,
    count_macs,
    gather_rows,
    gelu,
    layer_norm,
    mac_counter,
    matmul,
    mul,
    no_finite_checks,
    no_grad,
    pixel_shuffle,
    pixel_unshuffle,
    reshape,
    softmax,
    square,
    sub,
    tmean,
    transpose,
    tsum,
)
from .gradcheck import finite_diff_check
from .blob import BlobError, read_blob, write_blob


class Parameter(Tensor):
    """Trainable tensor with a checkpoint-key name (assigned at model build)."""

    __slots__ = ("name",)

    def __init__(self, data, dtype=None, name: str = ""):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name


__all__ = [
    "NumericsError", "Tensor", "Parameter",
    "add", "sub", "mul", "square", "absolute", "matmul", "broadcast_to",
    "reshape", "transpose", "concat", "gather_rows",
    "tsum", "tmean", "softmax", "layer_norm", "gelu",
    "pixel_shuffle", "pixel_unshuffle",
    "finite_diff_check", "no_grad", "no_finite_checks",
    "mac_counter", "count_macs", "alloc_tracker",
    "BlobError", "read_blob", "write_blob",
]

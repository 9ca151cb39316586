import io

import numpy as np
import pytest

from mimlab.numerics import (
    BlobError,
    NumericsError,
    Parameter,
    Tensor,
    concat,
    finite_diff_check,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    pixel_shuffle,
    pixel_unshuffle,
    read_blob,
    softmax,
    write_blob,
)
from mimlab.rng import np_stream


def t64(arr, requires_grad=False):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# matmul

def test_matmul_identity():
    b = t64(np.arange(6.0).reshape(3, 2))
    out = matmul(t64(np.eye(3)), b)
    np.testing.assert_array_equal(out.data, b.data)


def test_matmul_hand_values():
    a = t64([[1.0, 2.0], [3.0, 4.0]])
    b = t64([[5.0], [6.0]])
    np.testing.assert_array_equal(matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(NumericsError):
        matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


def test_matmul_gradcheck():
    rng = np_stream(11, "matmul")
    a = t64(rng.normal(size=(4, 5)))
    b = t64(rng.normal(size=(5, 3)))

    err = finite_diff_check(lambda x: matmul(x, b).sum(), a)
    assert err < 1e-4
    err = finite_diff_check(lambda x: matmul(a, x).sum(), b)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# softmax

def test_softmax_constant_row():
    out = softmax(t64([3.0, 3.0, 3.0]), axis=-1)
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-12)


def test_softmax_closed_form():
    out = softmax(t64([0.0, np.log(2.0)]), axis=-1)
    np.testing.assert_allclose(out.data, [1 / 3, 2 / 3], atol=1e-12)


def test_softmax_sums_to_one():
    rng = np_stream(12, "softmax-sum")
    for _ in range(100):
        x = t64(rng.uniform(-50, 50, size=(5, 7)))
        s = softmax(x, axis=-1).data.sum(axis=-1)
        np.testing.assert_allclose(s, 1.0, atol=1e-6)


def test_softmax_gradcheck():
    rng = np_stream(13, "softmax-grad")
    x = t64(rng.normal(size=6))
    w = t64(rng.normal(size=6))
    err = finite_diff_check(lambda v: (softmax(v, -1) * w).sum(), x)
    assert err < 1e-4


# ---------------------------------------------------------------------------
# layer_norm

def test_layer_norm_zero_variance_rows():
    x = t64([[2.0, 2.0, 2.0], [-1.0, -1.0, -1.0]])
    g, b = t64(np.ones(3)), t64(np.zeros(3))
    out = layer_norm(x, g, b, eps=1e-6)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-9)


def test_layer_norm_closed_form():
    out = layer_norm(t64([1.0, 3.0]), t64(np.ones(2)), t64(np.zeros(2)), eps=0.0)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)


def test_layer_norm_gradcheck():
    rng = np_stream(14, "ln-grad")
    x = t64(rng.normal(size=(3, 5)))
    g = t64(rng.normal(size=5))
    b = t64(rng.normal(size=5))
    w = t64(rng.normal(size=(3, 5)))

    assert finite_diff_check(lambda v: (layer_norm(v, g, b) * w).sum(), x) < 1e-4
    assert finite_diff_check(lambda v: (layer_norm(x, v, b) * w).sum(), g) < 1e-4
    assert finite_diff_check(lambda v: (layer_norm(x, g, v) * w).sum(), b) < 1e-4


# ---------------------------------------------------------------------------
# gelu

def test_gelu_at_zero():
    assert gelu(t64([0.0])).data[0] == 0.0


def test_gelu_asymptote():
    assert abs(gelu(t64([10.0])).data[0] - 10.0) < 1e-4


def test_gelu_gradcheck():
    rng = np_stream(15, "gelu-grad")
    x = t64(rng.normal(size=8))
    w = t64(rng.normal(size=8))
    assert finite_diff_check(lambda v: (gelu(v) * w).sum(), x) < 1e-4


# ---------------------------------------------------------------------------
# pixel shuffle

def test_pixel_shuffle_minimal():
    x = t64(np.array([1.0, 2.0, 3.0, 4.0]).reshape(4, 1, 1))
    out = pixel_shuffle(x, 2)
    np.testing.assert_array_equal(out.data, [[[1.0, 2.0], [3.0, 4.0]]])


def test_pixel_shuffle_r1_identity():
    x = t64(np_stream(16, "ps").normal(size=(3, 2, 2)))
    np.testing.assert_array_equal(pixel_shuffle(x, 1).data, x.data)


def test_pixel_shuffle_roundtrip_random():
    x = t64(np_stream(17, "ps-rt").normal(size=(8, 2, 2)))
    back = pixel_unshuffle(pixel_shuffle(x, 2), 2)
    np.testing.assert_array_equal(back.data, x.data)


def test_pixel_shuffle_indivisible_channels():
    with pytest.raises(NumericsError):
        pixel_shuffle(t64(np.ones((3, 2, 2))), 2)


def test_pixel_shuffle_roundtrip_exhaustive():
    # all valid (C, r, H, W) with extents <= 8
    rng = np_stream(18, "ps-sweep")
    for r in (1, 2):
        for c_out in range(1, 9):
            if c_out * r * r > 8:
                continue
            for h in range(1, 9):
                for w in range(1, 9):
                    x = t64(rng.normal(size=(c_out * r * r, h, w)))
                    y = pixel_shuffle(x, r)
                    assert y.shape == (c_out, h * r, w * r)
                    np.testing.assert_array_equal(pixel_unshuffle(y, r).data, x.data)
                    z = pixel_unshuffle(t64(rng.normal(size=(c_out, h * r, w * r))), r)
                    np.testing.assert_array_equal(
                        pixel_shuffle(z, r).data, pixel_shuffle(z, r).data
                    )


def test_pixel_shuffle_gradcheck():
    x = t64(np_stream(19, "ps-grad").normal(size=(8, 2, 2)))
    w = t64(np_stream(19, "ps-grad-w").normal(size=(2, 4, 4)))
    assert finite_diff_check(lambda v: (pixel_shuffle(v, 2) * w).sum(), x) < 1e-4


# ---------------------------------------------------------------------------
# gather_rows

def test_gather_rows_identity():
    x = t64(np_stream(20, "gr").normal(size=(5, 3)))
    np.testing.assert_array_equal(gather_rows(x, list(range(5))).data, x.data)


def test_gather_rows_reorders():
    x = t64(np.arange(8.0).reshape(4, 2))
    out = gather_rows(x, [2, 0])
    np.testing.assert_array_equal(out.data, [[4.0, 5.0], [0.0, 1.0]])


def test_gather_rows_duplicate_grad_accumulates():
    x = t64(np.zeros((4, 1)), requires_grad=True)
    gather_rows(x, [1, 1]).sum().backward()
    np.testing.assert_array_equal(x.grad, [[0.0], [2.0], [0.0], [0.0]])


def test_gather_rows_out_of_range():
    with pytest.raises(NumericsError):
        gather_rows(t64(np.ones((3, 2))), [0, 3])


def test_gather_rows_backward_vs_scatter_matrix():
    # brute-force oracle: backward equals G^T @ grad for the one-hot gather matrix
    rng = np_stream(21, "gr-oracle")
    for trial in range(20):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        idx = rng.integers(0, n, size=m)
        x = t64(rng.normal(size=(n, d)), requires_grad=True)
        w = rng.normal(size=(m, d))
        (gather_rows(x, idx) * t64(w)).sum().backward()
        g_mat = np.zeros((m, n))
        g_mat[np.arange(m), idx] = 1.0
        np.testing.assert_array_equal(x.grad, g_mat.T @ w)


# ---------------------------------------------------------------------------
# finite_diff_check itself

def test_fd_check_sum_of_squares():
    x = t64(np_stream(22, "fd").normal(size=7))
    err = finite_diff_check(lambda v: (v * v).sum(), x, eps=1e-5)
    assert err < 1e-6


def test_fd_check_constant_function():
    x = t64(np_stream(23, "fd-const").normal(size=4))
    err = finite_diff_check(lambda v: (v * 0.0).sum(), x)
    assert err == 0.0


# ---------------------------------------------------------------------------
# module-wide gradient sweep (100 randomized trials, fixed seeds)

def _op_cases(rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(4, 2)))
    w = t64(rng.normal(size=(3, 4)))
    g = t64(rng.normal(size=4))
    cases = [
        (lambda v: (v + w).sum(), a),
        (lambda v: (v * w).sum(), a),
        (lambda v: (v - w).sum(), a),
        (lambda v: matmul(v, b).sum(), a),
        (lambda v: (softmax(v, -1) * w).sum(), a),
        (lambda v: (layer_norm(v, g, g) * w).sum(), a),
        (lambda v: (gelu(v) * w).sum(), a),
        (lambda v: (v.mean(axis=0) * v.sum(axis=0)).sum(), a),
        (lambda v: gather_rows(v, [0, 2, 2]).sum(), a),
        (lambda v: concat([v, v], axis=0).sum(), a),
    ]
    return cases


def test_all_ops_gradcheck_sweep():
    trials = 0
    for seed in range(10):
        rng = np_stream(1000 + seed, "sweep")
        for fn, x in _op_cases(rng):
            assert finite_diff_check(fn, x, eps=1e-5) < 1e-4
            trials += 1
    assert trials == 100


# ---------------------------------------------------------------------------
# error surfaces

def test_non_finite_is_an_error():
    big = t64(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NumericsError):
        _ = big * big  # overflows to inf


def test_dtype_mixing_rejected():
    a = Tensor(np.ones(3, dtype=np.float32))
    b = Tensor(np.ones(3, dtype=np.float64))
    with pytest.raises(NumericsError):
        _ = a + b


# ---------------------------------------------------------------------------
# tensor blob format

def test_blob_roundtrip_bit_exact():
    rng = np_stream(24, "blob")
    for dtype in (np.float32, np.float64):
        arr = rng.normal(size=(3, 4, 2)).astype(dtype)
        buf = io.BytesIO()
        write_blob(buf, "enc.stage0.attn.qkv.weight", arr)
        buf.seek(0)
        name, back = read_blob(buf)
        assert name == "enc.stage0.attn.qkv.weight"
        assert back.dtype == arr.dtype
        np.testing.assert_array_equal(back, arr)


def test_blob_header_layout():
    buf = io.BytesIO()
    write_blob(buf, "x", np.zeros((2,), dtype=np.float32))
    raw = buf.getvalue()
    assert raw[:4] == b"UMMT"
    assert raw[4:8] == (1).to_bytes(4, "little")          # version
    assert raw[8:12] == (1).to_bytes(4, "little")         # name length
    assert raw[12:13] == b"x"
    assert raw[13] == 0                                    # f32 tag
    assert raw[14:18] == (1).to_bytes(4, "little")        # rank
    assert raw[18:26] == (2).to_bytes(8, "little")        # extent


def test_blob_bad_magic():
    buf = io.BytesIO(b"NOPE" + b"\x00" * 40)
    with pytest.raises(BlobError):
        read_blob(buf)


def test_blob_truncated_payload():
    buf = io.BytesIO()
    write_blob(buf, "t", np.ones((4, 4), dtype=np.float64))
    raw = buf.getvalue()[:-8]
    with pytest.raises(BlobError):
        read_blob(io.BytesIO(raw))


def test_parameter_carries_name_and_grad_flag():
    p = Parameter(np.zeros((2, 2)), name="head.weight")
    assert p.requires_grad and p.name == "head.weight"

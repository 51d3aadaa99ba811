"""Counter-based Gaussian streams for reproducible Monte Carlo.

Every normal variate is a pure function of ``(key, sample, step, dim)``
through the Philox4x64-10 block cipher, so a sample's increments never depend
on how the budget is chunked, on the thread count, or on which other samples
are drawn alongside it.
"""
from __future__ import annotations

import hashlib
import os
import struct

import numba
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_TWO_M53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi

THREADS_ENV = "PATHLAB_NUM_THREADS"

# skip probing TBB first; old system TBB builds only produce a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@intrinsic
def _mulhi(typingctx, a, b):
    sig = types.uint64(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i128 = ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], i128), builder.zext(args[1], i128))
        return builder.trunc(builder.lshr(prod, ir.Constant(i128, 64)), ir.IntType(64))

    return sig, codegen


@numba.njit(inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        hi0 = _mulhi(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _mulhi(_M1, c2)
        lo1 = _M1 * c2
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@numba.njit(cache=True)
def philox4x64(counters, key):
    """Raw Philox4x64-10 output for each row of ``counters`` (shape (m, 4))."""
    out = np.empty_like(counters)
    k0 = key[0]
    k1 = key[1]
    for i in range(counters.shape[0]):
        r0, r1, r2, r3 = _philox_block(
            counters[i, 0], counters[i, 1], counters[i, 2], counters[i, 3], k0, k1
        )
        out[i, 0] = r0
        out[i, 1] = r1
        out[i, 2] = r2
        out[i, 3] = r3
    return out


@numba.njit(inline="always")
def _unit(r):
    # (0, 1]: never zero, so log() in Box-Muller is finite
    return (np.float64(r >> _S11) + 1.0) * _TWO_M53


@numba.njit(parallel=True, cache=True)
def _normals_kernel(k0, k1, samples, q0, n_q, out):
    # flat variate index q = step * d + dim; one Philox block feeds 4 consecutive q
    b_first = q0 // 4
    b_last = (q0 + n_q - 1) // 4
    for i in numba.prange(samples.shape[0]):
        s = np.uint64(samples[i])
        for b in range(b_first, b_last + 1):
            r0, r1, r2, r3 = _philox_block(np.uint64(b), np.uint64(0), s, np.uint64(0), k0, k1)
            ra = np.sqrt(-2.0 * np.log(_unit(r0)))
            rb = np.sqrt(-2.0 * np.log(_unit(r2)))
            a2 = _TWO_PI * _unit(r1)
            a4 = _TWO_PI * _unit(r3)
            base = b * 4 - q0
            if 0 <= base < n_q:
                out[i, base] = ra * np.cos(a2)
            if 0 <= base + 1 < n_q:
                out[i, base + 1] = ra * np.sin(a2)
            if 0 <= base + 2 < n_q:
                out[i, base + 2] = rb * np.cos(a4)
            if 0 <= base + 3 < n_q:
                out[i, base + 3] = rb * np.sin(a4)


def stream_key(base_seed: int, *labels) -> np.ndarray:
    """Derive the 128-bit Philox key for a named sub-stream of ``base_seed``."""
    h = hashlib.blake2b(digest_size=16)
    h.update(struct.pack("<Q", int(base_seed) & 0xFFFFFFFFFFFFFFFF))
    for label in labels:
        h.update(b"\x1f")
        h.update(repr(label).encode())
    k0, k1 = struct.unpack("<QQ", h.digest())
    return np.array([k0, k1], dtype=np.uint64)


def standard_normals(key, samples, n_steps, d, step0=0):
    """Gaussian array of shape ``(len(samples), n_steps, d)``.

    Entry ``[i, k, j]`` depends only on ``key``, ``samples[i]``, ``step0 + k``
    and ``j``.
    """
    samples = np.ascontiguousarray(samples, dtype=np.int64)
    flat = np.empty((samples.shape[0], n_steps * d))
    if flat.size:
        _normals_kernel(np.uint64(key[0]), np.uint64(key[1]), samples,
                        int(step0) * d, n_steps * d, flat)
    return flat.reshape(samples.shape[0], n_steps, d)


def configure_threads(n: int | None = None) -> int:
    """Set numba's worker count from ``n`` or the ``PATHLAB_NUM_THREADS`` env var."""
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n

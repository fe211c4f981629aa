# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: depthwise convolution and the block entropy coder.

Must stay call-compatible with ``_pykernels``; the test suite checks both
backends against each other.
"""
import numpy as np
cimport numpy as cnp

from libc.stdint cimport int32_t, int64_t, uint8_t, uint64_t

cnp.import_array()

ctypedef fused real:
    float
    double


# ---------------------------------------------------------------- depthwise conv

def dwconv_forward(real[:, :, :, ::1] xpad, real[:, :, ::1] k, int stride,
                   int out_h, int out_w):
    cdef Py_ssize_t n_batch = xpad.shape[0], n_ch = xpad.shape[1]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t n, c, i, j, a, b
    cdef real acc
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n_batch, n_ch, out_h, out_w), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    for n in range(n_batch):
        for c in range(n_ch):
            for i in range(out_h):
                for j in range(out_w):
                    acc = 0
                    for a in range(kh):
                        for b in range(kw):
                            acc = acc + xpad[n, c, i * stride + a, j * stride + b] * k[c, a, b]
                    o[n, c, i, j] = acc
    return out


def dwconv_backward(real[:, :, :, ::1] xpad, real[:, :, ::1] k,
                    real[:, :, :, ::1] gout, int stride):
    cdef Py_ssize_t n_batch = xpad.shape[0], n_ch = xpad.shape[1]
    cdef Py_ssize_t kh = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t out_h = gout.shape[2], out_w = gout.shape[3]
    cdef Py_ssize_t n, c, i, j, a, b
    cdef real g
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((xpad.shape[0], xpad.shape[1], xpad.shape[2], xpad.shape[3]), dtype=dtype)
    gk_arr = np.zeros((k.shape[0], kh, kw), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef real[:, :, ::1] gk = gk_arr
    for n in range(n_batch):
        for c in range(n_ch):
            for i in range(out_h):
                for j in range(out_w):
                    g = gout[n, c, i, j]
                    if g == 0:
                        continue
                    for a in range(kh):
                        for b in range(kw):
                            gx[n, c, i * stride + a, j * stride + b] += g * k[c, a, b]
                            gk[c, a, b] += g * xpad[n, c, i * stride + a, j * stride + b]
    return gx_arr, gk_arr


# ---------------------------------------------------------------- entropy coder

cdef inline int _size_of(int v) nogil:
    cdef int s = 0
    if v < 0:
        v = -v
    while v:
        s += 1
        v >>= 1
    return s


cdef struct BitWriter:
    uint8_t* buf
    Py_ssize_t pos
    uint64_t acc
    int nacc
    int64_t nbits


cdef inline void _put(BitWriter* w, uint64_t code, int length) nogil:
    w.nbits += length
    if w.buf == NULL:
        return
    w.acc = (w.acc << length) | (code & ((<uint64_t>1 << length) - 1))
    w.nacc += length
    while w.nacc >= 8:
        w.nacc -= 8
        w.buf[w.pos] = <uint8_t>((w.acc >> w.nacc) & 0xFF)
        w.pos += 1


cdef inline int _put_value(BitWriter* w, int v, int s) nogil:
    if s == 0:
        return 0
    if v < 0:
        v = v + (1 << s) - 1
    _put(w, <uint64_t>v, s)
    return 0


cdef int _emit_skip_run(BitWriter* w, int64_t run, int32_t[::1] dc_co, int32_t[::1] dc_si) except -1:
    cdef int n
    cdef int64_t chunk
    while run > 0:
        chunk = run
        if chunk > 32767:
            chunk = 32767
        n = 0
        while (chunk >> (n + 1)) > 0:
            n += 1
        if dc_si[16 + n] == 0:
            raise ValueError("DC table has no code for skip-run class %d" % n)
        _put(w, dc_co[16 + n], dc_si[16 + n])
        if n > 0:
            _put(w, <uint64_t>(chunk - (1 << n)), n)
        run -= chunk
    return 0


cdef int64_t _encode(int32_t[:, ::1] blocks, int32_t[::1] dc_co, int32_t[::1] dc_si,
                     int32_t[::1] ac_co, int32_t[::1] ac_si, bint skip_runs,
                     uint8_t* buf, Py_ssize_t* nbytes) except -1:
    cdef BitWriter w
    w.buf = buf
    w.pos = 0
    w.acc = 0
    w.nacc = 0
    w.nbits = 0
    cdef Py_ssize_t nb = blocks.shape[0], bi, k, last
    cdef int pred = 0, diff, s, run, sym, v
    cdef int64_t skip = 0
    for bi in range(nb):
        diff = blocks[bi, 0] - pred
        pred = blocks[bi, 0]
        last = 0
        for k in range(63, 0, -1):
            if blocks[bi, k] != 0:
                last = k
                break
        if skip_runs and diff == 0 and last == 0:
            skip += 1
            continue
        if skip:
            _emit_skip_run(&w, skip, dc_co, dc_si)
            skip = 0
        s = _size_of(diff)
        if s > 15 or dc_si[s] == 0:
            raise ValueError("DC difference %d not representable (block %d)" % (diff, bi))
        _put(&w, dc_co[s], dc_si[s])
        _put_value(&w, diff, s)
        run = 0
        for k in range(1, last + 1):
            v = blocks[bi, k]
            if v == 0:
                run += 1
                continue
            while run > 15:
                if ac_si[0xF0] == 0:
                    raise ValueError("AC table has no ZRL code")
                _put(&w, ac_co[0xF0], ac_si[0xF0])
                run -= 16
            s = _size_of(v)
            sym = (run << 4) | s
            if s > 15 or ac_si[sym] == 0:
                raise ValueError("AC value %d (run %d) not representable (block %d)" % (v, run, bi))
            _put(&w, ac_co[sym], ac_si[sym])
            _put_value(&w, v, s)
            run = 0
        if last < 63:
            if ac_si[0] == 0:
                raise ValueError("AC table has no EOB code")
            _put(&w, ac_co[0], ac_si[0])
    if skip:
        _emit_skip_run(&w, skip, dc_co, dc_si)
    cdef int64_t nbits = w.nbits
    cdef int pad
    if buf != NULL and w.nacc > 0:
        pad = 8 - w.nacc
        _put(&w, (<uint64_t>1 << pad) - 1, pad)
    nbytes[0] = w.pos
    return nbits


def entropy_count(int32_t[:, ::1] blocks, int32_t[::1] dc_co, int32_t[::1] dc_si,
                  int32_t[::1] ac_co, int32_t[::1] ac_si, bint skip_runs=False):
    cdef Py_ssize_t nbytes = 0
    return int(_encode(blocks, dc_co, dc_si, ac_co, ac_si, skip_runs, NULL, &nbytes))


def entropy_encode(int32_t[:, ::1] blocks, int32_t[::1] dc_co, int32_t[::1] dc_si,
                   int32_t[::1] ac_co, int32_t[::1] ac_si, bint skip_runs=False):
    cdef Py_ssize_t nbytes = 0
    cdef int64_t bound = _encode(blocks, dc_co, dc_si, ac_co, ac_si, skip_runs, NULL, &nbytes)
    out = np.zeros(bound // 8 + 2, dtype=np.uint8)
    cdef uint8_t[::1] ob = out
    cdef int64_t nbits = _encode(blocks, dc_co, dc_si, ac_co, ac_si, skip_runs, &ob[0], &nbytes)
    return out[:nbytes].tobytes(), int(nbits)


def symbol_stats(int32_t[:, ::1] blocks, bint skip_runs=False):
    """Symbol histograms (DC alphabet of 32, AC alphabet of 256) for table design."""
    dc_np = np.zeros(32, dtype=np.int64)
    ac_np = np.zeros(256, dtype=np.int64)
    cdef int64_t[::1] dc = dc_np
    cdef int64_t[::1] ac = ac_np
    cdef Py_ssize_t nb = blocks.shape[0], bi, k, last
    cdef int pred = 0, diff, run, n
    cdef int64_t skip = 0, chunk
    for bi in range(nb):
        diff = blocks[bi, 0] - pred
        pred = blocks[bi, 0]
        last = 0
        for k in range(63, 0, -1):
            if blocks[bi, k] != 0:
                last = k
                break
        if skip_runs and diff == 0 and last == 0:
            skip += 1
            continue
        while skip > 0:
            chunk = skip if skip <= 32767 else 32767
            n = 0
            while (chunk >> (n + 1)) > 0:
                n += 1
            dc[16 + n] += 1
            skip -= chunk
        dc[_size_of(diff)] += 1
        run = 0
        for k in range(1, last + 1):
            if blocks[bi, k] == 0:
                run += 1
                continue
            while run > 15:
                ac[0xF0] += 1
                run -= 16
            ac[(run << 4) | _size_of(blocks[bi, k])] += 1
            run = 0
        if last < 63:
            ac[0] += 1
    while skip > 0:
        chunk = skip if skip <= 32767 else 32767
        n = 0
        while (chunk >> (n + 1)) > 0:
            n += 1
        dc[16 + n] += 1
        skip -= chunk
    return dc_np, ac_np


cdef struct BitReader:
    const uint8_t* buf
    Py_ssize_t nbytes
    Py_ssize_t pos
    int bit


cdef inline int _get_bit(BitReader* r) except -1:
    cdef int b
    if r.pos >= r.nbytes:
        raise ValueError("bitstream truncated at byte offset %d" % r.pos)
    b = (r.buf[r.pos] >> (7 - r.bit)) & 1
    r.bit += 1
    if r.bit == 8:
        r.bit = 0
        r.pos += 1
    return b


cdef inline int _get_bits(BitReader* r, int n) except -1:
    cdef int v = 0, i
    for i in range(n):
        v = (v << 1) | _get_bit(r)
    return v


cdef inline int _decode_sym(BitReader* r, int32_t[::1] mincode, int32_t[::1] maxcode,
                            int32_t[::1] valptr, int32_t[::1] huffval) except -1:
    cdef int code = 0, length
    for length in range(1, 17):
        code = (code << 1) | _get_bit(r)
        if maxcode[length] >= 0 and code <= maxcode[length] and code >= mincode[length]:
            return huffval[valptr[length] + code - mincode[length]]
    raise ValueError("invalid Huffman code at byte offset %d" % r.pos)


cdef inline int _extend(int v, int s):
    if s == 0:
        return 0
    if v < (1 << (s - 1)):
        return v - (1 << s) + 1
    return v


def entropy_decode(const uint8_t[::1] data, Py_ssize_t nblocks,
                   int32_t[::1] dc_min, int32_t[::1] dc_max, int32_t[::1] dc_ptr, int32_t[::1] dc_val,
                   int32_t[::1] ac_min, int32_t[::1] ac_max, int32_t[::1] ac_ptr, int32_t[::1] ac_val,
                   bint skip_runs=False):
    out = np.zeros((nblocks, 64), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    cdef BitReader r
    r.nbytes = data.shape[0]
    r.buf = &data[0] if r.nbytes > 0 else NULL
    r.pos = 0
    r.bit = 0
    cdef Py_ssize_t bi = 0, j
    cdef int pred = 0, sym, s, k, run, n
    cdef int64_t skip
    while bi < nblocks:
        sym = _decode_sym(&r, dc_min, dc_max, dc_ptr, dc_val)
        if sym >= 16:
            if not skip_runs:
                raise ValueError("unexpected skip-run symbol at byte offset %d" % r.pos)
            n = sym - 16
            skip = (1 << n) + _get_bits(&r, n)
            if bi + skip > nblocks:
                raise ValueError("skip run overflows block count at byte offset %d" % r.pos)
            for j in range(skip):
                o[bi, 0] = pred
                bi += 1
            continue
        s = sym
        pred = pred + _extend(_get_bits(&r, s), s)
        o[bi, 0] = pred
        k = 1
        while k < 64:
            sym = _decode_sym(&r, ac_min, ac_max, ac_ptr, ac_val)
            run = sym >> 4
            s = sym & 15
            if s == 0:
                if run == 15:
                    k += 16
                    continue
                break
            k += run
            if k > 63:
                raise ValueError("AC run overflows block at byte offset %d" % r.pos)
            o[bi, k] = _extend(_get_bits(&r, s), s)
            k += 1
        if k > 64:
            raise ValueError("AC run overflows block at byte offset %d" % r.pos)
        bi += 1
    return out

"""Pure-Python/NumPy reference implementations of the compiled kernels.

Same signatures and results as ``_ckernels``; selected automatically when the
extension is not built or when ``NWRAP_PURE_PYTHON=1``.
"""
import numpy as np


def dwconv_forward(xpad, k, stride, out_h, out_w):
    n, c = xpad.shape[:2]
    kh, kw = k.shape[1:]
    out = np.zeros((n, c, out_h, out_w), dtype=xpad.dtype)
    for a in range(kh):
        for b in range(kw):
            win = xpad[:, :, a:a + stride * (out_h - 1) + 1:stride, b:b + stride * (out_w - 1) + 1:stride]
            out += win * k[None, :, a, b, None, None]
    return out


def dwconv_backward(xpad, k, gout, stride):
    kh, kw = k.shape[1:]
    out_h, out_w = gout.shape[2:]
    gx = np.zeros_like(xpad)
    gk = np.zeros_like(k)
    for a in range(kh):
        for b in range(kw):
            sl = (slice(None), slice(None),
                  slice(a, a + stride * (out_h - 1) + 1, stride),
                  slice(b, b + stride * (out_w - 1) + 1, stride))
            gx[sl] += gout * k[None, :, a, b, None, None]
            gk[:, a, b] = np.einsum("nchw,nchw->c", gout, xpad[sl])
    return gx, gk


def _size_of(v):
    return abs(int(v)).bit_length()


def _extra(v, s):
    return v + (1 << s) - 1 if v < 0 else v


def _skip_symbols(run):
    while run > 0:
        chunk = min(run, 32767)
        n = chunk.bit_length() - 1
        yield 16 + n, chunk - (1 << n), n
        run -= chunk


def _symbols(blocks, skip_runs):
    """Yield (table, symbol, extra_value, extra_len) in bitstream order."""
    pred = 0
    skip = 0
    nz_rows, nz_cols = np.nonzero(blocks[:, 1:])
    starts = np.searchsorted(nz_rows, np.arange(blocks.shape[0] + 1))
    for bi in range(blocks.shape[0]):
        dc = int(blocks[bi, 0])
        diff = dc - pred
        pred = dc
        cols = nz_cols[starts[bi]:starts[bi + 1]] + 1
        if skip_runs and diff == 0 and cols.size == 0:
            skip += 1
            continue
        if skip:
            for sym, val, n in _skip_symbols(skip):
                yield 0, sym, val, n
            skip = 0
        s = _size_of(diff)
        if s > 15:
            raise ValueError(f"DC difference {diff} not representable (block {bi})")
        yield 0, s, _extra(diff, s), s
        prev = 0
        for kk in cols:
            kk = int(kk)
            run = kk - prev - 1
            while run > 15:
                yield 1, 0xF0, 0, 0
                run -= 16
            v = int(blocks[bi, kk])
            s = _size_of(v)
            if s > 15:
                raise ValueError(f"AC value {v} (run {run}) not representable (block {bi})")
            yield 1, (run << 4) | s, _extra(v, s), s
            prev = kk
        if prev < 63:
            yield 1, 0x00, 0, 0
    if skip:
        for sym, val, n in _skip_symbols(skip):
            yield 0, sym, val, n


def _check(si, sym, table):
    if si[sym] == 0:
        name = "DC" if table == 0 else "AC"
        raise ValueError(f"{name} table has no code for symbol {sym:#x}")


def entropy_count(blocks, dc_co, dc_si, ac_co, ac_si, skip_runs=False):
    sizes = (dc_si, ac_si)
    total = 0
    for table, sym, _, n in _symbols(np.asarray(blocks), skip_runs):
        _check(sizes[table], sym, table)
        total += int(sizes[table][sym]) + n
    return total


def entropy_encode(blocks, dc_co, dc_si, ac_co, ac_si, skip_runs=False):
    codes = (dc_co, ac_co)
    sizes = (dc_si, ac_si)
    acc = 0
    nacc = 0
    nbits = 0
    out = bytearray()
    for table, sym, val, n in _symbols(np.asarray(blocks), skip_runs):
        _check(sizes[table], sym, table)
        length = int(sizes[table][sym])
        acc = (acc << length) | int(codes[table][sym])
        acc = (acc << n) | val
        nacc += length + n
        nbits += length + n
        while nacc >= 8:
            nacc -= 8
            out.append((acc >> nacc) & 0xFF)
        acc &= (1 << nacc) - 1
    if nacc:
        pad = 8 - nacc
        out.append(((acc << pad) | ((1 << pad) - 1)) & 0xFF)
    return bytes(out), nbits


def symbol_stats(blocks, skip_runs=False):
    dc = np.zeros(32, dtype=np.int64)
    ac = np.zeros(256, dtype=np.int64)
    hists = (dc, ac)
    for table, sym, _, _ in _symbols(np.asarray(blocks), skip_runs):
        hists[table][sym] += 1
    return dc, ac


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.bit = 0

    def get(self, n=1):
        v = 0
        for _ in range(n):
            if self.pos >= len(self.data):
                raise ValueError(f"bitstream truncated at byte offset {self.pos}")
            v = (v << 1) | ((self.data[self.pos] >> (7 - self.bit)) & 1)
            self.bit += 1
            if self.bit == 8:
                self.bit = 0
                self.pos += 1
        return v

    def symbol(self, mincode, maxcode, valptr, huffval):
        code = 0
        for length in range(1, 17):
            code = (code << 1) | self.get()
            if 0 <= maxcode[length] and mincode[length] <= code <= maxcode[length]:
                return int(huffval[valptr[length] + code - mincode[length]])
        raise ValueError(f"invalid Huffman code at byte offset {self.pos}")


def _extend(v, s):
    if s == 0:
        return 0
    return v - (1 << s) + 1 if v < (1 << (s - 1)) else v


def entropy_decode(data, nblocks, dc_min, dc_max, dc_ptr, dc_val,
                   ac_min, ac_max, ac_ptr, ac_val, skip_runs=False):
    out = np.zeros((nblocks, 64), dtype=np.int32)
    r = _Reader(bytes(data))
    bi = 0
    pred = 0
    while bi < nblocks:
        sym = r.symbol(dc_min, dc_max, dc_ptr, dc_val)
        if sym >= 16:
            if not skip_runs:
                raise ValueError(f"unexpected skip-run symbol at byte offset {r.pos}")
            n = sym - 16
            skip = (1 << n) + r.get(n)
            if bi + skip > nblocks:
                raise ValueError(f"skip run overflows block count at byte offset {r.pos}")
            out[bi:bi + skip, 0] = pred
            bi += skip
            continue
        pred += _extend(r.get(sym), sym)
        out[bi, 0] = pred
        k = 1
        while k < 64:
            sym = r.symbol(ac_min, ac_max, ac_ptr, ac_val)
            run, s = sym >> 4, sym & 15
            if s == 0:
                if run == 15:
                    k += 16
                    continue
                break
            k += run
            if k > 63:
                raise ValueError(f"AC run overflows block at byte offset {r.pos}")
            out[bi, k] = _extend(r.get(s), s)
            k += 1
        if k > 64:
            raise ValueError(f"AC run overflows block at byte offset {r.pos}")
        bi += 1
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Direct-loop stride-1 convolution kernels in float64.

Loops keep output channels innermost and contiguous so the compiler can
vectorise them. Each output element is owned by one thread and accumulated in
a fixed order, so results do not depend on the thread count. Zero inputs are
skipped (their products are exactly zero for finite weights).
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef void _forward_rows(const double* x, const double* wt, const double* b, double* out,
                        Py_ssize_t C, Py_ssize_t H, Py_ssize_t W, Py_ssize_t O,
                        Py_ssize_t KH, Py_ssize_t KW, Py_ssize_t ph, Py_ssize_t pw,
                        Py_ssize_t Ho, Py_ssize_t Wo, Py_ssize_t n, Py_ssize_t y,
                        double* acc) noexcept nogil:
    # x: [B,C,H,W]; wt: [C,KH,KW,O]; out: [B,O,Ho,Wo]; acc: scratch of Wo*O
    cdef Py_ssize_t c, i, j, xx, o, r, x0, x1
    cdef const double* wrow
    cdef const double* xrow
    cdef double* arow
    cdef double xv
    for xx in range(Wo):
        for o in range(O):
            acc[xx * O + o] = b[o]
    for c in range(C):
        for i in range(KH):
            r = y + i - ph
            if r < 0 or r >= H:
                continue
            xrow = x + ((n * C + c) * H + r) * W
            for j in range(KW):
                wrow = wt + ((c * KH + i) * KW + j) * O
                x0 = pw - j
                if x0 < 0:
                    x0 = 0
                x1 = W + pw - j
                if x1 > Wo:
                    x1 = Wo
                for xx in range(x0, x1):
                    xv = xrow[xx + j - pw]
                    if xv == 0.0:
                        continue
                    arow = acc + xx * O
                    for o in range(O):
                        arow[o] += wrow[o] * xv
    for o in range(O):
        for xx in range(Wo):
            out[((n * O + o) * Ho + y) * Wo + xx] = acc[xx * O + o]


def conv_forward(x_in, w_in, b_in, int ph, int pw, int threads):
    cdef double[:, :, :, ::1] x = x_in
    cdef double[:, :, :, ::1] wt = np.ascontiguousarray(np.transpose(w_in, (1, 2, 3, 0)))
    cdef double[::1] b = np.ascontiguousarray(b_in)
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t KH = wt.shape[1], KW = wt.shape[2], O = wt.shape[3]
    cdef Py_ssize_t Ho = H + 2 * ph - KH + 1, Wo = W + 2 * pw - KW + 1
    out_arr = np.empty((B, O, Ho, Wo), dtype=np.float64)
    if B == 0 or O == 0 or Ho <= 0 or Wo <= 0:
        return out_arr
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t job, n, y
    cdef double* acc
    for job in prange(B * Ho, nogil=True, num_threads=threads, schedule="static"):
        acc = <double*> malloc(Wo * O * sizeof(double))
        n = job // Ho
        y = job % Ho
        _forward_rows(&x[0, 0, 0, 0], &wt[0, 0, 0, 0], &b[0], &out[0, 0, 0, 0],
                      C, H, W, O, KH, KW, ph, pw, Ho, Wo, n, y, acc)
        free(acc)
    return out_arr


def conv_grad_input(gy, w, int ph, int pw, Py_ssize_t H, Py_ssize_t W, int threads):
    """Full correlation of gy with the flipped, transposed kernel."""
    cdef Py_ssize_t KH = w.shape[2], KW = w.shape[3]
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = conv_forward(gy, wf, np.zeros(wf.shape[0]), KH - 1 - ph, KW - 1 - pw, threads)
    if gx.shape[2] != H or gx.shape[3] != W:
        gx = np.ascontiguousarray(gx[:, :, :H, :W])
    return gx


def conv_grad_weight(gy_in, x_in, Py_ssize_t KH, Py_ssize_t KW, int ph, int pw, int threads):
    cdef double[:, :, :, ::1] gyt = np.ascontiguousarray(np.transpose(gy_in, (0, 2, 3, 1)))
    cdef double[:, :, :, ::1] x = x_in
    cdef Py_ssize_t B = gyt.shape[0], Ho = gyt.shape[1], Wo = gyt.shape[2], O = gyt.shape[3]
    cdef Py_ssize_t C = x.shape[1], H = x.shape[2], W = x.shape[3]
    gwt_arr = np.zeros((C, KH, KW, O), dtype=np.float64)
    if B == 0 or O == 0 or C == 0:
        return np.ascontiguousarray(gwt_arr.transpose(3, 0, 1, 2))
    cdef double[:, :, :, ::1] gwt = gwt_arr
    cdef Py_ssize_t c, n, i, j, y, xx, o, r, x0, x1
    cdef double xv
    cdef double* grow
    cdef const double* gyrow
    for c in prange(C, nogil=True, num_threads=threads, schedule="static"):
        for i in range(KH):
            for j in range(KW):
                grow = &gwt[c, i, j, 0]
                x0 = pw - j
                if x0 < 0:
                    x0 = 0
                x1 = W + pw - j
                if x1 > Wo:
                    x1 = Wo
                for n in range(B):
                    for y in range(Ho):
                        r = y + i - ph
                        if r < 0 or r >= H:
                            continue
                        for xx in range(x0, x1):
                            xv = x[n, c, r, xx + j - pw]
                            if xv == 0.0:
                                continue
                            gyrow = &gyt[n, y, xx, 0]
                            for o in range(O):
                                grow[o] += gyrow[o] * xv
    return np.ascontiguousarray(gwt_arr.transpose(3, 0, 1, 2))

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-loop 3D convolution kernels.

All three routines take an already padded input (or gradient buffer) and
write into a caller-allocated output; the Python wrappers in
``translk.kernels`` handle padding, allocation and cropping.
"""
from cython cimport floating

NAME = "cython"


def conv_forward(floating[:, :, :, :, ::1] xp, floating[:, :, :, :, ::1] w,
                 floating[:, :, :, :, ::1] y, int stride, int groups):
    cdef Py_ssize_t N = y.shape[0], CO = y.shape[1]
    cdef Py_ssize_t OD = y.shape[2], OH = y.shape[3], OW = y.shape[4]
    cdef Py_ssize_t CPG = w.shape[1], K1 = w.shape[2], K2 = w.shape[3], K3 = w.shape[4]
    cdef Py_ssize_t OPG = CO // groups
    cdef Py_ssize_t n, o, cl, c, a, b, e, z, yy, xx
    cdef floating wv
    cdef floating *dst
    cdef floating *src
    with nogil:
        for n in range(N):
            for o in range(CO):
                for cl in range(CPG):
                    c = (o // OPG) * CPG + cl
                    for a in range(K1):
                        for b in range(K2):
                            for e in range(K3):
                                wv = w[o, cl, a, b, e]
                                for z in range(OD):
                                    for yy in range(OH):
                                        dst = &y[n, o, z, yy, 0]
                                        src = &xp[n, c, z * stride + a, yy * stride + b, e]
                                        if stride == 1:
                                            for xx in range(OW):
                                                dst[xx] += wv * src[xx]
                                        else:
                                            for xx in range(OW):
                                                dst[xx] += wv * src[xx * stride]


def conv_backward_input(floating[:, :, :, :, ::1] g, floating[:, :, :, :, ::1] w,
                        floating[:, :, :, :, ::1] gxp, int stride, int groups):
    cdef Py_ssize_t N = g.shape[0], CO = g.shape[1]
    cdef Py_ssize_t OD = g.shape[2], OH = g.shape[3], OW = g.shape[4]
    cdef Py_ssize_t CPG = w.shape[1], K1 = w.shape[2], K2 = w.shape[3], K3 = w.shape[4]
    cdef Py_ssize_t OPG = CO // groups
    cdef Py_ssize_t n, o, cl, c, a, b, e, z, yy, xx
    cdef floating wv
    cdef floating *dst
    cdef floating *src
    with nogil:
        for n in range(N):
            for o in range(CO):
                for cl in range(CPG):
                    c = (o // OPG) * CPG + cl
                    for a in range(K1):
                        for b in range(K2):
                            for e in range(K3):
                                wv = w[o, cl, a, b, e]
                                for z in range(OD):
                                    for yy in range(OH):
                                        dst = &gxp[n, c, z * stride + a, yy * stride + b, e]
                                        src = &g[n, o, z, yy, 0]
                                        if stride == 1:
                                            for xx in range(OW):
                                                dst[xx] += wv * src[xx]
                                        else:
                                            for xx in range(OW):
                                                dst[xx * stride] += wv * src[xx]


def conv_backward_weight(floating[:, :, :, :, ::1] g, floating[:, :, :, :, ::1] xp,
                         floating[:, :, :, :, ::1] gw, int stride, int groups):
    cdef Py_ssize_t N = g.shape[0], CO = g.shape[1]
    cdef Py_ssize_t OD = g.shape[2], OH = g.shape[3], OW = g.shape[4]
    cdef Py_ssize_t CPG = gw.shape[1], K1 = gw.shape[2], K2 = gw.shape[3], K3 = gw.shape[4]
    cdef Py_ssize_t OPG = CO // groups
    cdef Py_ssize_t n, o, cl, c, a, b, e, z, yy, xx
    cdef floating acc, acc0, acc1, acc2, acc3
    cdef floating *gsrc
    cdef floating *src
    with nogil:
        for o in range(CO):
            for cl in range(CPG):
                c = (o // OPG) * CPG + cl
                for a in range(K1):
                    for b in range(K2):
                        for e in range(K3):
                            acc = 0
                            acc0 = 0
                            acc1 = 0
                            acc2 = 0
                            acc3 = 0
                            for n in range(N):
                                for z in range(OD):
                                    for yy in range(OH):
                                        gsrc = &g[n, o, z, yy, 0]
                                        src = &xp[n, c, z * stride + a, yy * stride + b, e]
                                        if stride == 1:
                                            xx = 0
                                            while xx + 4 <= OW:
                                                acc0 = acc0 + gsrc[xx] * src[xx]
                                                acc1 = acc1 + gsrc[xx + 1] * src[xx + 1]
                                                acc2 = acc2 + gsrc[xx + 2] * src[xx + 2]
                                                acc3 = acc3 + gsrc[xx + 3] * src[xx + 3]
                                                xx = xx + 4
                                            while xx < OW:
                                                acc = acc + gsrc[xx] * src[xx]
                                                xx = xx + 1
                                        else:
                                            for xx in range(OW):
                                                acc = acc + gsrc[xx] * src[xx * stride]
                            gw[o, cl, a, b, e] = acc + ((acc0 + acc1) + (acc2 + acc3))

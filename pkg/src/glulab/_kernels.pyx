# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise activation kernels.

Same coefficients and branch structure as ``_kernels_py``; each array is
processed in a single pass without temporaries. Inputs may be float32 or
float64 and of any shape; arithmetic is always carried out in double.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, copysign, trunc

cnp.import_array()

BACKEND = "cython"

cdef double _THRESH = 0.46875
cdef double _SQRPI = 5.6418958354775628695e-1
cdef double _XBIG = 26.543
cdef double _INV_SQRT2 = 0.70710678118654752440
cdef double _INV_SQRT_2PI = 0.39894228040143267794

cdef double[5] _A = [3.16112374387056560e00, 1.13864154151050156e02,
                     3.77485237685302021e02, 3.20937758913846947e03,
                     1.85777706184603153e-1]
cdef double[4] _B = [2.36012909523441209e01, 2.44024637934444173e02,
                     1.28261652607737228e03, 2.84423683343917062e03]
cdef double[9] _C = [5.64188496988670089e-1, 8.88314979438837594e00,
                     6.61191906371416295e01, 2.98635138197400131e02,
                     8.81952221241769090e02, 1.71204761263407058e03,
                     2.05107837782607147e03, 1.23033935479799725e03,
                     2.15311535474403846e-8]
cdef double[8] _D = [1.57449261107098347e01, 1.17693950891312499e02,
                     5.37181101862009858e02, 1.62138957456669019e03,
                     3.29079923573345963e03, 4.36261909014324716e03,
                     3.43936767414372164e03, 1.23033935480374942e03]
cdef double[6] _P = [3.05326634961232344e-1, 3.60344899949804439e-1,
                     1.25781726111229246e-1, 1.60837851487422766e-2,
                     6.58749161529837803e-4, 1.63153871373020978e-2]
cdef double[5] _Q = [2.56852019228982242e00, 1.87295284992346725e00,
                     5.27905102951428412e-1, 6.05183413124413191e-2,
                     2.33520497626869185e-3]

ctypedef fused real:
    float
    double


cdef inline double _erf_small(double x) nogil:
    cdef double y = x * x
    cdef double num = _A[4] * y
    cdef double den = y
    cdef int i
    for i in range(3):
        num = (num + _A[i]) * y
        den = (den + _B[i]) * y
    return x * (num + _A[3]) / (den + _B[3])


cdef inline double _scaled_tail(double y) nogil:
    # erfc(y) for y > _THRESH
    cdef double num, den, r, ysq, delta
    cdef int i
    if y >= _XBIG:
        return 0.0
    if y <= 4.0:
        num = _C[8] * y
        den = y
        for i in range(7):
            num = (num + _C[i]) * y
            den = (den + _D[i]) * y
        r = (num + _C[7]) / (den + _D[7])
    else:
        ysq = 1.0 / (y * y)
        num = _P[5] * ysq
        den = ysq
        for i in range(4):
            num = (num + _P[i]) * ysq
            den = (den + _Q[i]) * ysq
        r = ysq * (num + _P[4]) / (den + _Q[4])
        r = (_SQRPI - r) / y
    ysq = trunc(y * 16.0) / 16.0
    delta = (y - ysq) * (y + ysq)
    return exp(-ysq * ysq) * exp(-delta) * r


cdef inline double c_erf(double x) nogil:
    cdef double ax = fabs(x)
    if ax <= _THRESH:
        return _erf_small(x)
    return copysign(1.0 - _scaled_tail(ax), x)


cdef inline double c_erfc(double x) nogil:
    cdef double ax = fabs(x)
    if ax <= _THRESH:
        return 1.0 - _erf_small(x)
    if x < 0.0:
        return 2.0 - _scaled_tail(ax)
    return _scaled_tail(ax)


cdef inline double c_cdf(double x) nogil:
    return 0.5 * c_erfc(-x * _INV_SQRT2)


cdef inline double c_sigmoid(double x) nogil:
    cdef double z
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


cdef void _erf_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>c_erf(x[i])


cdef void _erfc_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>c_erfc(x[i])


cdef void _cdf_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>c_cdf(x[i])


cdef void _sigmoid_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = <real>c_sigmoid(x[i])


cdef void _gelu_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = <real>(v * c_cdf(v))


cdef void _gelu_grad_loop(real[::1] x, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = <real>(c_cdf(v) + v * _INV_SQRT_2PI * exp(-0.5 * v * v))


cdef void _swish_loop(real[::1] x, double beta, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v
    for i in range(x.shape[0]):
        v = x[i]
        out[i] = <real>(v * c_sigmoid(beta * v))


cdef void _swish_grad_loop(real[::1] x, double beta, real[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef double v, s
    for i in range(x.shape[0]):
        v = x[i]
        s = c_sigmoid(beta * v)
        out[i] = <real>(s + beta * v * s * (1.0 - s))


cdef _prepare(x, bint keep_float32):
    arr = np.asarray(x)
    shape = arr.shape
    if keep_float32 and arr.dtype == np.float32:
        arr = np.ascontiguousarray(arr)
    else:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    return arr, np.empty_like(arr), shape


def erf(x):
    arr, out, shape = _prepare(x, False)
    _erf_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def erfc(x):
    arr, out, shape = _prepare(x, False)
    _erfc_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def normal_cdf(x):
    arr, out, shape = _prepare(x, False)
    _cdf_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def sigmoid(x):
    arr, out, shape = _prepare(x, True)
    if arr.dtype == np.float32:
        _sigmoid_loop[float](arr.reshape(-1), out.reshape(-1))
    else:
        _sigmoid_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def gelu(x):
    arr, out, shape = _prepare(x, True)
    if arr.dtype == np.float32:
        _gelu_loop[float](arr.reshape(-1), out.reshape(-1))
    else:
        _gelu_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def gelu_grad(x):
    arr, out, shape = _prepare(x, True)
    if arr.dtype == np.float32:
        _gelu_grad_loop[float](arr.reshape(-1), out.reshape(-1))
    else:
        _gelu_grad_loop[double](arr.reshape(-1), out.reshape(-1))
    return out.reshape(shape)


def swish(x, double beta=1.0):
    arr, out, shape = _prepare(x, True)
    if arr.dtype == np.float32:
        _swish_loop[float](arr.reshape(-1), beta, out.reshape(-1))
    else:
        _swish_loop[double](arr.reshape(-1), beta, out.reshape(-1))
    return out.reshape(shape)


def swish_grad(x, double beta=1.0):
    arr, out, shape = _prepare(x, True)
    if arr.dtype == np.float32:
        _swish_grad_loop[float](arr.reshape(-1), beta, out.reshape(-1))
    else:
        _swish_grad_loop[double](arr.reshape(-1), beta, out.reshape(-1))
    return out.reshape(shape)

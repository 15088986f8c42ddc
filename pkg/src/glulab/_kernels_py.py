"""Pure-numpy implementations of the elementwise activation kernels.

This is the fallback backend; ``_kernels.pyx`` mirrors every function here
with the same coefficients so both paths agree to rounding.

erf/erfc follow W. J. Cody's rational Chebyshev approximations (CALERF,
Math. Comp. 1969), split into three ranges of ``|x|``. Maximum absolute error
is below 1e-15 on the double range; the committed oracle table in
``tests/data/erf_oracle.txt`` checks it against 30-digit values.
"""

import numpy as np

# |x| <= 0.46875
_A = (3.16112374387056560e00, 1.13864154151050156e02, 3.77485237685302021e02,
      3.20937758913846947e03, 1.85777706184603153e-1)
_B = (2.36012909523441209e01, 2.44024637934444173e02, 1.28261652607737228e03,
      2.84423683343917062e03)
# 0.46875 < |x| <= 4
_C = (5.64188496988670089e-1, 8.88314979438837594e00, 6.61191906371416295e01,
      2.98635138197400131e02, 8.81952221241769090e02, 1.71204761263407058e03,
      2.05107837782607147e03, 1.23033935479799725e03, 2.15311535474403846e-8)
_D = (1.57449261107098347e01, 1.17693950891312499e02, 5.37181101862009858e02,
      1.62138957456669019e03, 3.29079923573345963e03, 4.36261909014324716e03,
      3.43936767414372164e03, 1.23033935480374942e03)
# |x| > 4
_P = (3.05326634961232344e-1, 3.60344899949804439e-1, 1.25781726111229246e-1,
      1.60837851487422766e-2, 6.58749161529837803e-4, 1.63153871373020978e-2)
_Q = (2.56852019228982242e00, 1.87295284992346725e00, 5.27905102951428412e-1,
      6.05183413124413191e-2, 2.33520497626869185e-3)

_THRESH = 0.46875
_SQRPI = 5.6418958354775628695e-1  # 1/sqrt(pi)
_XBIG = 26.543
_INV_SQRT2 = 0.70710678118654752440
_INV_SQRT_2PI = 0.39894228040143267794

BACKEND = "python"


def _erf_small(x):
    y = x * x
    num = _A[4] * y
    den = y
    for i in range(3):
        num = (num + _A[i]) * y
        den = (den + _B[i]) * y
    return x * (num + _A[3]) / (den + _B[3])


def _scaled_tail(y):
    """erfc(y) for y > 0.46875, with the exp(-y^2) factor applied."""
    mid = y <= 4.0
    ym = np.where(mid, y, 1.0)
    num = _C[8] * ym
    den = ym
    for i in range(7):
        num = (num + _C[i]) * ym
        den = (den + _D[i]) * ym
    r_mid = (num + _C[7]) / (den + _D[7])

    yb = np.where(mid, 5.0, y)
    ysq = 1.0 / (yb * yb)
    num = _P[5] * ysq
    den = ysq
    for i in range(4):
        num = (num + _P[i]) * ysq
        den = (den + _Q[i]) * ysq
    r_big = ysq * (num + _P[4]) / (den + _Q[4])
    r_big = (_SQRPI - r_big) / yb

    r = np.where(mid, r_mid, r_big)
    # exp(-y*y) split to keep the low bits of y*y
    ysq16 = np.trunc(y * 16.0) / 16.0
    delta = (y - ysq16) * (y + ysq16)
    with np.errstate(under="ignore"):
        out = np.exp(-ysq16 * ysq16) * np.exp(-delta) * r
    return np.where(y >= _XBIG, 0.0, out)


def erf(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax <= _THRESH
    out = np.empty_like(x)
    out[small] = _erf_small(x[small])
    big = ~small
    if big.any():
        tail = _scaled_tail(ax[big])
        out[big] = np.copysign(1.0 - tail, x[big])
    return out


def erfc(x):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax <= _THRESH
    out = np.empty_like(x)
    out[small] = 1.0 - _erf_small(x[small])
    big = ~small
    if big.any():
        tail = _scaled_tail(ax[big])
        out[big] = np.where(x[big] < 0.0, 2.0 - tail, tail)
    return out


def normal_cdf(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * erfc(-x * _INV_SQRT2)


def _out_dtype(x):
    if isinstance(x, np.ndarray) and x.dtype == np.float32:
        return np.float32
    return np.float64


def sigmoid(x):
    x64 = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument only, so nothing overflows
    with np.errstate(under="ignore"):
        z = np.exp(-np.abs(x64))
    out = np.where(x64 >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out.astype(_out_dtype(x), copy=False)


def gelu(x):
    x64 = np.asarray(x, dtype=np.float64)
    out = x64 * normal_cdf(x64)
    return out.astype(_out_dtype(x), copy=False)


def gelu_grad(x):
    x64 = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x64 * x64)
    out = normal_cdf(x64) + x64 * pdf
    return out.astype(_out_dtype(x), copy=False)


def swish(x, beta=1.0):
    x64 = np.asarray(x, dtype=np.float64)
    out = x64 * sigmoid(beta * x64)
    return out.astype(_out_dtype(x), copy=False)


def swish_grad(x, beta=1.0):
    x64 = np.asarray(x, dtype=np.float64)
    s = sigmoid(beta * x64)
    out = s + beta * x64 * s * (1.0 - s)
    return out.astype(_out_dtype(x), copy=False)

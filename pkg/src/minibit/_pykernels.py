"""Pure NumPy versions of the hot kernels.

These mirror ``_ckernels.pyx`` one-for-one and are used when the compiled
extension is unavailable (or ``MINIBIT_BACKEND=python`` is set). Results are
bitwise identical to the compiled path for every kernel here.
"""

import numpy as np

PCG_MULT = np.uint64(6364136223846793005)
_MASK32 = np.uint64(0xFFFFFFFF)


def _jump_tables(inc, n):
    """Affine coefficients (A_k, C_k) with state_k = A_k * state_0 + C_k."""
    a_tab = np.ones(1, dtype=np.uint64)
    c_tab = np.zeros(1, dtype=np.uint64)
    a_jump = PCG_MULT
    c_jump = np.uint64(inc)
    while a_tab.size < n:
        a_tab = np.concatenate([a_tab, a_tab * a_jump])
        c_tab = np.concatenate([c_tab, c_tab * a_jump + c_jump])
        c_jump = c_jump * a_jump + c_jump
        a_jump = a_jump * a_jump
    return a_tab[:n], c_tab[:n]


def pcg32_fill(state, inc, n):
    """Return ``(draws, new_state)`` for ``n`` PCG-XSH-RR outputs."""
    if n == 0:
        return np.empty(0, dtype=np.uint32), state
    with np.errstate(over="ignore"):
        s0 = np.uint64(state)
        a_tab, c_tab = _jump_tables(inc, n + 1)
        states = a_tab * s0 + c_tab
    old = states[:n]
    xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)) & _MASK32
    rot = old >> np.uint64(59)
    x = xorshifted.astype(np.uint32)
    r = rot.astype(np.uint32)
    out = (x >> r) | (x << ((np.uint32(32) - r) & np.uint32(31)))
    return out.astype(np.uint32), int(states[n])


def im2col(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, x_shape, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x_shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cols6 = cols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += cols6[:, :, i, j]
    return np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w])


def maxpool_forward(x, kh, kw, sh, sw, ph, pw):
    """Windowed max; argmax is the flat ``h*W + w`` index in the unpadded plane.

    Ties go to the first window element in row-major order.
    """
    n, c, h, w = x.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf) if ph or pw else x
    win = np.empty((kh * kw, n, c, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            win[i * kw + j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    k = np.argmax(win, axis=0)
    y = np.take_along_axis(win, k[None], axis=0)[0]
    ki, kj = np.divmod(k, kw)
    rows = np.arange(ho)[:, None] * sh + ki - ph
    cols = np.arange(wo)[None, :] * sw + kj - pw
    argmax = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(y), argmax


def maxpool_backward(grad_out, argmax, x_shape):
    n, c, h, w = x_shape
    plane = h * w
    offsets = (np.arange(n * c, dtype=np.int64) * plane).reshape(n, c, 1, 1)
    flat = (argmax + offsets).ravel()
    dx = np.bincount(flat, weights=grad_out.ravel().astype(np.float64), minlength=n * c * plane)
    return dx.astype(grad_out.dtype).reshape(x_shape)

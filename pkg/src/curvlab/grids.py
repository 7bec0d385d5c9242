"""Periodic grid utilities: fourth-order difference stencils, Fourier
interpolation and the binary grid-dump format.

Cells of an ``R``-point axis of period ``P`` sit at ``offset + (i + 1/2) P / R``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from itertools import permutations, product as iproduct

import numpy as np
import scipy.sparse as sp

MAGIC = b"CVLGRID1"

# 4th-order centred stencils (offsets -2..2)
D1_STENCIL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
D2_STENCIL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
OFFSETS = (-2, -1, 0, 1, 2)


def cell_centers(resolution, periods, offset=None):
    """Cell-centre coordinate axes for a periodic grid."""
    offset = offset if offset is not None else (0.0,) * len(resolution)
    return [o + (np.arange(r) + 0.5) * p / r for r, p, o in zip(resolution, periods, offset)]


def cell_points(resolution, periods, offset=None):
    axes = cell_centers(resolution, periods, offset)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(resolution))


def _apply(u, axis, stencil, scale):
    out = np.zeros_like(u, dtype=float)
    for c, o in zip(stencil, OFFSETS):
        if c:
            # roll by -o brings u[i + o] to position i
            out += c * np.roll(u, -o, axis=axis)
    return out * scale


def d1(u, axis, h):
    """Fourth-order periodic first derivative along ``axis``."""
    return _apply(u, axis, D1_STENCIL, 1.0 / h)


def d2(u, axis, h):
    """Fourth-order periodic second derivative along ``axis``."""
    return _apply(u, axis, D2_STENCIL, 1.0 / (h * h))


def derivatives(u, spacing):
    """First and second derivatives of a grid function.

    Returns ``(du, ddu)`` with shapes ``u.shape + (b,)`` and
    ``u.shape + (b, b)``; mixed partials are products of first-derivative
    stencils.
    """
    b = u.ndim
    du = np.stack([d1(u, i, spacing[i]) for i in range(b)], axis=-1)
    ddu = np.empty(u.shape + (b, b))
    for i in range(b):
        ddu[..., i, i] = d2(u, i, spacing[i])
        for j in range(i + 1, b):
            v = d1(du[..., i], j, spacing[j])
            ddu[..., i, j] = v
            ddu[..., j, i] = v
    return du, ddu


def _circulant_1d(R, stencil, scale):
    rows, cols, vals = [], [], []
    i = np.arange(R)
    for c, o in zip(stencil, OFFSETS):
        if c:
            rows.append(i)
            cols.append((i + o) % R)
            vals.append(np.full(R, c * scale))
    # duplicates (tiny R) are summed by the COO -> CSR conversion
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(R, R)).tocsr()


def axis_operator(shape, axis, kind, h):
    """Sparse matrix of ``d1`` or ``d2`` on a C-ordered flattened grid."""
    R = shape[axis]
    if kind == "d1":
        core = _circulant_1d(R, D1_STENCIL, 1.0 / h)
    elif kind == "d2":
        core = _circulant_1d(R, D2_STENCIL, 1.0 / (h * h))
    else:
        raise ValueError(kind)
    mats = [sp.identity(n, format="csr") for n in shape]
    mats[axis] = core
    out = mats[0]
    for M in mats[1:]:
        out = sp.kron(out, M, format="csr")
    return out


def derivative_operators(shape, spacing):
    """``(D1[i], D2[i][j])`` sparse operators matching :func:`derivatives`."""
    b = len(shape)
    D1 = [axis_operator(shape, i, "d1", spacing[i]) for i in range(b)]
    D2 = [[None] * b for _ in range(b)]
    for i in range(b):
        D2[i][i] = axis_operator(shape, i, "d2", spacing[i])
        for j in range(i + 1, b):
            D2[i][j] = D2[j][i] = (D1[j] @ D1[i]).tocsr()
    return D1, D2


# ---------------------------------------------------------------------------
# Fourier interpolation

class FourierField:
    """Trigonometric interpolant of cell-centred periodic samples.

    The Nyquist modes are dropped so that the interpolant and all of its
    derivatives are real.  Supports one- and two-dimensional grids.
    """

    def __init__(self, values, periods, offset=None):
        values = np.asarray(values, float)
        self.shape = values.shape
        self.periods = tuple(float(p) for p in periods)
        b = values.ndim
        self.offset = tuple(offset) if offset is not None else (0.0,) * b
        c = np.fft.fftn(values) / values.size
        ks = []
        for ax, (R, P) in enumerate(zip(self.shape, self.periods)):
            k = np.fft.fftfreq(R, 1.0 / R)
            if R % 2 == 0:
                sl = [slice(None)] * b
                sl[ax] = R // 2
                c[tuple(sl)] = 0.0
            ks.append(2 * np.pi * k / P)
        # samples sit at offset + (i + 1/2) h: fold the shift into the coefficients
        for ax, (R, P) in enumerate(zip(self.shape, self.periods)):
            x0 = self.offset[ax] + 0.5 * P / R
            shape = [1] * b
            shape[ax] = R
            c = c * np.exp(-1j * ks[ax] * x0).reshape(shape)
        self.coef = c
        self.wavenumbers = ks

    def __call__(self, x, orders=(0,)):
        """Evaluate partial derivatives at points ``x`` (N x b).

        ``orders`` is a sequence of multi-indices (tuples of axis indices);
        ``()`` or ``0`` means the value.  Returns a list of arrays.
        """
        x = np.atleast_2d(np.asarray(x, float))
        b = len(self.shape)
        E = [np.exp(1j * np.outer(x[:, a], self.wavenumbers[a])) for a in range(b)]
        out = []
        for idx in orders:
            idx = () if idx == 0 else tuple(idx)
            c = self.coef
            for a in idx:
                shape = [1] * b
                shape[a] = -1
                c = c * (1j * self.wavenumbers[a]).reshape(shape)
            if b == 1:
                val = E[0] @ c
            elif b == 2:
                val = np.einsum("nk,nk->n", E[0] @ c, E[1])
            else:
                raise ValueError("Fourier evaluation supports 1 or 2 axes")
            out.append(val.real)
        return out

    def jets(self, x, order=2):
        """Value and derivatives up to ``order`` (max 3) as dense arrays."""
        x = np.atleast_2d(np.asarray(x, float))
        b = len(self.shape)
        N = x.shape[0]
        idx_by_order = [[idx for idx in iproduct(range(b), repeat=k) if list(idx) == sorted(idx)]
                        for k in range(order + 1)]
        flat = [idx for group in idx_by_order for idx in group]
        vals = dict(zip(flat, self(x, flat)))
        res = [vals[()]]
        for k in range(1, order + 1):
            arr = np.empty((N,) + (b,) * k)
            for idx in idx_by_order[k]:
                for perm in set(permutations(idx)):
                    arr[(slice(None),) + perm] = vals[idx]
            res.append(arr)
        return res


# ---------------------------------------------------------------------------
# grid dumps

def write_grid(path, values, periods, height_axis=None, extra=None):
    """Atomically write a grid dump: magic, header length, JSON header, '<f8' payload."""
    values = np.ascontiguousarray(values, dtype="<f8")
    header = {
        "dims": values.ndim,
        "resolution": list(values.shape),
        "periods": [float(p) for p in periods],
        "height_axis": height_axis,
        "dtype": "<f8",
        "order": "row-major",
    }
    if extra:
        header.update(extra)
    hbytes = json.dumps(header, sort_keys=True).encode()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".grid-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hbytes)))
            fh.write(hbytes)
            fh.write(values.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_grid(path):
    """Inverse of :func:`write_grid`; returns ``(header, values)``."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a grid dump")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode())
        payload = fh.read()
    values = np.frombuffer(payload, dtype="<f8").reshape(header["resolution"]).copy()
    return header, values

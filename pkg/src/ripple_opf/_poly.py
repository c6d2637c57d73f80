"""Sparse quadratic equation rows over a real, scaled variable vector.

Every row is ``f_k(x) = c_k + sum a_ki x_i + sum q_kij x_i x_j``; values,
Jacobians and multiplier-weighted Hessians are exact and vectorised.  Rows
and variables carry scale factors: coefficients are supplied in SI and the
builder folds in ``row_scale * var_scale`` so the stored system is unit-free.
"""

import numpy as np
import scipy.sparse as sp


class QuadRows:
    def __init__(self, n, const, lin, quad, labels):
        self.n = n
        self.m = len(const)
        self.const = np.asarray(const, dtype=float)
        lr, lc, lv = lin
        self.lin = sp.csr_matrix((lv, (lr, lc)), shape=(self.m, n))
        self.qr, self.qi, self.qj, self.qv = (np.asarray(a) for a in quad)
        self.qr = self.qr.astype(np.int64)
        self.qi = self.qi.astype(np.int64)
        self.qj = self.qj.astype(np.int64)
        self.qv = self.qv.astype(float)
        self.labels = list(labels)

    def value(self, x):
        f = self.lin @ x + self.const
        if self.qv.size:
            f += np.bincount(self.qr, self.qv * x[self.qi] * x[self.qj], minlength=self.m)
        return f

    def jacobian(self, x):
        if not self.qv.size:
            return self.lin.copy()
        r = np.concatenate([self.qr, self.qr])
        c = np.concatenate([self.qi, self.qj])
        v = np.concatenate([self.qv * x[self.qj], self.qv * x[self.qi]])
        return (self.lin + sp.csr_matrix((v, (r, c)), shape=(self.m, self.n))).tocsr()

    def hessian(self, weights):
        """Sum over rows of ``weights[k] * Hessian(f_k)`` as a symmetric sparse matrix."""
        w = np.asarray(weights, dtype=float)[self.qr] * self.qv
        r = np.concatenate([self.qi, self.qj])
        c = np.concatenate([self.qj, self.qi])
        return sp.csr_matrix((np.concatenate([w, w]), (r, c)), shape=(self.n, self.n))

    def subset(self, rows):
        """New QuadRows made of the selected rows (in the given order)."""
        rows = np.asarray(rows, dtype=np.int64)
        remap = -np.ones(self.m, dtype=np.int64)
        remap[rows] = np.arange(len(rows))
        lin = self.lin[rows].tocoo()
        keep = remap[self.qr] >= 0
        return QuadRows(self.n, self.const[rows], (lin.row, lin.col, lin.data),
                        (remap[self.qr[keep]], self.qi[keep], self.qj[keep], self.qv[keep]),
                        [self.labels[k] for k in rows])


class QuadBuilder:
    """Accumulates scaled quadratic rows.

    Complex helpers take complex variable ids: id ``k`` occupies real slots
    ``2k`` (real part) and ``2k + 1`` (imaginary part).  ``None`` stands for a
    quantity fixed at zero and contributes nothing.
    """

    def __init__(self, var_scale):
        self.var_scale = np.asarray(var_scale, dtype=float)
        self.n = len(self.var_scale)
        self.labels = []
        self.row_scale = []
        self.const = []
        self.lin = ([], [], [])
        self.quad = ([], [], [], [])

    # real primitives
    def row(self, label, scale=1.0):
        self.labels.append(label)
        self.row_scale.append(float(scale))
        self.const.append(0.0)
        return len(self.labels) - 1

    def const_term(self, r, val):
        self.const[r] += val * self.row_scale[r]

    def lin_term(self, r, i, val):
        if val == 0:
            return
        self.lin[0].append(r)
        self.lin[1].append(i)
        self.lin[2].append(val * self.row_scale[r] * self.var_scale[i])

    def quad_term(self, r, i, j, val):
        if val == 0:
            return
        self.quad[0].append(r)
        self.quad[1].append(i)
        self.quad[2].append(j)
        self.quad[3].append(val * self.row_scale[r] * self.var_scale[i] * self.var_scale[j])

    # complex helpers: (rr, ri) are the rows receiving real/imag parts (either may be None)
    def c_const(self, rr, ri, c):
        c = complex(c)
        if rr is not None:
            self.const_term(rr, c.real)
        if ri is not None:
            self.const_term(ri, c.imag)

    def c_lin(self, rr, ri, k, c):
        """Add ``c * u`` with u the complex variable ``k``."""
        if k is None:
            return
        c = complex(c)
        ur, ui = 2 * k, 2 * k + 1
        if rr is not None:
            self.lin_term(rr, ur, c.real)
            self.lin_term(rr, ui, -c.imag)
        if ri is not None:
            self.lin_term(ri, ur, c.imag)
            self.lin_term(ri, ui, c.real)

    def c_bilin(self, rr, ri, k1, k2, c=1.0, conj2=False):
        """Add ``c * u * w`` (or ``c * u * conj(w)``) for complex variables k1, k2."""
        if k1 is None or k2 is None:
            return
        c = complex(c)
        ur, ui, wr, wi = 2 * k1, 2 * k1 + 1, 2 * k2, 2 * k2 + 1
        # X = u*w or u*conj(w) as {(i, j): (re coef, im coef)}
        if conj2:
            terms = {(ur, wr): (1.0, 0.0), (ui, wi): (1.0, 0.0), (ui, wr): (0.0, 1.0), (ur, wi): (0.0, -1.0)}
        else:
            terms = {(ur, wr): (1.0, 0.0), (ui, wi): (-1.0, 0.0), (ur, wi): (0.0, 1.0), (ui, wr): (0.0, 1.0)}
        for (i, j), (xr, xi) in terms.items():
            if rr is not None:
                self.quad_term(rr, i, j, c.real * xr - c.imag * xi)
            if ri is not None:
                self.quad_term(ri, i, j, c.imag * xr + c.real * xi)

    def abs2_linear(self, r, coeffs, const=0j):
        """Add ``|sum_k c_k u_k + const|^2`` to row r; ``coeffs`` maps var id -> complex."""
        # real and imaginary parts as linear forms over real slots
        re_form, im_form = {}, {}
        for k, c in coeffs.items():
            if k is None:
                continue
            c = complex(c)
            for slot, (a, b) in ((2 * k, (c.real, c.imag)), (2 * k + 1, (-c.imag, c.real))):
                re_form[slot] = re_form.get(slot, 0.0) + a
                im_form[slot] = im_form.get(slot, 0.0) + b
        const = complex(const)
        for form, c0 in ((re_form, const.real), (im_form, const.imag)):
            items = list(form.items())
            for a, (i, ci) in enumerate(items):
                self.quad_term(r, i, i, ci * ci)
                for (j, cj) in items[a + 1:]:
                    self.quad_term(r, i, j, 2.0 * ci * cj)
                self.lin_term(r, i, 2.0 * c0 * ci)
            self.const_term(r, c0 * c0)

    def build(self) -> QuadRows:
        return QuadRows(self.n, self.const, self.lin, self.quad, self.labels)

//! Per-layer forward/backward kernels over flat row-major buffers.

use matrixmultiply::dgemm;

/// `c = alpha * a * b + beta * c` with explicit strides, `a` is m x k, `b` is k x n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    debug_assert!(m == 0 || k == 0 || a.len() >= (m - 1) * rsa.max(0) as usize + 1);
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass buffers whose extents cover m x k, k x n and m x n
    // under the given strides; all strides are non-negative.
    unsafe {
        dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Geometry of one stride-1, unpadded convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel + 1
    }
    pub fn out_w(&self) -> usize {
        self.width - self.kernel + 1
    }
    /// Rows of the unfolded patch matrix.
    pub fn patch(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }
    pub fn out_len(&self) -> usize {
        self.out_channels * self.positions()
    }
}

/// Unfolds one `[C, H, W]` sample into a `[C*k*k, OH*OW]` patch matrix.
pub(crate) fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let (k, oh, ow) = (g.kernel, g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src = &plane[(oy + ki) * g.width + kj..][..ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-matrix gradients into `dx`.
pub(crate) fn col2im(g: &ConvGeom, dcol: &[f64], dx: &mut [f64]) {
    let (k, oh, ow) = (g.kernel, g.out_h(), g.out_w());
    let p = oh * ow;
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &dcol[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ki) * g.width + kj..][..ow];
                    for (d, s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let (r, p) = (g.patch(), g.positions());
    let mut col = vec![0.0; r * p];
    for b in 0..batch {
        im2col(g, &x[b * g.in_len()..(b + 1) * g.in_len()], &mut col);
        let y = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        for (o, chunk) in y.chunks_exact_mut(p).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            g.out_channels,
            r,
            p,
            1.0,
            weight,
            (r as isize, 1),
            &col,
            (p as isize, 1),
            1.0,
            y,
            p as isize,
        );
    }
}

/// Accumulates weight/bias gradients and writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    let (r, p, o) = (g.patch(), g.positions(), g.out_channels);
    let mut col = vec![0.0; r * p];
    let mut dcol = vec![0.0; r * p];
    dx.fill(0.0);
    for b in 0..batch {
        let xs = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let dys = &dy[b * g.out_len()..(b + 1) * g.out_len()];
        im2col(g, xs, &mut col);
        // dW[o, r] += dY[o, p] * col[r, p]^T
        gemm(
            o,
            p,
            r,
            1.0,
            dys,
            (p as isize, 1),
            &col,
            (1, p as isize),
            1.0,
            dweight,
            r as isize,
        );
        for (db, chunk) in dbias.iter_mut().zip(dys.chunks_exact(p)) {
            *db += chunk.iter().sum::<f64>();
        }
        // dcol[r, p] = W[o, r]^T * dY[o, p]
        gemm(
            r,
            o,
            p,
            1.0,
            weight,
            (1, r as isize),
            dys,
            (p as isize, 1),
            0.0,
            &mut dcol,
            p as isize,
        );
        col2im(g, &dcol, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
    }
}

pub(crate) fn dense_forward(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for row in out.chunks_exact_mut(n_out) {
        row.copy_from_slice(bias);
    }
    // Y = X W^T
    gemm(
        batch,
        n_in,
        n_out,
        1.0,
        x,
        (n_in as isize, 1),
        weight,
        (1, n_in as isize),
        1.0,
        out,
        n_out as isize,
    );
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    batch: usize,
    n_in: usize,
    n_out: usize,
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: &mut [f64],
) {
    // dW = dY^T X
    gemm(
        n_out,
        batch,
        n_in,
        1.0,
        dy,
        (1, n_out as isize),
        x,
        (n_in as isize, 1),
        1.0,
        dweight,
        n_in as isize,
    );
    for row in dy.chunks_exact(n_out) {
        for (db, v) in dbias.iter_mut().zip(row) {
            *db += v;
        }
    }
    // dX = dY W
    gemm(
        batch,
        n_out,
        n_in,
        1.0,
        dy,
        (n_out as isize, 1),
        weight,
        (n_in as isize, 1),
        0.0,
        dx,
        n_in as isize,
    );
}

/// 2x2/stride-2 max pooling; records the flat input index of every winner.
pub(crate) fn maxpool_forward(
    batch: usize,
    (c, h, w): (usize, usize, usize),
    x: &[f64],
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    let in_len = c * h * w;
    let out_len = c * oh * ow;
    for b in 0..batch {
        for ch in 0..c {
            let base = b * in_len + ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    let o = b * out_len + (ch * oh + oy) * ow + ox;
                    out[o] = x[best];
                    argmax[o] = best as u32;
                }
            }
        }
    }
}

pub(crate) fn maxpool_backward(dy: &[f64], argmax: &[u32], dx: &mut [f64]) {
    dx.fill(0.0);
    for (g, &idx) in dy.iter().zip(argmax) {
        dx[idx as usize] += g;
    }
}

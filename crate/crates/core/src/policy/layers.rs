//! Dense and convolutional layer kernels on `f64` buffers.
//!
//! Convolutional activations use a `[C, B, H, W]` layout so a whole batch
//! is one GEMM. Dense activations are row-major `[B, D]`.

/// `c = a · b + beta · c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(c.len() > last(m, n, rsc, csc));
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > last(m, k, rsa, csa));
    assert!(b.len() > last(k, n, rsb, csb));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvShape {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, h: usize, w: usize) -> Option<Self> {
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return None;
        }
        Some(Self {
            cin,
            cout,
            k,
            stride,
            pad,
            h,
            w,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn src(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

pub(crate) fn im2col(x: &[f64], s: &ConvShape, bsz: usize) -> Vec<f64> {
    let n = bsz * s.ho * s.wo;
    let mut col = vec![0.0; s.patch() * n];
    for ci in 0..s.cin {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = ((ci * s.k + ky) * s.k + kx) * n;
                for b in 0..bsz {
                    let plane = (ci * bsz + b) * s.h;
                    for oy in 0..s.ho {
                        let Some(iy) = s.src(oy, ky, s.h) else { continue };
                        let dst = row + (b * s.ho + oy) * s.wo;
                        let src = (plane + iy) * s.w;
                        for ox in 0..s.wo {
                            if let Some(ix) = s.src(ox, kx, s.w) {
                                col[dst + ox] = x[src + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

pub(crate) fn col2im(col: &[f64], s: &ConvShape, bsz: usize) -> Vec<f64> {
    let n = bsz * s.ho * s.wo;
    let mut x = vec![0.0; s.cin * bsz * s.h * s.w];
    for ci in 0..s.cin {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = ((ci * s.k + ky) * s.k + kx) * n;
                for b in 0..bsz {
                    let plane = (ci * bsz + b) * s.h;
                    for oy in 0..s.ho {
                        let Some(iy) = s.src(oy, ky, s.h) else { continue };
                        let src = row + (b * s.ho + oy) * s.wo;
                        let dst = (plane + iy) * s.w;
                        for ox in 0..s.wo {
                            if let Some(ix) = s.src(ox, kx, s.w) {
                                x[dst + ix] += col[src + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Convolution plus bias. Returns the output and the column buffer.
pub(crate) fn conv_forward(x: &[f64], s: &ConvShape, bsz: usize, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let col = im2col(x, s, bsz);
    let n = bsz * s.ho * s.wo;
    let kk = s.patch();
    let mut out = vec![0.0; s.cout * n];
    for (co, row) in out.chunks_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    gemm(s.cout, kk, n, weight, (kk, 1), &col, (n, 1), 1.0, &mut out, (n, 1));
    (out, col)
}

/// Accumulates weight and bias gradients; returns the input gradient if asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    dout: &[f64],
    col: &[f64],
    s: &ConvShape,
    bsz: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let n = bsz * s.ho * s.wo;
    let kk = s.patch();
    gemm(s.cout, n, kk, dout, (n, 1), col, (1, n), 1.0, dweight, (kk, 1));
    for (co, row) in dout.chunks(n).enumerate() {
        dbias[co] += row.iter().sum::<f64>();
    }
    if !want_dx {
        return None;
    }
    let mut dcol = vec![0.0; kk * n];
    gemm(kk, s.cout, n, weight, (1, kk), dout, (n, 1), 0.0, &mut dcol, (n, 1));
    Some(col2im(&dcol, s, bsz))
}

/// `y = x · Wᵀ + b` for `x: [B, din]`, `W: [dout, din]`.
pub(crate) fn linear_forward(x: &[f64], bsz: usize, din: usize, dout: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; bsz * dout];
    for row in y.chunks_mut(dout) {
        row.copy_from_slice(bias);
    }
    gemm(bsz, din, dout, x, (din, 1), weight, (1, din), 1.0, &mut y, (dout, 1));
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    dy: &[f64],
    x: &[f64],
    bsz: usize,
    din: usize,
    dout: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    gemm(dout, bsz, din, dy, (1, dout), x, (din, 1), 1.0, dweight, (din, 1));
    for row in dy.chunks(dout) {
        for (g, d) in dbias.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dx = vec![0.0; bsz * din];
    gemm(bsz, dout, din, dy, (dout, 1), weight, (din, 1), 0.0, &mut dx, (din, 1));
    dx
}

pub(crate) fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero gradient entries where the activation was clipped.
pub(crate) fn relu_backward_inplace(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `[C, B, P]` to `[B, C·P]`.
pub(crate) fn cbp_to_bd(x: &[f64], c: usize, bsz: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for b in 0..bsz {
            let src = (ci * bsz + b) * p;
            let dst = b * c * p + ci * p;
            out[dst..dst + p].copy_from_slice(&x[src..src + p]);
        }
    }
    out
}

pub(crate) fn bd_to_cbp(x: &[f64], c: usize, bsz: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ci in 0..c {
        for b in 0..bsz {
            let dst = (ci * bsz + b) * p;
            let src = b * c * p + ci * p;
            out[dst..dst + p].copy_from_slice(&x[src..src + p]);
        }
    }
    out
}

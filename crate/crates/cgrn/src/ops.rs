//! Numeric kernels behind the autodiff graph.
//!
//! Convolutions run as im2col + gemm, one sample at a time, single
//! threaded. Transposed convolution shares the col2im scatter with the
//! convolution input-gradient, which makes the conv/deconv adjoint
//! identity structural rather than numeric.

use crate::error::{Error, Result};

/// Spatial extent of a convolution output: floor((h + 2p - k)/s) + 1.
pub fn conv_out(h: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    if s == 0 {
        return Err(Error::InvalidArg("stride must be >= 1".into()));
    }
    if h + 2 * p < k {
        return Err(Error::InvalidArg(format!(
            "kernel {k} larger than padded input {h}+2*{p}"
        )));
    }
    Ok((h + 2 * p - k) / s + 1)
}

/// Spatial extent of a transposed-convolution output.
pub fn deconv_out(h: usize, k: usize, s: usize, p: usize, out_pad: usize) -> Result<usize> {
    let raw = (h - 1) * s + k + out_pad;
    if raw < 2 * p {
        return Err(Error::InvalidArg(format!(
            "deconv padding {p} too large for input {h}"
        )));
    }
    Ok(raw - 2 * p)
}

/// Row-major C[m,n] = alpha * A[m,k] * B[k,n] + beta * C. The stride pairs
/// allow free transposition of A or B.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

/// Gather patches of one sample into columns.
///
/// `cols[(ci*k*k + ki*k + kj) * (ph*pw) + (i*pw + j)] = x[ci, i*s+ki-p, j*s+kj-p]`
/// with zero fill outside the source plane. `ph x pw` is the patch grid,
/// `src_h x src_w` the source plane.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    c: usize,
    src_h: usize,
    src_w: usize,
    k: usize,
    s: usize,
    p: usize,
    ph: usize,
    pw: usize,
    cols: &mut [f64],
) {
    let plane = src_h * src_w;
    let grid = ph * pw;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * grid;
                for i in 0..ph {
                    let y = (i * s + ki) as isize - p as isize;
                    let dst = row + i * pw;
                    if y < 0 || y >= src_h as isize {
                        cols[dst..dst + pw].fill(0.0);
                        continue;
                    }
                    let src_row = ci * plane + y as usize * src_w;
                    for j in 0..pw {
                        let xcol = (j * s + kj) as isize - p as isize;
                        cols[dst + j] = if xcol < 0 || xcol >= src_w as isize {
                            0.0
                        } else {
                            x[src_row + xcol as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add columns back onto a plane.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c: usize,
    dst_h: usize,
    dst_w: usize,
    k: usize,
    s: usize,
    p: usize,
    ph: usize,
    pw: usize,
    out: &mut [f64],
) {
    let plane = dst_h * dst_w;
    let grid = ph * pw;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k * k + ki * k + kj) * grid;
                for i in 0..ph {
                    let y = (i * s + ki) as isize - p as isize;
                    if y < 0 || y >= dst_h as isize {
                        continue;
                    }
                    let dst_row = ci * plane + y as usize * dst_w;
                    for j in 0..pw {
                        let x = (j * s + kj) as isize - p as isize;
                        if x >= 0 && x < dst_w as isize {
                            out[dst_row + x as usize] += cols[row + i * pw + j];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// convolution

/// Cross-correlation (no kernel flip). `w` is `[cout, cin, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    let oh = conv_out(h, k, s, p)?;
    let ow = conv_out(w, k, s, p)?;
    let ckk = cin * k * k;
    let grid = oh * ow;
    let mut y = vec![0.0; b * cout * grid];
    let mut cols = vec![0.0; ckk * grid];
    for bi in 0..b {
        im2col(&x[bi * cin * h * w..], cin, h, w, k, s, p, oh, ow, &mut cols);
        gemm(
            cout,
            ckk,
            grid,
            1.0,
            wgt,
            ckk as isize,
            1,
            &cols,
            grid as isize,
            1,
            0.0,
            &mut y[bi * cout * grid..(bi + 1) * cout * grid],
        );
        for co in 0..cout {
            let base = bi * cout * grid + co * grid;
            let bv = bias[co];
            if bv != 0.0 {
                for v in &mut y[base..base + grid] {
                    *v += bv;
                }
            }
        }
    }
    Ok((y, oh, ow))
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
    gy: &[f64],
    need_gx: bool,
    need_gw: bool,
) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>)> {
    let oh = conv_out(h, k, s, p)?;
    let ow = conv_out(w, k, s, p)?;
    let ckk = cin * k * k;
    let grid = oh * ow;
    let mut gx = if need_gx { Some(vec![0.0; b * cin * h * w]) } else { None };
    let mut gw = if need_gw { Some(vec![0.0; cout * ckk]) } else { None };
    let mut gb = vec![0.0; cout];
    let mut cols = vec![0.0; ckk * grid];
    for bi in 0..b {
        let gy_b = &gy[bi * cout * grid..(bi + 1) * cout * grid];
        if let Some(gw) = gw.as_deref_mut() {
            im2col(&x[bi * cin * h * w..], cin, h, w, k, s, p, oh, ow, &mut cols);
            // gw += gy_b [cout, grid] * cols^T [grid, ckk]
            gemm(cout, grid, ckk, 1.0, gy_b, grid as isize, 1, &cols, 1, grid as isize, 1.0, gw);
        }
        if let Some(gx) = gx.as_deref_mut() {
            // gcols = w^T [ckk, cout] * gy_b [cout, grid]
            gemm(ckk, cout, grid, 1.0, wgt, 1, ckk as isize, gy_b, grid as isize, 1, 0.0, &mut cols);
            col2im(&cols, cin, h, w, k, s, p, oh, ow, &mut gx[bi * cin * h * w..]);
        }
        for co in 0..cout {
            gb[co] += gy_b[co * grid..(co + 1) * grid].iter().sum::<f64>();
        }
    }
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// transposed convolution

/// Transposed convolution, adjoint of `conv2d_forward` for the same
/// geometry. `w` is `[cin, cout, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn deconv2d_forward(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
    out_pad: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    let oh = deconv_out(h, k, s, p, out_pad)?;
    let ow = deconv_out(w, k, s, p, out_pad)?;
    let ckk = cout * k * k;
    let grid = h * w;
    let mut y = vec![0.0; b * cout * oh * ow];
    let mut cols = vec![0.0; ckk * grid];
    for bi in 0..b {
        let x_b = &x[bi * cin * grid..(bi + 1) * cin * grid];
        // cols = w^T [ckk, cin] * x_b [cin, grid]
        gemm(ckk, cin, grid, 1.0, wgt, 1, ckk as isize, x_b, grid as isize, 1, 0.0, &mut cols);
        col2im(&cols, cout, oh, ow, k, s, p, h, w, &mut y[bi * cout * oh * ow..]);
    }
    for bi in 0..b {
        for co in 0..cout {
            let base = (bi * cout + co) * oh * ow;
            let bv = bias[co];
            if bv != 0.0 {
                for v in &mut y[base..base + oh * ow] {
                    *v += bv;
                }
            }
        }
    }
    Ok((y, oh, ow))
}

#[allow(clippy::too_many_arguments)]
pub fn deconv2d_backward(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    cout: usize,
    k: usize,
    s: usize,
    p: usize,
    out_pad: usize,
    gy: &[f64],
    need_gx: bool,
    need_gw: bool,
) -> Result<(Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>)> {
    let oh = deconv_out(h, k, s, p, out_pad)?;
    let ow = deconv_out(w, k, s, p, out_pad)?;
    let ckk = cout * k * k;
    let grid = h * w;
    let mut gx = if need_gx { Some(vec![0.0; b * cin * grid]) } else { None };
    let mut gw = if need_gw { Some(vec![0.0; cin * ckk]) } else { None };
    let mut gb = vec![0.0; cout];
    let mut cols = vec![0.0; ckk * grid];
    for bi in 0..b {
        let gy_b = &gy[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
        im2col(gy_b, cout, oh, ow, k, s, p, h, w, &mut cols);
        if let Some(gx) = gx.as_deref_mut() {
            // gx_b = w [cin, ckk] * cols [ckk, grid]
            gemm(
                cin,
                ckk,
                grid,
                1.0,
                wgt,
                ckk as isize,
                1,
                &cols,
                grid as isize,
                1,
                0.0,
                &mut gx[bi * cin * grid..(bi + 1) * cin * grid],
            );
        }
        if let Some(gw) = gw.as_deref_mut() {
            // gw += x_b [cin, grid] * cols^T [grid, ckk]
            let x_b = &x[bi * cin * grid..(bi + 1) * cin * grid];
            gemm(cin, grid, ckk, 1.0, x_b, grid as isize, 1, &cols, 1, grid as isize, 1.0, gw);
        }
        for co in 0..cout {
            gb[co] += gy_b[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
        }
    }
    Ok((gx, gw, gb))
}

// ---------------------------------------------------------------------------
// pooling

/// Max pooling. Ties break on the first (row-major lowest) index so the
/// backward routing is deterministic. Returns the flat in-plane argmax per
/// output element.
pub fn maxpool_forward(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    k: usize,
    s: usize,
) -> Result<(Vec<f64>, Vec<u32>, usize, usize)> {
    if k > h || k > w {
        return Err(Error::InvalidArg(format!("pool kernel {k} exceeds input {h}x{w}")));
    }
    let oh = conv_out(h, k, s, 0)?;
    let ow = conv_out(w, k, s, 0)?;
    let mut y = vec![0.0; b * c * oh * ow];
    let mut arg = vec![0u32; b * c * oh * ow];
    for bc in 0..b * c {
        let xp = &x[bc * h * w..(bc + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for ki in 0..k {
                    for kj in 0..k {
                        let at = (i * s + ki) * w + j * s + kj;
                        if xp[at] > best {
                            best = xp[at];
                            best_at = at;
                        }
                    }
                }
                y[bc * oh * ow + i * ow + j] = best;
                arg[bc * oh * ow + i * ow + j] = best_at as u32;
            }
        }
    }
    Ok((y, arg, oh, ow))
}

pub fn maxpool_backward(
    gy: &[f64],
    arg: &[u32],
    (b, c, h, w): (usize, usize, usize, usize),
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for o in 0..oh * ow {
            gx[bc * h * w + arg[bc * oh * ow + o] as usize] += gy[bc * oh * ow + o];
        }
    }
    gx
}

pub fn avgpool_forward(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    k: usize,
    s: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    if k > h || k > w {
        return Err(Error::InvalidArg(format!("pool kernel {k} exceeds input {h}x{w}")));
    }
    let oh = conv_out(h, k, s, 0)?;
    let ow = conv_out(w, k, s, 0)?;
    let inv = 1.0 / (k * k) as f64;
    let mut y = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        let xp = &x[bc * h * w..(bc + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for ki in 0..k {
                    for kj in 0..k {
                        acc += xp[(i * s + ki) * w + j * s + kj];
                    }
                }
                y[bc * oh * ow + i * ow + j] = acc * inv;
            }
        }
    }
    Ok((y, oh, ow))
}

pub fn avgpool_backward(
    gy: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let inv = 1.0 / (k * k) as f64;
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                let g = gy[bc * oh * ow + i * ow + j] * inv;
                for ki in 0..k {
                    for kj in 0..k {
                        gx[bc * h * w + (i * s + ki) * w + j * s + kj] += g;
                    }
                }
            }
        }
    }
    gx
}

// ---------------------------------------------------------------------------
// batch normalization

/// Per-channel batch normalization over `groups` equal batch blocks.
///
/// `groups > 1` normalizes each block with its own statistics, which makes
/// a batch-tiled multi-font generator pass bit-identical to per-font
/// passes. Running stats are updated sequentially per group in block
/// order. Returned `mean`/`invstd` are `groups * c` long.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
    eps: f64,
    train: bool,
    update_stats: bool,
    groups: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if groups == 0 || b % groups != 0 {
        return Err(Error::InvalidArg(format!("batch {b} not divisible into {groups} groups")));
    }
    let gb = b / groups; // samples per group
    let plane = h * w;
    let n = gb * plane; // reduction size per (group, channel)
    if train && n < 2 {
        return Err(Error::ShapeMismatch(
            "batchnorm train mode needs B*H*W >= 2 (zero variance otherwise)".into(),
        ));
    }
    let mut y = vec![0.0; x.len()];
    let mut means = vec![0.0; groups * c];
    let mut invstds = vec![0.0; groups * c];
    let inv_n = 1.0 / n as f64;
    for g in 0..groups {
        for ci in 0..c {
            let (mean, invstd) = if train {
                let mut acc = 0.0;
                for bi in 0..gb {
                    let base = ((g * gb + bi) * c + ci) * plane;
                    acc += x[base..base + plane].iter().sum::<f64>();
                }
                let mean = acc * inv_n;
                let mut var = 0.0;
                for bi in 0..gb {
                    let base = ((g * gb + bi) * c + ci) * plane;
                    for &v in &x[base..base + plane] {
                        let d = v - mean;
                        var += d * d;
                    }
                }
                var *= inv_n;
                if update_stats {
                    running_mean[ci] = momentum * running_mean[ci] + (1.0 - momentum) * mean;
                    running_var[ci] = momentum * running_var[ci] + (1.0 - momentum) * var;
                }
                (mean, 1.0 / (var + eps).sqrt())
            } else {
                (running_mean[ci], 1.0 / (running_var[ci] + eps).sqrt())
            };
            means[g * c + ci] = mean;
            invstds[g * c + ci] = invstd;
            let scale = gamma[ci] * invstd;
            let shift = beta[ci] - mean * scale;
            for bi in 0..gb {
                let base = ((g * gb + bi) * c + ci) * plane;
                for o in 0..plane {
                    y[base + o] = x[base + o] * scale + shift;
                }
            }
        }
    }
    Ok((y, means, invstds))
}

/// Backward through train-mode normalization (batch statistics are a
/// function of the input).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward_train(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    means: &[f64],
    invstds: &[f64],
    groups: usize,
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let gb = b / groups;
    let plane = h * w;
    let n = (gb * plane) as f64;
    let mut gx = vec![0.0; x.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for g in 0..groups {
        for ci in 0..c {
            let mean = means[g * c + ci];
            let invstd = invstds[g * c + ci];
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for bi in 0..gb {
                let base = ((g * gb + bi) * c + ci) * plane;
                for o in 0..plane {
                    let xhat = (x[base + o] - mean) * invstd;
                    sum_gy += gy[base + o];
                    sum_gy_xhat += gy[base + o] * xhat;
                }
            }
            ggamma[ci] += sum_gy_xhat;
            gbeta[ci] += sum_gy;
            let k = gamma[ci] * invstd;
            for bi in 0..gb {
                let base = ((g * gb + bi) * c + ci) * plane;
                for o in 0..plane {
                    let xhat = (x[base + o] - mean) * invstd;
                    gx[base + o] =
                        k * (gy[base + o] - sum_gy / n - xhat * sum_gy_xhat / n);
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}

/// Backward through eval-mode normalization (running statistics are
/// constants).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward_eval(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    gamma: &[f64],
    means: &[f64],
    invstds: &[f64],
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut gx = vec![0.0; x.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let k = gamma[ci] * invstds[ci];
            for o in 0..plane {
                let xhat = (x[base + o] - means[ci]) * invstds[ci];
                gx[base + o] = gy[base + o] * k;
                ggamma[ci] += gy[base + o] * xhat;
                gbeta[ci] += gy[base + o];
            }
        }
    }
    (gx, ggamma, gbeta)
}

// ---------------------------------------------------------------------------
// dense / losses

/// y[b,o] = x[b,n] * w[n,o] + bias[o]
pub fn linear_forward(x: &[f64], bsz: usize, n: usize, w: &[f64], o: usize, bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; bsz * o];
    for bi in 0..bsz {
        y[bi * o..(bi + 1) * o].copy_from_slice(bias);
    }
    gemm(bsz, n, o, 1.0, x, n as isize, 1, w, o as isize, 1, 1.0, &mut y);
    y
}

pub fn linear_backward(
    x: &[f64],
    bsz: usize,
    n: usize,
    w: &[f64],
    o: usize,
    gy: &[f64],
    need_gx: bool,
    need_gw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let gx = need_gx.then(|| {
        let mut gx = vec![0.0; bsz * n];
        // gx = gy [b,o] * w^T [o,n]
        gemm(bsz, o, n, 1.0, gy, o as isize, 1, w, 1, o as isize, 0.0, &mut gx);
        gx
    });
    let gw = need_gw.then(|| {
        let mut gw = vec![0.0; n * o];
        // gw = x^T [n,b] * gy [b,o]
        gemm(n, bsz, o, 1.0, x, 1, n as isize, gy, o as isize, 1, 0.0, &mut gw);
        gw
    });
    let mut gb = vec![0.0; o];
    for bi in 0..bsz {
        for oi in 0..o {
            gb[oi] += gy[bi * o + oi];
        }
    }
    (gx, gw, gb)
}

/// Mean negative log-likelihood of softmax over the *negated* logits
/// (the e^{-C_y} energy convention). Returns the loss and the probability
/// rows, which are also the backward cache.
pub fn softmax_xent_forward(
    logits: &[f64],
    bsz: usize,
    l: usize,
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if labels.len() != bsz {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch {bsz}",
            labels.len()
        )));
    }
    for &y in labels {
        if y >= l {
            return Err(Error::LabelOutOfRange { got: y, classes: l });
        }
    }
    let mut probs = vec![0.0; bsz * l];
    let mut loss = 0.0;
    for bi in 0..bsz {
        let row = &logits[bi * l..(bi + 1) * l];
        // u = -logits, stabilized by max subtraction
        let umax = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(-v));
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (-v - umax).exp();
            probs[bi * l + j] = e;
            z += e;
        }
        for j in 0..l {
            probs[bi * l + j] /= z;
        }
        loss -= probs[bi * l + labels[bi]].ln();
    }
    Ok((loss / bsz as f64, probs))
}

pub fn softmax_xent_backward(probs: &[f64], bsz: usize, l: usize, labels: &[usize], gout: f64) -> Vec<f64> {
    let scale = gout / bsz as f64;
    let mut g = vec![0.0; bsz * l];
    for bi in 0..bsz {
        for j in 0..l {
            // d(mean nll)/d(logit_j) = (delta_{jy} - p_j) / B
            let delta = if j == labels[bi] { 1.0 } else { 0.0 };
            g[bi * l + j] = scale * (delta - probs[bi * l + j]);
        }
    }
    g
}

/// Numerically stable mean binary cross-entropy on logits against a
/// constant target (0 or 1 for every element).
pub fn bce_logits_forward(logits: &[f64], target: f64) -> f64 {
    let mut loss = 0.0;
    for &v in logits {
        // max(x,0) - x*t + ln(1 + e^{-|x|})
        loss += v.max(0.0) - v * target + (-v.abs()).exp().ln_1p();
    }
    loss / logits.len() as f64
}

pub fn bce_logits_backward(logits: &[f64], target: f64, gout: f64) -> Vec<f64> {
    let scale = gout / logits.len() as f64;
    logits
        .iter()
        .map(|&v| scale * (1.0 / (1.0 + (-v).exp()) - target))
        .collect()
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

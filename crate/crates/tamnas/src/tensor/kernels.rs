//! Raw compute kernels behind the tape operations.
//!
//! All inner products and reductions accumulate in f64 and round to f32 on
//! store, which keeps finite-difference gradient checks well inside their
//! tolerance at 32-bit storage.

/// out[m,n] = a[m,k] . b[k,n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut row = vec![0f64; n];
    for i in 0..m {
        row.iter_mut().for_each(|v| *v = 0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let av = av as f64;
            let b_row = &b[p * n..(p + 1) * n];
            for (acc, &bv) in row.iter_mut().zip(b_row) {
                *acc += av * bv as f64;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(row.iter()) {
            *o = v as f32;
        }
    }
}

/// out[m,n] = a[k,m]^T . b[k,n]
pub fn matmul_at(a: &[f32], b: &[f32], k: usize, m: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0f64; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let av = av as f64;
            let dst = &mut acc[i * n..(i + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(b_row) {
                *d += av * bv as f64;
            }
        }
    }
    for (o, &v) in out.iter_mut().zip(acc.iter()) {
        *o = v as f32;
    }
}

/// out[m,n] = a[m,k] . b[n,k]^T
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0f64;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av as f64 * bv as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
}

/// Spatial size after convolution.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// im2col for one sample: input (c,h,w) -> cols (c*k*k, oh*ow).
pub fn im2col(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [f32],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let span = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * span;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let base = row + oy * ow;
                    if iy < 0 || iy >= h as isize {
                        cols[base..base + ow].fill(0.0);
                        continue;
                    }
                    let in_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        cols[base + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            input[in_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of column gradients back to the input image (one sample).
pub fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dinput: &mut [f32],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let span = oh * ow;
    let mut acc = vec![0f64; c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * span;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc[in_row + ix as usize] += cols[row + oy * ow + ox] as f64;
                    }
                }
            }
        }
    }
    for (d, &v) in dinput.iter_mut().zip(acc.iter()) {
        *d = v as f32;
    }
}

/// Depthwise convolution forward for one sample, weight (c,1,k,k).
pub fn depthwise_forward(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: Option<&[f32]>,
    k: usize,
    stride: usize,
    pad: usize,
    out: &mut [f32],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    for ci in 0..c {
        let wbase = ci * k * k;
        let b = bias.map_or(0.0, |b| b[ci]) as f64;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += input[(ci * h + iy as usize) * w + ix as usize] as f64
                            * weight[wbase + ky * k + kx] as f64;
                    }
                }
                out[(ci * oh + oy) * ow + ox] = acc as f32;
            }
        }
    }
}

/// Depthwise backward for one sample. `dweight`/`dbias` are f64 accumulators
/// shared across the batch; `dinput` is per-sample.
#[allow(clippy::too_many_arguments)]
pub fn depthwise_backward(
    input: &[f32],
    weight: &[f32],
    dout: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dinput: &mut [f64],
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let mut dbias = dbias;
    for ci in 0..c {
        let wbase = ci * k * k;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(ci * oh + oy) * ow + ox] as f64;
                if let Some(db) = dbias.as_deref_mut() {
                    db[ci] += g;
                }
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let iidx = (ci * h + iy as usize) * w + ix as usize;
                        dinput[iidx] += g * weight[wbase + ky * k + kx] as f64;
                        dweight[wbase + ky * k + kx] += g * input[iidx] as f64;
                    }
                }
            }
        }
    }
}

/// Numerically-stable log-softmax of one row.
pub fn log_softmax_row(row: &[f32], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut denom = 0f64;
    for &v in row {
        denom += ((v as f64) - max).exp();
    }
    let log_denom = denom.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v as f64) - max - log_denom;
    }
}

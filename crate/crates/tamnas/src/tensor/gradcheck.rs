//! Central finite-difference oracle for gradient verification.
//!
//! Kept independent of the tape's backward rules: it only re-runs forward
//! passes through a caller-supplied closure. Differences are taken against
//! the step that actually materialized in f32, which removes quantization
//! bias from the quotient.

/// Central difference of a scalar function at every coordinate of `x`.
pub fn central_diff<F: FnMut(&[f32]) -> f64>(x: &[f32], mut f: F, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            let up = (orig as f64 + h) as f32;
            let down = (orig as f64 - h) as f32;
            xp[i] = up;
            let fp = f(&xp);
            xp[i] = down;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (up as f64 - down as f64)
        })
        .collect()
}

/// Central difference restricted to the given coordinates.
pub fn central_diff_at<F: FnMut(&[f32]) -> f64>(
    x: &[f32],
    coords: &[usize],
    mut f: F,
    h: f64,
) -> Vec<f64> {
    let mut xp = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = x[i];
            let up = (orig as f64 + h) as f32;
            let down = (orig as f64 - h) as f32;
            xp[i] = up;
            let fp = f(&xp);
            xp[i] = down;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (up as f64 - down as f64)
        })
        .collect()
}

/// Central difference with a validity mask for piecewise-smooth functions.
///
/// At each coordinate the quotient is evaluated with steps `h` and `h/2`;
/// when the two disagree, the function has a kink (or severe curvature)
/// inside the probe interval and the finite-difference oracle is not a
/// valid reference there. Returns `(estimate, valid)` per coordinate.
pub fn central_diff_masked<F: FnMut(&[f32]) -> f64>(
    x: &[f32],
    coords: &[usize],
    mut f: F,
    h: f64,
) -> (Vec<f64>, Vec<bool>) {
    let mut xp = x.to_vec();
    let mut est = Vec::with_capacity(coords.len());
    let mut valid = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        let mut probe = |step: f64| {
            let up = (orig as f64 + step) as f32;
            let down = (orig as f64 - step) as f32;
            xp[i] = up;
            let fp = f(&xp);
            xp[i] = down;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (up as f64 - down as f64)
        };
        let full = probe(h);
        let half = probe(h / 2.0);
        let agree = (full - half).abs() <= 0.05 * full.abs().max(half.abs()).max(1e-4);
        est.push(half);
        valid.push(agree);
    }
    (est, valid)
}

/// Central difference over a piecewise-smooth function with an explicit
/// kink witness.
///
/// The closure returns the loss and a signature of the active smoothness
/// region (relu sign pattern). A coordinate is valid only when both probe
/// points share the signature — the segment between them is smooth — and
/// the `h` / `h/2` quotients agree, which guards the remaining curvature
/// and noise failure modes.
pub fn central_diff_kinked<F: FnMut(&[f32]) -> (f64, u64)>(
    x: &[f32],
    coords: &[usize],
    mut f: F,
    h: f64,
) -> (Vec<f64>, Vec<bool>) {
    let mut xp = x.to_vec();
    let mut est = Vec::with_capacity(coords.len());
    let mut valid = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        let mut probe = |step: f64| {
            let up = (orig as f64 + step) as f32;
            let down = (orig as f64 - step) as f32;
            xp[i] = up;
            let (fp, sig_p) = f(&xp);
            xp[i] = down;
            let (fm, sig_m) = f(&xp);
            xp[i] = orig;
            ((fp - fm) / (up as f64 - down as f64), sig_p == sig_m)
        };
        let (full, smooth_full) = probe(h);
        let (half, smooth_half) = probe(h / 2.0);
        let agree = (full - half).abs() <= 0.05 * full.abs().max(half.abs()).max(1e-4);
        // Richardson extrapolation cancels the h^2 truncation term
        est.push((4.0 * half - full) / 3.0);
        valid.push(smooth_full && smooth_half && agree);
    }
    (est, valid)
}

/// Relative error between an analytic gradient and the numeric one,
/// measured in the 2-norm: ||a - n|| / max(||a||, ||n||, eps).
pub fn rel_error(analytic: &[f32], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff = 0f64;
    let mut na = 0f64;
    let mut nn = 0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let a = a as f64;
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}

/// Default step size for the finite-difference oracle.
pub const FD_STEP: f64 = 1e-3;

/// Default acceptance threshold for gradient checks.
pub const FD_TOL: f64 = 1e-3;

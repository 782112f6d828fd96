use nalgebra::DMatrix;

use super::Signal;
use crate::error::{config, input, Result};

/// Projection ("hat") matrix of a least-squares polynomial fit over `window`
/// equally spaced points. Row `i` holds the weights giving the fitted value at
/// position `i` of the window.
fn hat_matrix(window: usize, poly_order: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let scale = if half > 0.0 { half } else { 1.0 };
    let design = DMatrix::from_fn(window, poly_order + 1, |i, j| {
        ((i as f64 - half) / scale).powi(j as i32)
    });
    let pinv = design
        .clone()
        .pseudo_inverse(1e-12)
        .expect("SVD of a Vandermonde design matrix");
    &design * pinv
}

/// Savitzky-Golay smoothing. Interior samples use the centred least-squares
/// fit; the first and last `window / 2` samples are evaluated from the
/// polynomial fitted to the first or last full window, so polynomials of degree
/// `<= poly_order` are reproduced everywhere.
pub fn savitzky_golay(s: &Signal, window: usize, poly_order: usize) -> Result<Signal> {
    if window == 0 || window.is_multiple_of(2) {
        return config(format!("window must be a positive odd integer, got {window}"));
    }
    if poly_order >= window {
        return config(format!("poly_order {poly_order} must be smaller than window {window}"));
    }
    let x = s.samples();
    let n = x.len();
    if n < window {
        return input(format!("signal of length {n} shorter than window {window}"));
    }
    let hat = hat_matrix(window, poly_order);
    let half = window / 2;
    let apply = |row: usize, start: usize| -> f64 {
        (0..window).map(|k| hat[(row, k)] * x[start + k]).sum()
    };

    let mut y = vec![0.0; n];
    for (i, v) in y.iter_mut().enumerate() {
        *v = if i < half {
            apply(i, 0)
        } else if i + half >= n {
            apply(i + window - n, n - window)
        } else {
            apply(half, i - half)
        };
    }
    Ok(s.with_samples(y))
}

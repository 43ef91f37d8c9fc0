//! Central finite differences for checking analytic gradients.

use ndarray::Array2;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of a function of a matrix.
pub fn central_difference_matrix<F: FnMut(&Array2<f64>) -> f64>(mut f: F, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let shape = x.raw_dim();
    let flat: Vec<f64> = x.iter().copied().collect();
    let g = central_difference(
        |p| f(&Array2::from_shape_vec(shape, p.to_vec()).expect("same shape")),
        &flat,
        h,
    );
    Array2::from_shape_vec(shape, g).expect("same shape")
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms
/// vanish.
pub fn relative_error<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    let scale = na.max(nb).sqrt();
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}

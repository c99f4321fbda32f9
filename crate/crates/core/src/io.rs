//! Plain-text output helpers shared by the experiment runner.

use nalgebra::DMatrix;

/// Round-trippable decimal with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn csv_row<I: IntoIterator<Item = f64>>(values: I) -> String {
    values.into_iter().map(fmt17).collect::<Vec<_>>().join(",")
}

/// Row-major CSV of a matrix, one line per row.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        out.push_str(&csv_row((0..m.ncols()).map(|j| m[(i, j)])));
        out.push('\n');
    }
    out
}

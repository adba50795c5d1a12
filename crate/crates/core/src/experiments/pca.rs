use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Coordinates of each point on the leading principal components.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `n × k`, row `i` holds point `i`.
    pub coords: Matrix,
    /// Fraction of the total variance carried by each component.
    pub explained: Vec<f64>,
}

/// PCA over flattened matrices, computed through the `n × n` Gram matrix of
/// the centered points so the cost does not grow with the matrix size.
pub fn principal_components(points: &[Matrix], k: usize) -> Result<Projection> {
    let n = points.len();
    if n < 2 {
        return Err(Error::arg("PCA needs at least two points"));
    }
    let shape = points[0].shape();
    if points.iter().any(|p| p.shape() != shape) {
        return Err(Error::arg("PCA points differ in shape"));
    }
    let k = k.min(n - 1);
    let mean = points.iter().fold(Matrix::zeros(shape.0, shape.1), |acc, p| acc + p) / n as f64;
    let centered: Vec<Matrix> = points.iter().map(|p| p - &mean).collect();
    let gram = Matrix::from_fn(n, n, |i, j| centered[i].dot(&centered[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut coords = Matrix::zeros(n, k);
    let mut explained = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let lam = eig.eigenvalues[idx].max(0.0);
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        if v.iter().fold(0.0f64, |m, x| if x.abs() > m.abs() { *x } else { m }) < 0.0 {
            v = -v;
        }
        coords.set_column(c, &(v * lam.sqrt()));
        explained.push(if total > 0.0 { lam / total } else { 0.0 });
    }
    Ok(Projection { coords, explained })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_on_a_line() {
        let dir = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -2.0, 1.0]) / 10f64.sqrt();
        let pts: Vec<Matrix> = [0.0, 1.0, 3.0].iter().map(|t| &dir * *t).collect();
        let p = principal_components(&pts, 2).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
        let c = p.coords.column(0);
        assert!(((c[2] - c[0]).abs() - 3.0).abs() < 1e-12);
        assert!(((c[1] - c[0]).abs() - 1.0).abs() < 1e-12);
        assert!(p.coords.column(1).amax() < 1e-7);
    }
}

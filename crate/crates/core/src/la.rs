//! Tiny dense helpers for the 3-vector work the models do.

use nalgebra::DVector;

pub fn cross3(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(a.len(), 3);
    debug_assert_eq!(b.len(), 3);
    DVector::from_row_slice(&[
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

pub fn unit3(i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(3);
    e[i] = 1.0;
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_products_of_basis_vectors() {
        assert_eq!(cross3(&unit3(0), &unit3(1)), unit3(2));
        assert_eq!(cross3(&unit3(1), &unit3(2)), unit3(0));
        assert_eq!(cross3(&unit3(2), &unit3(0)), unit3(1));
        assert_eq!(cross3(&unit3(1), &unit3(0)), -unit3(2));
    }
}

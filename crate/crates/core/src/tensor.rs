//! Small dense rank-3 and rank-4 arrays used for structure functions and
//! their residuals. Row-major storage, no arithmetic beyond what the
//! structure-equation code needs.

/// Dense rank-3 array with independent extents, indexed `(a, b, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    /// Cubic array of extent `k` in each slot, the shape of structure
    /// functions `C_ab^c`.
    pub fn cube(k: usize) -> Self {
        Self::zeros((k, k, k))
    }

    pub fn from_fn(dims: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        for a in 0..dims.0 {
            for b in 0..dims.1 {
                for c in 0..dims.2 {
                    t.set(a, b, c, f(a, b, c));
                }
            }
        }
        t
    }

    /// The Levi-Civita symbol ε_abc on three indices.
    pub fn levi_civita() -> Self {
        let mut t = Self::cube(3);
        t.set(0, 1, 2, 1.0);
        t.set(1, 2, 0, 1.0);
        t.set(2, 0, 1, 1.0);
        t.set(1, 0, 2, -1.0);
        t.set(2, 1, 0, -1.0);
        t.set(0, 2, 1, -1.0);
        t
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn index(&self, a: usize, b: usize, c: usize) -> usize {
        debug_assert!(a < self.dims.0 && b < self.dims.1 && c < self.dims.2);
        (a * self.dims.1 + b) * self.dims.2 + c
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[self.index(a, b, c)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, value: f64) {
        let i = self.index(a, b, c);
        self.data[i] = value;
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest |C_abc + C_bac| over all entries, with the offending index
    /// triple. Only meaningful for cubic arrays.
    pub fn max_antisymmetry_defect(&self) -> (f64, (usize, usize, usize)) {
        let (k, _, _) = self.dims;
        let mut worst = (0.0f64, (0, 0, 0));
        for a in 0..k {
            for b in 0..k {
                for c in 0..k {
                    let d = (self.get(a, b, c) + self.get(b, a, c)).abs();
                    if d > worst.0 {
                        worst = (d, (a, b, c));
                    }
                }
            }
        }
        worst
    }
}

/// Dense rank-4 array, used for the Jacobi residual `J_abc^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dim: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn index(&self, a: usize, b: usize, c: usize, d: usize) -> usize {
        ((a * self.dim + b) * self.dim + c) * self.dim + d
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[self.index(a, b, c, d)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, value: f64) {
        let i = self.index(a, b, c, d);
        self.data[i] = value;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levi_civita_is_antisymmetric() {
        let eps = Tensor3::levi_civita();
        let (defect, _) = eps.max_antisymmetry_defect();
        assert_eq!(defect, 0.0);
        assert_eq!(eps.get(0, 1, 2), 1.0);
        assert_eq!(eps.get(2, 1, 0), -1.0);
        assert_eq!(eps.get(0, 0, 1), 0.0);
    }

    #[test]
    fn rectangular_indexing_round_trips() {
        let mut t = Tensor3::zeros((2, 3, 4));
        t.set(1, 2, 3, 7.5);
        t.set(0, 0, 0, -1.0);
        assert_eq!(t.get(1, 2, 3), 7.5);
        assert_eq!(t.get(0, 0, 0), -1.0);
        assert_eq!(t.max_abs(), 7.5);
    }
}

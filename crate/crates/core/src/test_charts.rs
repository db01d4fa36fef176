//! Chart fixtures shared by unit tests. Defined independently of the model
//! zoo so the structure-equation tests do not lean on the code they help
//! certify.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::chart::{AlgebroidChart, DomainBox};
use crate::la::{cross3, unit3};
use crate::tensor::Tensor3;

/// so(3) as a Lie algebra chart: point base, `C = epsilon`.
pub fn so3_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        0,
        3,
        DomainBox::point(),
        Arc::new(|_x: &DVector<f64>| DMatrix::zeros(0, 3)),
        Arc::new(|_x: &DVector<f64>| Tensor3::levi_civita()),
    )
    .with_analytic_derivatives(Arc::new(|_x| Vec::new()), Arc::new(|_x| Vec::new()))
}

fn action_anchor(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, a| cross3(&unit3(a), x)[i])
}

fn action_anchor_dx(_x: &DVector<f64>) -> Vec<DMatrix<f64>> {
    (0..3)
        .map(|m| DMatrix::from_fn(3, 3, |i, a| cross3(&unit3(a), &unit3(m))[i]))
        .collect()
}

/// The action algebroid of so(3) acting on R^3 by rotations: anchor
/// `rho(x) xi = xi x x`, structure constants `C = -epsilon`. The sign of C
/// is forced by compatibility with this anchor under the crate's bracket
/// convention: `[rho_a, rho_b] = x x (e_a x e_b) = -epsilon_ab^c rho_c`.
pub fn action_so3_r3_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        3,
        3,
        DomainBox::cube(3, -4.0, 4.0),
        Arc::new(action_anchor),
        Arc::new(|_x: &DVector<f64>| Tensor3::levi_civita().scale(-1.0)),
    )
    .with_analytic_derivatives(
        Arc::new(action_anchor_dx),
        Arc::new(|_x| vec![Tensor3::cube(3); 3]),
    )
}

/// The action chart with the `(1,2) -> 3` structure slot zeroed out (both
/// antisymmetric partners). Still antisymmetric, no longer compatible with
/// the anchor.
pub fn corrupted_action_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        3,
        3,
        DomainBox::cube(3, -4.0, 4.0),
        Arc::new(action_anchor),
        Arc::new(|_x: &DVector<f64>| {
            let mut c = Tensor3::levi_civita().scale(-1.0);
            c.set(0, 1, 2, 0.0);
            c.set(1, 0, 2, 0.0);
            c
        }),
    )
    .with_analytic_derivatives(
        Arc::new(action_anchor_dx),
        Arc::new(|_x| vec![Tensor3::cube(3); 3]),
    )
}

fn tangent_1d(domain: DomainBox) -> AlgebroidChart {
    AlgebroidChart::new(
        1,
        1,
        domain,
        Arc::new(|_x: &DVector<f64>| DMatrix::from_element(1, 1, 1.0)),
        Arc::new(|_x: &DVector<f64>| Tensor3::cube(1)),
    )
    .with_analytic_derivatives(
        Arc::new(|_x| vec![DMatrix::zeros(1, 1)]),
        Arc::new(|_x| vec![Tensor3::cube(1)]),
    )
}

/// Tangent algebroid of the unit interval, the pair-groupoid chart of the
/// habitat model.
pub fn pair_groupoid_1d_chart() -> AlgebroidChart {
    tangent_1d(DomainBox::new(vec![(0.0, 1.0)]))
}

pub fn habitat_chart() -> AlgebroidChart {
    pair_groupoid_1d_chart()
}

/// Same tangent chart over a wider box, for oscillator runs.
pub fn canonical_1d_chart() -> AlgebroidChart {
    tangent_1d(DomainBox::new(vec![(-2.0, 2.0)]))
}

/// Rank-2 algebroid over R with `[e0, e1] = x e1` and anchor
/// `rho(e0) = d/dx`, `rho(e1) = 0`: a genuine algebroid whose Jacobi
/// residual needs the base-derivative term to cancel.
pub fn solvable_rank2_chart() -> AlgebroidChart {
    AlgebroidChart::new(
        1,
        2,
        DomainBox::new(vec![(-1.0, 1.0)]),
        Arc::new(|_x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
        Arc::new(|x: &DVector<f64>| {
            let mut c = Tensor3::cube(2);
            c.set(0, 1, 1, x[0]);
            c.set(1, 0, 1, -x[0]);
            c
        }),
    )
    .with_analytic_derivatives(
        Arc::new(|_x| vec![DMatrix::zeros(1, 2)]),
        Arc::new(|_x| {
            let mut dc = Tensor3::cube(2);
            dc.set(0, 1, 1, 1.0);
            dc.set(1, 0, 1, -1.0);
            vec![dc]
        }),
    )
}

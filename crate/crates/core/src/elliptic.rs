//! Dirichlet solves on the domain grid, the Dirichlet correctors of the
//! oscillating operator, initial-data matching between the eps- and
//! homogenized operators, and the negative-norm evaluator.

use crate::cell::HomogenizedTensor;
use crate::coeff::PeriodicCoefficientField;
use crate::fem::{boundary_gradient, DirichletOperator, Grid, TensorField};
use crate::{Error, Result};
use rayon::prelude::*;

/// Solve -div(a grad u) = F, u = g on the boundary. `f_nodal` is a nodal
/// density; the load is formed with the lumped (trapezoid) weights.
pub fn solve_dirichlet(
    grid: &Grid,
    a: &TensorField,
    f_nodal: &[f64],
    g: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    if f_nodal.len() != grid.num_nodes() || g.len() != grid.num_nodes() {
        return Err(Error::invalid("field length does not match the grid"));
    }
    let w = grid.node_weights();
    let rhs: Vec<f64> = f_nodal.iter().zip(&w).map(|(f, w)| f * w).collect();
    let op = DirichletOperator::new(grid.clone(), a);
    op.solve(&rhs, g, tol)
}

/// The d harmonic coordinates of the oscillating operator: solutions of
/// L_eps Phi_j = 0 with Phi_j = x_j on the boundary.
pub struct DirichletCorrector {
    pub grid: Grid,
    pub eps: f64,
    /// nodal Phi_j, one per direction
    pub phi: Vec<Vec<f64>>,
    /// observed sup norms ||Phi_j - x_j||_inf
    pub sup_norms: Vec<f64>,
    /// min over boundary nodes of |det grad Phi|
    pub min_boundary_det: f64,
    /// set when det grad Phi loses positivity at some boundary node
    pub det_warning: Option<String>,
}

pub fn dirichlet_correctors(
    field: &PeriodicCoefficientField,
    eps: f64,
    grid: &Grid,
    tol: f64,
) -> Result<DirichletCorrector> {
    let a = crate::coeff::sample_epsilon(field, eps, grid)?;
    if let Some(w) = &a.warning {
        return Err(Error::invalid(w.clone()));
    }
    let op = DirichletOperator::new(grid.clone(), &a);
    let d = grid.d;
    let zero = vec![0.0; grid.num_nodes()];
    let phi: Result<Vec<Vec<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let g: Vec<f64> = (0..grid.num_nodes()).map(|i| grid.node_coords(i)[j]).collect();
            op.solve(&zero, &g, tol)
        })
        .collect();
    let phi = phi?;
    let sup_norms: Vec<f64> = (0..d)
        .map(|j| {
            (0..grid.num_nodes())
                .map(|i| (phi[j][i] - grid.node_coords(i)[j]).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut min_det = f64::INFINITY;
    let mut signed_min = f64::INFINITY;
    for idx in grid.boundary_nodes() {
        let g0 = boundary_gradient(grid, &phi[0], idx);
        let det = if d == 1 {
            g0[0]
        } else {
            let g1 = boundary_gradient(grid, &phi[1], idx);
            // columns are grad Phi_j
            g0[0] * g1[1] - g1[0] * g0[1]
        };
        min_det = min_det.min(det.abs());
        signed_min = signed_min.min(det);
    }
    let det_warning = if signed_min <= 0.0 {
        Some(format!(
            "det grad Phi reaches {signed_min:.3e} on the boundary; positivity is only guaranteed for Lipschitz coefficients on smooth domains"
        ))
    } else {
        None
    };
    Ok(DirichletCorrector {
        grid: grid.clone(),
        eps,
        phi,
        sup_norms,
        min_boundary_det: min_det,
        det_warning,
    })
}

/// Given data for the oscillating operator, produce the matched data of
/// the homogenized operator: solve L_0 phi_0 = L_eps phi_eps0 with zero
/// boundary values.
pub fn match_initial_data(
    grid: &Grid,
    a_eps: &TensorField,
    hat: &HomogenizedTensor,
    phi_eps0: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if phi_eps0.len() != grid.num_nodes() {
        return Err(Error::invalid("field length does not match the grid"));
    }
    let scale = phi_eps0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for idx in grid.boundary_nodes() {
        if phi_eps0[idx].abs() > 1e-10 * scale {
            return Err(Error::invalid("matched data must vanish on the boundary"));
        }
    }
    let op_eps = DirichletOperator::new(grid.clone(), a_eps);
    let rhs = op_eps.k.apply(phi_eps0);
    let a0 = TensorField::constant(grid.d, hat.a, grid);
    let op0 = DirichletOperator::new(grid.clone(), &a0);
    op0.solve(&rhs, &vec![0.0; grid.num_nodes()], tol)
}

/// Negative-norm of a nodal density f through the Dirichlet Laplacian:
/// the energy norm ||grad z|| of -Laplace z = f, z = 0 on the boundary.
pub fn h_minus1_norm(grid: &Grid, f_nodal: &[f64], tol: f64) -> Result<f64> {
    let w = grid.node_weights();
    let load: Vec<f64> = f_nodal.iter().zip(&w).map(|(f, w)| f * w).collect();
    h_minus1_norm_of_load(grid, &load, tol)
}

/// Same, for an already-assembled weak load (a functional on nodal test
/// functions), which is the natural input when the argument is an
/// operator residual like L_eps(phi_eps0) - L_0(phi_0).
pub fn h_minus1_norm_of_load(grid: &Grid, load: &[f64], tol: f64) -> Result<f64> {
    let lap = TensorField::identity(grid.d, grid);
    let op = DirichletOperator::new(grid.clone(), &lap);
    let z = op.solve(load, &vec![0.0; grid.num_nodes()], tol)?;
    Ok(op.k.quad_form(&z).max(0.0).sqrt())
}

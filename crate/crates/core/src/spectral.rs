//! Dirichlet eigenpairs of the elliptic operator on the domain grid, the
//! low-frequency filtered subspace, projections onto it, and the
//! frequency threshold used by the filtered experiments.

use crate::fem::{boundary_grad_sq, cg, DirichletOperator, Face, Grid, TensorField};
use crate::{Error, Result};

/// Dirichlet eigenpairs, ordered by eigenvalue; eigenfields are nodal,
/// zero at boundary nodes, orthonormal in the lumped-mass inner product.
#[derive(Clone)]
pub struct EigenBasis {
    pub grid: Grid,
    pub lambdas: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
    /// max |<psi_j, psi_k> - delta_jk| over computed pairs
    pub ortho_defect: f64,
    /// max over modes of ||K psi - lambda M psi|| / lambda (interior rows)
    pub eigen_residual: f64,
    /// per-mode boundary integral of |grad psi|^2
    pub boundary_grad_sq: Vec<f64>,
}

/// Coefficients of filtered data against modes with lambda_k <= N.
#[derive(Debug, Clone)]
pub struct FilteredData {
    pub threshold: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// N = C0 * T^(-2/3) * eps^(-2/3).
pub fn frequency_threshold(eps: f64, t: f64, c0: f64) -> f64 {
    assert!(eps > 0.0 && t > 0.0 && c0 > 0.0);
    c0 * t.powf(-2.0 / 3.0) * eps.powf(-2.0 / 3.0)
}

/// Lumped-mass inner product over all nodes.
pub fn mass_dot(grid: &Grid, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    let _ = grid;
    u.iter().zip(v).zip(w).map(|((u, v), w)| u * v * w).sum()
}

/// Compute the lowest `count` Dirichlet eigenpairs of -div(a grad .).
/// Dense symmetric solve for desk-scale grids, shift-invert iteration
/// with deflation when the grid is too large to densify.
pub fn eigenpairs(grid: &Grid, a: &TensorField, count: usize, tol: f64) -> Result<EigenBasis> {
    let op = DirichletOperator::new(grid.clone(), a);
    let m = op.interior.len();
    if count == 0 || 4 * count > m {
        return Err(Error::invalid(format!(
            "requested {count} modes on {m} interior nodes; need count <= interior/4"
        )));
    }
    let w = grid.node_weights();
    let (lams, vecs) = if m <= 2400 {
        dense_eigen(&op, &w, count)
    } else {
        shift_invert_eigen(&op, &w, count, tol)?
    };
    // expand to full nodal vectors and normalize in the lumped mass
    let mut psi = Vec::with_capacity(count);
    for v in &vecs {
        let mut full = vec![0.0; grid.num_nodes()];
        for (ii, &idx) in op.interior.iter().enumerate() {
            full[idx] = v[ii];
        }
        let nrm = mass_dot(grid, &full, &full, &w).sqrt();
        for x in full.iter_mut() {
            *x /= nrm;
        }
        // sign convention: first nonzero interior value positive
        if let Some(&idx) = op.interior.iter().find(|&&i| full[i].abs() > 1e-12) {
            if full[idx] < 0.0 {
                for x in full.iter_mut() {
                    *x = -*x;
                }
            }
        }
        psi.push(full);
    }
    let mut ortho = 0.0f64;
    for j in 0..count {
        for k in j..count {
            let d = mass_dot(grid, &psi[j], &psi[k], &w) - if j == k { 1.0 } else { 0.0 };
            ortho = ortho.max(d.abs());
        }
    }
    let mut resid = 0.0f64;
    for (lam, p) in lams.iter().zip(&psi) {
        let kp = op.k.apply(p);
        let mut r2 = 0.0;
        for &idx in &op.interior {
            let r = kp[idx] - lam * w[idx] * p[idx];
            r2 += r * r;
        }
        resid = resid.max(r2.sqrt() / lam.max(1.0));
    }
    let faces = Face::all(grid.d);
    let boundary = psi.iter().map(|p| boundary_grad_sq(grid, p, &faces)).collect();
    Ok(EigenBasis {
        grid: grid.clone(),
        lambdas: lams,
        psi,
        ortho_defect: ortho,
        eigen_residual: resid,
        boundary_grad_sq: boundary,
    })
}

fn dense_eigen(op: &DirichletOperator, w: &[f64], count: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = op.interior.len();
    // B = M^{-1/2} K M^{-1/2} on the interior block
    let mut b = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (ii, &idx) in op.interior.iter().enumerate() {
        let start = op.k.indptr[idx];
        let end = op.k.indptr[idx + 1];
        for p in start..end {
            let col = op.k.indices[p];
            let jj = op.interior_of[col];
            if jj >= 0 {
                let jj = jj as usize;
                b[(ii, jj)] = op.k.data[p] / (w[idx] * w[op.interior[jj]]).sqrt();
            }
        }
    }
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut lams = Vec::with_capacity(count);
    let mut vecs = Vec::with_capacity(count);
    for &oi in order.iter().take(count) {
        lams.push(eig.eigenvalues[oi]);
        // back-transform: psi = M^{-1/2} y
        let v: Vec<f64> = (0..m)
            .map(|ii| eig.eigenvectors[(ii, oi)] / w[op.interior[ii]].sqrt())
            .collect();
        vecs.push(v);
    }
    (lams, vecs)
}

/// Inverse-power iteration on K psi = lambda M psi with M-orthogonal
/// deflation of converged modes; inner solves by preconditioned CG.
fn shift_invert_eigen(
    op: &DirichletOperator,
    w: &[f64],
    count: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = op.interior.len();
    let wi: Vec<f64> = op.interior.iter().map(|&idx| w[idx]).collect();
    let diag = op.interior_diag();
    let mdot = |u: &[f64], v: &[f64]| -> f64 {
        u.iter().zip(v).zip(&wi).map(|((u, v), w)| u * v * w).sum()
    };
    let mut lams = Vec::with_capacity(count);
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    // deterministic pseudo-random start vector
    let mut x: Vec<f64> = (0..m).map(|i| ((i * 2654435761 + 1) % 1000) as f64 / 1000.0 - 0.5).collect();
    for _ in 0..count {
        let deflate = |v: &mut Vec<f64>| {
            for prev in &vecs {
                let c = mdot(v, prev);
                for (vi, pi) in v.iter_mut().zip(prev) {
                    *vi -= c * pi;
                }
            }
        };
        deflate(&mut x);
        let mut lam_old = f64::INFINITY;
        let mut lam = 0.0;
        for _iter in 0..500 {
            let nrm = mdot(&x, &x).sqrt();
            for v in x.iter_mut() {
                *v /= nrm;
            }
            let rhs: Vec<f64> = x.iter().zip(&wi).map(|(x, w)| x * w).collect();
            let mut z = x.clone();
            cg(
                &|u, y| op.apply_interior(u, y),
                &rhs,
                &mut z,
                &diag,
                tol * 1e-2,
                20 * m,
                None,
            )?;
            deflate(&mut z);
            // Rayleigh quotient of the new iterate
            let mut kz = vec![0.0; m];
            op.apply_interior(&z, &mut kz);
            lam = crate::fem::dot(&z, &kz) / mdot(&z, &z);
            x = z;
            if (lam - lam_old).abs() <= tol.max(1e-13) * lam.abs() {
                break;
            }
            lam_old = lam;
        }
        let nrm = mdot(&x, &x).sqrt();
        let v: Vec<f64> = x.iter().map(|v| v / nrm).collect();
        lams.push(lam);
        vecs.push(v.clone());
        // restart direction biased away from the converged mode
        x = v.iter().enumerate().map(|(i, v)| v * ((i % 7) as f64 - 3.0)).collect();
    }
    // converged eigenvalues may come out slightly unordered
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&i, &j| lams[i].total_cmp(&lams[j]));
    Ok((
        order.iter().map(|&i| lams[i]).collect(),
        order.iter().map(|&i| vecs[i].clone()).collect(),
    ))
}

impl EigenBasis {
    /// Number of modes with lambda <= n.
    pub fn dim_below(&self, n: f64) -> usize {
        self.lambdas.iter().filter(|&&l| l <= n).count()
    }

    /// Project (u, v) onto the modes with lambda <= n.
    pub fn project(&self, u: &[f64], v: &[f64], n: f64) -> Result<FilteredData> {
        if n > *self.lambdas.last().unwrap() {
            return Err(Error::invalid(format!(
                "threshold {n} exceeds the largest computed eigenvalue {}; recompute with more modes",
                self.lambdas.last().unwrap()
            )));
        }
        let w = self.grid.node_weights();
        let keep = self.dim_below(n);
        let a = (0..keep).map(|k| mass_dot(&self.grid, u, &self.psi[k], &w)).collect();
        let b = (0..keep).map(|k| mass_dot(&self.grid, v, &self.psi[k], &w)).collect();
        Ok(FilteredData { threshold: n, a, b })
    }

    /// Sum the retained modes back into nodal fields.
    pub fn synthesize(&self, fd: &FilteredData) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.num_nodes();
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        for (k, (&ak, &bk)) in fd.a.iter().zip(&fd.b).enumerate() {
            for i in 0..n {
                u[i] += ak * self.psi[k][i];
                v[i] += bk * self.psi[k][i];
            }
        }
        (u, v)
    }
}

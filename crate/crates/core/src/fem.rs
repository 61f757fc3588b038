//! Uniform-grid Q1 finite element plumbing shared by every solver:
//! grids, sparse matrices, conjugate gradients, assembly with
//! element-midpoint coefficients, gradient recovery and quadrature.

use crate::{Error, Result};

/// Boundary face of an interval or rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Face {
    XLow,
    XHigh,
    YLow,
    YHigh,
}

impl Face {
    pub fn all(d: usize) -> Vec<Face> {
        if d == 1 {
            vec![Face::XLow, Face::XHigh]
        } else {
            vec![Face::XLow, Face::XHigh, Face::YLow, Face::YHigh]
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Face::XLow => [-1.0, 0.0],
            Face::XHigh => [1.0, 0.0],
            Face::YLow => [0.0, -1.0],
            Face::YHigh => [0.0, 1.0],
        }
    }
}

/// Interval (0,L) or rectangle (0,L1)x(0,L2), with an optional observed
/// boundary subset given as a list of faces.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Domain {
    pub d: usize,
    pub lengths: [f64; 2],
    pub gamma: Option<Vec<Face>>,
}

impl Domain {
    pub fn interval(l: f64) -> Domain {
        Domain { d: 1, lengths: [l, 0.0], gamma: None }
    }

    pub fn rectangle(l1: f64, l2: f64) -> Domain {
        Domain { d: 2, lengths: [l1, l2], gamma: None }
    }

    /// Euclidean diameter of the extents.
    pub fn r0(&self) -> f64 {
        if self.d == 1 {
            self.lengths[0]
        } else {
            self.lengths[0].hypot(self.lengths[1])
        }
    }

    pub fn faces(&self) -> Vec<Face> {
        self.gamma.clone().unwrap_or_else(|| Face::all(self.d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridRole {
    /// Periodic grid spanning exactly one unit cell.
    Cell,
    /// Grid on a computational domain, boundary nodes included.
    Domain,
}

/// Uniform tensor-product grid. Domain grids carry `nx` nodes per axis
/// including the two boundary layers; cell grids carry `nx` periodic
/// nodes (= elements) per axis.
#[derive(Debug, Clone)]
pub struct Grid {
    pub role: GridRole,
    pub d: usize,
    pub nx: [usize; 2],
    pub h: [f64; 2],
    pub lengths: [f64; 2],
}

impl Grid {
    pub fn cell(d: usize, n: usize) -> Grid {
        assert!(d == 1 || d == 2);
        let nx = if d == 1 { [n, 1] } else { [n, n] };
        let h = if d == 1 { [1.0 / n as f64, 0.0] } else { [1.0 / n as f64, 1.0 / n as f64] };
        Grid { role: GridRole::Cell, d, nx, h, lengths: [1.0, 1.0] }
    }

    /// Domain grid with `n` elements per axis (so n+1 node layers).
    pub fn domain(domain: &Domain, n: [usize; 2]) -> Grid {
        let d = domain.d;
        let nx = if d == 1 { [n[0] + 1, 1] } else { [n[0] + 1, n[1] + 1] };
        let h = [
            domain.lengths[0] / n[0] as f64,
            if d == 2 { domain.lengths[1] / n[1] as f64 } else { 0.0 },
        ];
        Grid { role: GridRole::Domain, d, nx, h, lengths: domain.lengths }
    }

    pub fn num_nodes(&self) -> usize {
        self.nx[0] * self.nx[1]
    }

    /// Elements per axis.
    pub fn ne(&self) -> [usize; 2] {
        match self.role {
            GridRole::Cell => self.nx,
            GridRole::Domain => {
                if self.d == 1 {
                    [self.nx[0] - 1, 1]
                } else {
                    [self.nx[0] - 1, self.nx[1] - 1]
                }
            }
        }
    }

    pub fn num_elements(&self) -> usize {
        let ne = self.ne();
        ne[0] * ne[1]
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + self.nx[0] * j
    }

    pub fn node_coords(&self, idx: usize) -> [f64; 2] {
        let i = idx % self.nx[0];
        let j = idx / self.nx[0];
        [i as f64 * self.h[0], j as f64 * self.h[1]]
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let ne = self.ne();
        let i = e % ne[0];
        let j = e / ne[0];
        [(i as f64 + 0.5) * self.h[0], if self.d == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 }]
    }

    /// Corner node indices of element `e` (2 in 1d, 4 in 2d, padded with
    /// repeats in 1d). Order: (i,j), (i+1,j), (i,j+1), (i+1,j+1).
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let ne = self.ne();
        let i = e % ne[0];
        let j = e / ne[0];
        match self.role {
            GridRole::Domain => {
                let n00 = self.node_index(i, j);
                let n10 = self.node_index(i + 1, j);
                if self.d == 1 {
                    [n00, n10, n00, n10]
                } else {
                    [n00, n10, self.node_index(i, j + 1), self.node_index(i + 1, j + 1)]
                }
            }
            GridRole::Cell => {
                let ip = (i + 1) % self.nx[0];
                let n00 = self.node_index(i, j);
                let n10 = self.node_index(ip, j);
                if self.d == 1 {
                    [n00, n10, n00, n10]
                } else {
                    let jp = (j + 1) % self.nx[1];
                    [n00, n10, self.node_index(i, jp), self.node_index(ip, jp)]
                }
            }
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        if self.role == GridRole::Cell {
            return false;
        }
        let i = idx % self.nx[0];
        let j = idx / self.nx[0];
        i == 0 || i + 1 == self.nx[0] || (self.d == 2 && (j == 0 || j + 1 == self.nx[1]))
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| self.is_boundary(i)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Faces a boundary node lies on (two at corners).
    pub fn node_faces(&self, idx: usize) -> Vec<Face> {
        let i = idx % self.nx[0];
        let j = idx / self.nx[0];
        let mut f = Vec::new();
        if i == 0 {
            f.push(Face::XLow);
        }
        if i + 1 == self.nx[0] {
            f.push(Face::XHigh);
        }
        if self.d == 2 {
            if j == 0 {
                f.push(Face::YLow);
            }
            if j + 1 == self.nx[1] {
                f.push(Face::YHigh);
            }
        }
        f
    }

    /// Trapezoid weights of the surface measure on the given faces, per
    /// boundary node (zero off the selected faces). In 1d the surface
    /// measure is counting measure on the endpoints.
    pub fn boundary_weights(&self, faces: &[Face]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for idx in self.boundary_nodes() {
            let mut w = 0.0;
            for f in self.node_faces(idx) {
                if !faces.contains(&f) {
                    continue;
                }
                if self.d == 1 {
                    w += 1.0;
                } else {
                    // tangential trapezoid: half weight at face endpoints
                    let i = idx % self.nx[0];
                    let j = idx / self.nx[0];
                    let (t, nt, ht) = match f {
                        Face::XLow | Face::XHigh => (j, self.nx[1], self.h[1]),
                        Face::YLow | Face::YHigh => (i, self.nx[0], self.h[0]),
                    };
                    w += if t == 0 || t + 1 == nt { 0.5 * ht } else { ht };
                }
            }
            if w > 0.0 {
                out.push((idx, w));
            }
        }
        out
    }

    /// Trapezoid quadrature weight per node (the lumped mass).
    pub fn node_weights(&self) -> Vec<f64> {
        let n = self.num_nodes();
        let mut w = vec![0.0; n];
        match self.role {
            GridRole::Cell => {
                let vol = if self.d == 1 { self.h[0] } else { self.h[0] * self.h[1] };
                w.iter_mut().for_each(|x| *x = vol);
            }
            GridRole::Domain => {
                for idx in 0..n {
                    let i = idx % self.nx[0];
                    let j = idx / self.nx[0];
                    let wx = if i == 0 || i + 1 == self.nx[0] { 0.5 } else { 1.0 };
                    let wy = if self.d == 2 && (j == 0 || j + 1 == self.nx[1]) { 0.5 } else { 1.0 };
                    w[idx] = wx * self.h[0] * wy * if self.d == 2 { self.h[1] } else { 1.0 };
                }
            }
        }
        w
    }

    pub fn element_volume(&self) -> f64 {
        if self.d == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Csr {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut row = 0usize;
        let mut k = 0usize;
        while k < triplets.len() {
            let (r, c, mut v) = triplets[k];
            k += 1;
            while k < triplets.len() && triplets[k].0 == r && triplets[k].1 == c {
                v += triplets[k].2;
                k += 1;
            }
            while row < r {
                indptr[row + 1] = indices.len();
                row += 1;
            }
            indices.push(c);
            data.push(v);
        }
        while row < n {
            indptr[row + 1] = indices.len();
            row += 1;
        }
        Csr { n, indptr, indices, data }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.indices[k] == r {
                    d[r] = self.data[k];
                }
            }
        }
        d
    }

    /// Quadratic form x^T A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n {
            let mut row = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                row += self.data[k] * x[self.indices[k]];
            }
            acc += x[r] * row;
        }
        acc
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients with Jacobi preconditioner.
/// `apply_a` must be symmetric positive (semi)definite on the subspace the
/// iteration lives in; `project` (if given) is applied to residuals to keep
/// the iteration on that subspace (used for mean-free periodic solves).
pub fn cg(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    diag: &[f64],
    tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome { iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 0.0 }).collect();
    let mut ax = vec![0.0; n];
    apply_a(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, axi)| bi - axi).collect();
    if let Some(p) = project {
        p(&mut r);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    if let Some(p) = project {
        p(&mut z);
    }
    let mut p_dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= tol * bnorm {
            return Ok(CgOutcome { iterations: it, relative_residual: rnorm / bnorm });
        }
        apply_a(&p_dir, &mut ap);
        let pap = dot(&p_dir, &ap);
        if pap <= 0.0 {
            return Err(Error::Singular(format!("non-positive curvature {pap:.3e} in CG")));
        }
        let alpha = rz / pap;
        axpy(alpha, &p_dir, x);
        axpy(-alpha, &ap, &mut r);
        if let Some(pr) = project {
            pr(&mut r);
        }
        z.iter_mut().zip(r.iter().zip(&inv_diag)).for_each(|(zi, (ri, di))| *zi = ri * di);
        if let Some(pr) = project {
            pr(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p_dir.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let rnorm = dot(&r, &r).sqrt();
    Err(Error::NoConvergence { residual: rnorm / bnorm, iterations: max_iter })
}

/// Symmetric 2x2 tensor sampled per element (element-midpoint evaluation).
#[derive(Debug, Clone)]
pub struct TensorField {
    pub d: usize,
    pub values: Vec<[[f64; 2]; 2]>,
    pub warning: Option<String>,
}

impl TensorField {
    pub fn constant(d: usize, a: [[f64; 2]; 2], grid: &Grid) -> TensorField {
        TensorField { d, values: vec![a; grid.num_elements()], warning: None }
    }

    pub fn identity(d: usize, grid: &Grid) -> TensorField {
        Self::constant(d, [[1.0, 0.0], [0.0, 1.0]], grid)
    }
}

const GP: [f64; 2] = [0.5 - 0.28867513459481287, 0.5 + 0.28867513459481287];

/// Element stiffness for Q1 with a constant coefficient tensor
/// (2x2 Gauss, exact for the per-element constant coefficient).
pub(crate) fn element_stiffness_2d(a: &[[f64; 2]; 2], hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let mut ke = [[0.0; 4]; 4];
    let wq = hx * hy / 4.0;
    for &xi in &GP {
        for &eta in &GP {
            // gradients of the four bilinear basis functions at (xi,eta)
            let g = [
                [-(1.0 - eta) / hx, -(1.0 - xi) / hy],
                [(1.0 - eta) / hx, -xi / hy],
                [-eta / hx, (1.0 - xi) / hy],
                [eta / hx, xi / hy],
            ];
            for p in 0..4 {
                let agp = [
                    a[0][0] * g[p][0] + a[0][1] * g[p][1],
                    a[1][0] * g[p][0] + a[1][1] * g[p][1],
                ];
                for q in 0..4 {
                    ke[q][p] += wq * (agp[0] * g[q][0] + agp[1] * g[q][1]);
                }
            }
        }
    }
    ke
}

/// Assembled stiffness over all nodes of the grid (no boundary
/// elimination; Dirichlet handling is done at solve time).
pub fn assemble_stiffness(grid: &Grid, a: &TensorField) -> Csr {
    let n = grid.num_nodes();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(grid.num_elements() * 16);
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        let av = &a.values[e];
        if grid.d == 1 {
            let k = av[0][0] / grid.h[0];
            let (n0, n1) = (nodes[0], nodes[1]);
            trip.push((n0, n0, k));
            trip.push((n1, n1, k));
            trip.push((n0, n1, -k));
            trip.push((n1, n0, -k));
        } else {
            let ke = element_stiffness_2d(av, grid.h[0], grid.h[1]);
            for p in 0..4 {
                for q in 0..4 {
                    trip.push((nodes[p], nodes[q], ke[p][q]));
                }
            }
        }
    }
    Csr::from_triplets(n, &mut trip)
}

/// Q1 gradients at element centers.
pub fn element_gradients(grid: &Grid, u: &[f64]) -> Vec<[f64; 2]> {
    let mut g = vec![[0.0; 2]; grid.num_elements()];
    for e in 0..grid.num_elements() {
        let nd = grid.element_nodes(e);
        if grid.d == 1 {
            g[e][0] = (u[nd[1]] - u[nd[0]]) / grid.h[0];
        } else {
            g[e][0] = (u[nd[1]] + u[nd[3]] - u[nd[0]] - u[nd[2]]) / (2.0 * grid.h[0]);
            g[e][1] = (u[nd[2]] + u[nd[3]] - u[nd[0]] - u[nd[1]]) / (2.0 * grid.h[1]);
        }
    }
    g
}

/// One-sided second-order difference along the inward direction.
fn one_sided(u0: f64, u1: f64, u2: f64, h: f64) -> f64 {
    (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h)
}

/// Full gradient at a boundary node: one-sided second-order recovery in
/// the normal direction, central (or one-sided at corners) tangentially.
pub fn boundary_gradient(grid: &Grid, u: &[f64], idx: usize) -> [f64; 2] {
    let nx = grid.nx;
    let i = idx % nx[0];
    let j = idx / nx[0];
    let at = |i: usize, j: usize| u[grid.node_index(i, j)];
    let gx = if i == 0 {
        one_sided(at(0, j), at(1, j), at(2, j), grid.h[0])
    } else if i + 1 == nx[0] {
        -one_sided(at(i, j), at(i - 1, j), at(i - 2, j), grid.h[0])
    } else {
        (at(i + 1, j) - at(i - 1, j)) / (2.0 * grid.h[0])
    };
    if grid.d == 1 {
        return [gx, 0.0];
    }
    let gy = if j == 0 {
        one_sided(at(i, 0), at(i, 1), at(i, 2), grid.h[1])
    } else if j + 1 == nx[1] {
        -one_sided(at(i, j), at(i, j - 1), at(i, j - 2), grid.h[1])
    } else {
        (at(i, j + 1) - at(i, j - 1)) / (2.0 * grid.h[1])
    };
    [gx, gy]
}

/// Integral of |grad u|^2 over the selected boundary faces.
pub fn boundary_grad_sq(grid: &Grid, u: &[f64], faces: &[Face]) -> f64 {
    grid.boundary_weights(faces)
        .iter()
        .map(|&(idx, w)| {
            let g = boundary_gradient(grid, u, idx);
            w * (g[0] * g[0] + g[1] * g[1])
        })
        .sum()
}

/// L2 norm of a nodal field by trapezoid quadrature.
pub fn l2_nodal(grid: &Grid, u: &[f64]) -> f64 {
    let w = grid.node_weights();
    dot(u, &u.iter().zip(&w).map(|(ui, wi)| ui * wi).collect::<Vec<_>>()).sqrt()
}

/// L2 norm of an element-centered field (scalar per element).
pub fn l2_elem(grid: &Grid, v: &[f64]) -> f64 {
    (grid.element_volume() * dot(v, v)).sqrt()
}

/// L2 norm of the element-centered gradient of a nodal field.
pub fn grad_l2(grid: &Grid, u: &[f64]) -> f64 {
    let g = element_gradients(grid, u);
    (grid.element_volume() * g.iter().map(|gi| gi[0] * gi[0] + gi[1] * gi[1]).sum::<f64>()).sqrt()
}

/// Fit log(y) = slope * log(x) + intercept by least squares.
/// Returns (slope, intercept, r_squared).
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Dirichlet solve context: stiffness over all nodes plus the
/// interior/boundary split.
pub struct DirichletOperator {
    pub grid: Grid,
    pub k: Csr,
    pub mass: Vec<f64>,
    pub interior: Vec<usize>,
    pub interior_of: Vec<isize>,
}

impl DirichletOperator {
    pub fn new(grid: Grid, a: &TensorField) -> DirichletOperator {
        let k = assemble_stiffness(&grid, a);
        let mass = grid.node_weights();
        let interior = grid.interior_nodes();
        let mut interior_of = vec![-1isize; grid.num_nodes()];
        for (ii, &idx) in interior.iter().enumerate() {
            interior_of[idx] = ii as isize;
        }
        DirichletOperator { grid, k, mass, interior, interior_of }
    }

    /// y_int = (K u)_int where u = x on interior nodes, 0 on the boundary.
    pub fn apply_interior(&self, x: &[f64], y: &mut [f64]) {
        for (ii, &idx) in self.interior.iter().enumerate() {
            let mut acc = 0.0;
            for k in self.k.indptr[idx]..self.k.indptr[idx + 1] {
                let c = self.k.indices[k];
                let ic = self.interior_of[c];
                if ic >= 0 {
                    acc += self.k.data[k] * x[ic as usize];
                }
            }
            y[ii] = acc;
        }
    }

    pub fn interior_diag(&self) -> Vec<f64> {
        let d = self.k.diagonal();
        self.interior.iter().map(|&i| d[i]).collect()
    }

    /// Solve K u = rhs with u = g on the boundary. `rhs_full` is a nodal
    /// functional (already mass-weighted where appropriate); `g` gives
    /// boundary values per node index.
    pub fn solve(&self, rhs_full: &[f64], g: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n_int = self.interior.len();
        let mut b = vec![0.0; n_int];
        // lift: move boundary column contributions to the right-hand side
        for (ii, &idx) in self.interior.iter().enumerate() {
            let mut acc = rhs_full[idx];
            for k in self.k.indptr[idx]..self.k.indptr[idx + 1] {
                let c = self.k.indices[k];
                if self.interior_of[c] < 0 {
                    acc -= self.k.data[k] * g[c];
                }
            }
            b[ii] = acc;
        }
        let mut x = vec![0.0; n_int];
        let diag = self.interior_diag();
        let apply = |v: &[f64], out: &mut [f64]| self.apply_interior(v, out);
        cg(&apply, &b, &mut x, &diag, tol, 40 * n_int + 200, None)?;
        let mut full = g.to_vec();
        for (ii, &idx) in self.interior.iter().enumerate() {
            full[idx] = x[ii];
        }
        Ok(full)
    }
}

//! Periodic coefficient fields A(y) on the unit cell, their standing
//! assumptions (symmetry, ellipticity, periodicity, Lipschitz bound) as
//! checkable invariants, and sampling of A(x/eps) on domain grids.

use crate::fem::{Grid, TensorField};
use crate::{Error, Result};

pub type Matrix = [[f64; 2]; 2];

/// Eigenvalue range of a symmetric 2x2 (or 1x1) matrix.
pub fn sym_eig_range(d: usize, a: &Matrix) -> (f64, f64) {
    if d == 1 {
        return (a[0][0], a[0][0]);
    }
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// How a field is specified: a named preset, closed-form entries, or a
/// gridded table on the unit cell.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldSpec {
    Preset { name: String },
    /// d*d entries row-major by (i,j); variables y1, y2.
    Expressions { d: usize, entries: Vec<String> },
    GriddedFile { path: String },
}

enum FieldKind {
    Constant(Matrix),
    /// 1/(2 + cos 2πy), d = 1.
    Cosine1d,
    /// diag(1/(2 + cos 2πy1), 1), d = 2.
    Laminate2d,
    /// (1.5 + 0.5 cos 2πy1 cos 2πy2) I, d = 2.
    Checker2d,
    /// piecewise-constant laminate: a(y1) = 1/3 on [0,1/2), 1 on [1/2,1), d = 1.
    PiecewiseLaminate1d,
    Expr(Vec<Box<dyn Fn(f64, f64) -> f64>>),
    Gridded { n: [usize; 2], values: Vec<Matrix> },
}

impl std::fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FieldKind::Constant(_) => "Constant",
            FieldKind::Cosine1d => "Cosine1d",
            FieldKind::Laminate2d => "Laminate2d",
            FieldKind::Checker2d => "Checker2d",
            FieldKind::PiecewiseLaminate1d => "PiecewiseLaminate1d",
            FieldKind::Expr(_) => "Expr",
            FieldKind::Gridded { .. } => "Gridded",
        };
        write!(f, "{name}")
    }
}

/// The matrix A(y) with its ellipticity constant mu and Lipschitz
/// constant M, 1-periodic on the unit cell.
#[derive(Debug)]
pub struct PeriodicCoefficientField {
    pub d: usize,
    pub mu: f64,
    pub lip: f64,
    /// false for piecewise-constant media (excluded from the Lipschitz-
    /// coefficient experiments).
    pub smooth: bool,
    kind: FieldKind,
}

const TAU: f64 = std::f64::consts::TAU;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl PeriodicCoefficientField {
    /// Evaluate A at a point of the unit cell (input wrapped periodically).
    pub fn eval(&self, y: [f64; 2]) -> Matrix {
        let y1 = frac(y[0]);
        let y2 = frac(y[1]);
        match &self.kind {
            FieldKind::Constant(a) => *a,
            FieldKind::Cosine1d => {
                let v = 1.0 / (2.0 + (TAU * y1).cos());
                [[v, 0.0], [0.0, 0.0]]
            }
            FieldKind::Laminate2d => {
                let v = 1.0 / (2.0 + (TAU * y1).cos());
                [[v, 0.0], [0.0, 1.0]]
            }
            FieldKind::Checker2d => {
                let v = 1.5 + 0.5 * (TAU * y1).cos() * (TAU * y2).cos();
                [[v, 0.0], [0.0, v]]
            }
            FieldKind::PiecewiseLaminate1d => {
                let v = if y1 < 0.5 { 1.0 / 3.0 } else { 1.0 };
                [[v, 0.0], [0.0, 0.0]]
            }
            FieldKind::Expr(fns) => {
                let mut a = [[0.0; 2]; 2];
                for i in 0..self.d {
                    for j in 0..self.d {
                        a[i][j] = fns[i * self.d + j](y1, y2);
                    }
                }
                a
            }
            FieldKind::Gridded { n, values } => {
                // bilinear interpolation with periodic wrap
                let fx = y1 * n[0] as f64;
                let i0 = fx.floor() as usize % n[0];
                let tx = fx - fx.floor();
                let i1 = (i0 + 1) % n[0];
                if self.d == 1 {
                    let mut a = [[0.0; 2]; 2];
                    a[0][0] = (1.0 - tx) * values[i0][0][0] + tx * values[i1][0][0];
                    return a;
                }
                let fy = y2 * n[1] as f64;
                let j0 = fy.floor() as usize % n[1];
                let ty = fy - fy.floor();
                let j1 = (j0 + 1) % n[1];
                let mut a = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        a[i][j] = (1.0 - tx) * (1.0 - ty) * values[i0 + n[0] * j0][i][j]
                            + tx * (1.0 - ty) * values[i1 + n[0] * j0][i][j]
                            + (1.0 - tx) * ty * values[i0 + n[0] * j1][i][j]
                            + tx * ty * values[i1 + n[0] * j1][i][j];
                    }
                }
                a
            }
        }
    }

    /// Evaluate A(x/eps).
    pub fn eval_eps(&self, x: [f64; 2], eps: f64) -> Matrix {
        self.eval([x[0] / eps, x[1] / eps])
    }

    /// Entrywise derivative dA_ij/dy_k by central differences on the cell
    /// (analytic fields are smooth, so this is accurate to ~1e-9).
    pub fn grad_entry(&self, i: usize, j: usize, k: usize, y: [f64; 2]) -> f64 {
        let h = 1e-5;
        let mut yp = y;
        let mut ym = y;
        yp[k] += h;
        ym[k] -= h;
        (self.eval(yp)[i][j] - self.eval(ym)[i][j]) / (2.0 * h)
    }

    pub fn from_gridded(d: usize, n: [usize; 2], values: Vec<Matrix>, mu: f64, lip: f64) -> Result<Self> {
        let count = if d == 1 { n[0] } else { n[0] * n[1] };
        if values.len() != count {
            return Err(Error::invalid(format!(
                "gridded field: expected {count} entries, got {}",
                values.len()
            )));
        }
        let f = PeriodicCoefficientField { d, mu, lip, smooth: false, kind: FieldKind::Gridded { n, values } };
        f.check(64)?;
        Ok(f)
    }
}

/// Validation report from sampling the standing assumptions.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub symmetry_defect: f64,
    pub eig_min: f64,
    pub eig_max: f64,
    pub periodicity_mismatch: f64,
    pub lipschitz_quotient: f64,
    pub worst_point: [f64; 2],
}

/// Sample the invariants of a field on a `samples`-per-axis lattice.
pub fn validate(field: &PeriodicCoefficientField, samples: usize) -> ValidationReport {
    assert!(samples >= 2);
    let d = field.d;
    let m = samples;
    let mut sym: f64 = 0.0;
    let mut emin = f64::INFINITY;
    let mut emax = f64::NEG_INFINITY;
    let mut per: f64 = 0.0;
    let mut lip: f64 = 0.0;
    let mut worst = [0.0; 2];
    let pts_j = if d == 1 { 1 } else { m };
    let step = 1.0 / m as f64;
    let mut prev_row: Vec<Matrix> = Vec::new();
    for j in 0..pts_j {
        let mut row: Vec<Matrix> = Vec::with_capacity(m);
        for i in 0..m {
            let y = [i as f64 * step, j as f64 * step];
            let a = field.eval(y);
            row.push(a);
            let sdef = (a[0][1] - a[1][0]).abs();
            if sdef > sym {
                sym = sdef;
                worst = y;
            }
            let (lo, hi) = sym_eig_range(d, &a);
            emin = emin.min(lo);
            emax = emax.max(hi);
            // periodicity: compare against the shifted evaluation
            let ap = field.eval([y[0] + 1.0, y[1] + 1.0]);
            for r in 0..d {
                for c in 0..d {
                    per = per.max((a[r][c] - ap[r][c]).abs());
                }
            }
            if i > 0 {
                lip = lip.max(mat_dist(d, &row[i - 1], &a) / step);
            }
        }
        // wraparound quotient
        lip = lip.max(mat_dist(d, &row[m - 1], &row[0]) / step);
        if j > 0 {
            for i in 0..m {
                lip = lip.max(mat_dist(d, &prev_row[i], &row[i]) / step);
            }
        }
        prev_row = row;
    }
    ValidationReport {
        symmetry_defect: sym,
        eig_min: emin,
        eig_max: emax,
        periodicity_mismatch: per,
        lipschitz_quotient: lip,
        worst_point: worst,
    }
}

fn mat_dist(d: usize, a: &Matrix, b: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (a[i][j] - b[i][j]).powi(2);
        }
    }
    s.sqrt()
}

impl PeriodicCoefficientField {
    fn check(&self, samples: usize) -> Result<()> {
        let rep = validate(self, samples);
        if rep.symmetry_defect > 1e-12 {
            return Err(Error::invalid(format!(
                "non-symmetric coefficient: defect {:.3e} at y = ({:.4}, {:.4})",
                rep.symmetry_defect, rep.worst_point[0], rep.worst_point[1]
            )));
        }
        if rep.eig_min <= 0.0 {
            return Err(Error::invalid(format!(
                "ellipticity violated: minimum sampled eigenvalue {:.3e}",
                rep.eig_min
            )));
        }
        Ok(())
    }
}

/// Build a field from a preset name or closed-form entries, verifying the
/// declared constants against samples (and tightening them if needed).
pub fn build_field(spec: &FieldSpec, mu: f64, lip: f64) -> Result<PeriodicCoefficientField> {
    let mut field = match spec {
        FieldSpec::Preset { name } => preset(name, mu, lip)?,
        FieldSpec::Expressions { d, entries } => {
            let d = *d;
            if d != 1 && d != 2 {
                return Err(Error::invalid("dimension must be 1 or 2"));
            }
            if entries.len() != d * d {
                return Err(Error::invalid(format!(
                    "expected {} coefficient expressions, got {}",
                    d * d,
                    entries.len()
                )));
            }
            // symmetry of the spec itself
            for i in 0..d {
                for j in (i + 1)..d {
                    if entries[i * d + j] != entries[j * d + i] {
                        return Err(Error::invalid(format!(
                            "non-symmetric spec: entry ({i},{j}) = {:?} but ({j},{i}) = {:?}",
                            entries[i * d + j],
                            entries[j * d + i]
                        )));
                    }
                }
            }
            let mut fns: Vec<Box<dyn Fn(f64, f64) -> f64>> = Vec::new();
            for s in entries {
                let expr: meval::Expr = s
                    .parse()
                    .map_err(|e| Error::invalid(format!("cannot parse {s:?}: {e}")))?;
                let f = expr
                    .bind2("y1", "y2")
                    .map_err(|e| Error::invalid(format!("cannot bind {s:?}: {e}")))?;
                fns.push(Box::new(f));
            }
            PeriodicCoefficientField { d, mu, lip, smooth: true, kind: FieldKind::Expr(fns) }
        }
        FieldSpec::GriddedFile { path } => crate::io::load_gridded_field(path, mu, lip)?,
    };
    field.check(256)?;
    // tighten declared constants if the samples demand it
    let rep = validate(&field, 256);
    field.mu = field.mu.min(rep.eig_min).min(1.0 / rep.eig_max);
    field.lip = field.lip.max(if field.smooth { rep.lipschitz_quotient } else { 0.0 });
    Ok(field)
}

fn preset(name: &str, mu: f64, lip: f64) -> Result<PeriodicCoefficientField> {
    let f = match name {
        "constant" | "identity-1d" => PeriodicCoefficientField {
            d: 1,
            mu: 1.0,
            lip: 0.0,
            smooth: true,
            kind: FieldKind::Constant([[1.0, 0.0], [0.0, 0.0]]),
        },
        "identity-2d" => PeriodicCoefficientField {
            d: 2,
            mu: 1.0,
            lip: 0.0,
            smooth: true,
            kind: FieldKind::Constant([[1.0, 0.0], [0.0, 1.0]]),
        },
        "cosine-1d" => PeriodicCoefficientField {
            d: 1,
            mu: 1.0 / 3.0,
            lip: lip.max(TAU),
            smooth: true,
            kind: FieldKind::Cosine1d,
        },
        "laminate-2d" => PeriodicCoefficientField {
            d: 2,
            mu: 1.0 / 3.0,
            lip: lip.max(TAU),
            smooth: true,
            kind: FieldKind::Laminate2d,
        },
        "checker-2d" | "smooth-checker-2d" => PeriodicCoefficientField {
            d: 2,
            mu: 0.5,
            lip: lip.max(TAU),
            smooth: true,
            kind: FieldKind::Checker2d,
        },
        "piecewise-laminate-1d" => PeriodicCoefficientField {
            d: 1,
            mu: 1.0 / 3.0,
            lip: 0.0,
            smooth: false,
            kind: FieldKind::PiecewiseLaminate1d,
        },
        _ => return Err(Error::invalid(format!("unknown preset {name:?}"))),
    };
    let _ = mu;
    Ok(f)
}

/// Sample A(x/eps) at element midpoints of a domain grid.
pub fn sample_epsilon(field: &PeriodicCoefficientField, eps: f64, grid: &Grid) -> Result<TensorField> {
    if eps <= 0.0 {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    let hmax = if grid.d == 2 { grid.h[0].max(grid.h[1]) } else { grid.h[0] };
    let warning = if hmax > eps / 8.0 + 1e-14 {
        Some(format!(
            "grid spacing h = {hmax:.4e} does not resolve the oscillation (want h <= eps/8 = {:.4e})",
            eps / 8.0
        ))
    } else {
        None
    };
    let values: Vec<Matrix> = (0..grid.num_elements())
        .map(|e| field.eval_eps(grid.element_center(e), eps))
        .collect();
    Ok(TensorField { d: grid.d, values, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::Domain;
    use approx::assert_relative_eq;

    #[test]
    fn identity_preset_is_clean() {
        let f = build_field(&FieldSpec::Preset { name: "identity-2d".into() }, 1.0, 0.0).unwrap();
        let rep = validate(&f, 32);
        assert_eq!(rep.symmetry_defect, 0.0);
        assert_eq!(rep.eig_min, 1.0);
        assert_eq!(rep.eig_max, 1.0);
        assert_eq!(rep.lipschitz_quotient, 0.0);
    }

    #[test]
    fn cosine_preset_range() {
        let f = build_field(&FieldSpec::Preset { name: "cosine-1d".into() }, 1.0 / 3.0, 7.0).unwrap();
        let rep = validate(&f, 512);
        assert!(rep.eig_min >= 1.0 / 3.0 - 1e-12, "min {}", rep.eig_min);
        assert!(rep.eig_max <= 1.0 + 1e-12, "max {}", rep.eig_max);
        assert!(rep.symmetry_defect == 0.0);
        assert!(f.mu >= 1.0 / 3.0 - 1e-9);
    }

    #[test]
    fn expression_field_matches_preset() {
        let f = build_field(
            &FieldSpec::Expressions { d: 1, entries: vec!["1/(2+cos(2*pi*y1))".into()] },
            1.0 / 3.0,
            7.0,
        )
        .unwrap();
        let g = build_field(&FieldSpec::Preset { name: "cosine-1d".into() }, 1.0 / 3.0, 7.0).unwrap();
        for i in 0..17 {
            let y = [i as f64 / 17.0, 0.0];
            assert_relative_eq!(f.eval(y)[0][0], g.eval(y)[0][0], epsilon = 1e-12);
        }
    }

    #[test]
    fn asymmetric_expression_rejected() {
        let r = build_field(
            &FieldSpec::Expressions {
                d: 2,
                entries: vec!["1".into(), "0.1".into(), "0.2".into(), "1".into()],
            },
            0.5,
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn asymmetric_gridded_entry_flagged() {
        let mut vals = vec![[[1.0, 0.0], [0.0, 1.0]]; 16];
        vals[5][0][1] = 0.25; // one asymmetric entry
        let f = PeriodicCoefficientField {
            d: 2,
            mu: 0.5,
            lip: 0.0,
            smooth: false,
            kind: FieldKind::Gridded { n: [4, 4], values: vals },
        };
        let rep = validate(&f, 16);
        assert!(rep.symmetry_defect > 0.0);
    }

    #[test]
    fn sample_epsilon_hand_value() {
        // d=1, a(y)=1/(2+cos 2πy), eps=1/4: a at y=1/2 is 1
        let f = build_field(&FieldSpec::Preset { name: "cosine-1d".into() }, 1.0 / 3.0, 7.0).unwrap();
        let a = f.eval_eps([0.125, 0.0], 0.25);
        assert_relative_eq!(a[0][0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sample_epsilon_periodic_shift() {
        let f = build_field(&FieldSpec::Preset { name: "cosine-1d".into() }, 1.0 / 3.0, 7.0).unwrap();
        let eps = 0.125;
        let dom = Domain::interval(1.0);
        let grid = Grid::domain(&dom, [64, 0]);
        let t = sample_epsilon(&f, eps, &grid).unwrap();
        // shifting by eps = 8 elements reproduces values
        for e in 0..grid.num_elements() - 8 {
            assert_relative_eq!(t.values[e][0][0], t.values[e + 8][0][0], epsilon = 1e-12);
        }
        assert!(t.warning.is_none());
    }

    #[test]
    fn sample_epsilon_rejects_nonpositive() {
        let f = build_field(&FieldSpec::Preset { name: "constant".into() }, 1.0, 0.0).unwrap();
        let dom = Domain::interval(1.0);
        let grid = Grid::domain(&dom, [8, 0]);
        assert!(sample_epsilon(&f, -1.0, &grid).is_err());
    }

    #[test]
    fn eps_one_samples_field_itself() {
        let f = build_field(&FieldSpec::Preset { name: "cosine-1d".into() }, 1.0 / 3.0, 7.0).unwrap();
        for i in 0..9 {
            let x = i as f64 / 9.0;
            assert_relative_eq!(f.eval_eps([x, 0.0], 1.0)[0][0], f.eval([x, 0.0])[0][0]);
        }
    }
}

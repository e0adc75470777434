//! Convex quadratic programs solved by a primal-dual interior-point method.
//!
//! ```text
//!   minimize    ½ xᵀ P x + cᵀ x + k
//!   subject to  A x  = b      (multipliers y)
//!               G x <= h      (multipliers z >= 0)
//! ```
//!
//! Mehrotra predictor-corrector steps on the reduced KKT system
//! `[P + Gᵀ W G, Aᵀ; A, 0]`, factored with a static-regularized sparse LDLᵀ
//! and cleaned up by iterative refinement. Multipliers follow the Lagrangian
//! `f(x) + yᵀ(Ax − b) + zᵀ(Gx − h)`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::ldl::{Slot, Symbolic};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("interior-point method stalled after {iterations} iterations (residual {residual:e})")]
    Stalled { iterations: usize, residual: f64 },
    #[error("KKT factorization failed")]
    Factorization,
    #[error("problem dimensions are inconsistent")]
    Dimension,
}

/// Sparse linear row `Σ coeffs · x  (= or <=)  rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Qp {
    pub n: usize,
    /// Upper or lower triangle entries of P; off-diagonal entries are mirrored.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub equalities: Vec<Row>,
    pub inequalities: Vec<Row>,
}

impl Qp {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for (j, &c) in self.linear.iter().enumerate() {
            v += c * x[j];
        }
        for &(i, j, p) in &self.quadratic {
            if i == j {
                v += 0.5 * p * x[i] * x[i];
            } else {
                v += p * x[i] * x[j];
            }
        }
        v
    }

    fn hess_mul(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for &(i, j, p) in &self.quadratic {
            out[i] += p * x[j];
            if i != j {
                out[j] += p * x[i];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Max of scaled primal and dual residuals and 100 × mean complementarity.
    pub residual: f64,
}

/// Diagonal change of variables `x = var_scale ∘ x̂` and objective divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub var: Vec<f64>,
    pub objective: f64,
}

/// Solves `qp` after rescaling variables, objective and rows; the returned
/// primal and dual values are in the original units.
pub fn solve_scaled(qp: &Qp, scaling: &Scaling, options: &QpOptions) -> Result<QpSolution, QpError> {
    let d = &scaling.var;
    let k = scaling.objective;
    if d.len() != qp.n || !(k > 0.0) {
        return Err(QpError::Dimension);
    }
    let scale_rows = |rows: &[Row]| -> (Vec<Row>, Vec<f64>) {
        let mut out = Vec::with_capacity(rows.len());
        let mut factors = Vec::with_capacity(rows.len());
        for r in rows {
            let coeffs: Vec<(usize, f64)> = r.coeffs.iter().map(|&(j, a)| (j, a * d[j])).collect();
            let norm = coeffs.iter().fold(0.0_f64, |m, &(_, a)| m.max(a.abs()));
            let f = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            out.push(Row::new(
                coeffs.into_iter().map(|(j, a)| (j, a * f)).collect(),
                r.rhs * f,
            ));
            factors.push(f);
        }
        (out, factors)
    };
    let (equalities, eq_f) = scale_rows(&qp.equalities);
    let (inequalities, in_f) = scale_rows(&qp.inequalities);
    let scaled = Qp {
        n: qp.n,
        quadratic: qp
            .quadratic
            .iter()
            .map(|&(i, j, p)| (i, j, p * d[i] * d[j] / k))
            .collect(),
        linear: qp.linear.iter().zip(d).map(|(c, s)| c * s / k).collect(),
        constant: qp.constant / k,
        equalities,
        inequalities,
    };
    let mut sol = solve(&scaled, options)?;
    for (x, s) in sol.x.iter_mut().zip(d) {
        *x *= s;
    }
    for (y, f) in sol.y.iter_mut().zip(&eq_f) {
        *y *= k * f;
    }
    for (z, f) in sol.z.iter_mut().zip(&in_f) {
        *z *= k * f;
    }
    sol.objective = qp.objective(&sol.x);
    Ok(sol)
}

struct Kkt {
    sym: Symbolic,
    n: usize,
    diag: Vec<Slot>,
    quad: Vec<Slot>,
    /// Per inequality row, slots of every (a, b) coefficient pair with a <= b.
    ineq_pairs: Vec<Vec<(Slot, usize, usize)>>,
    eq: Vec<Vec<Slot>>,
    signs: Vec<i8>,
}

const REG_PRIMAL: f64 = 1e-9;
const REG_DUAL: f64 = 1e-9;
const PIVOT_EPS: f64 = 1e-13;
const PIVOT_DELTA: f64 = 1e-7;

impl Kkt {
    fn new(qp: &Qp) -> Self {
        let n = qp.n;
        let me = qp.equalities.len();
        let mut entries = Vec::new();
        for i in 0..n + me {
            entries.push((i, i));
        }
        for &(i, j, _) in &qp.quadratic {
            entries.push((i, j));
        }
        for r in &qp.inequalities {
            for &(a, _) in &r.coeffs {
                for &(b, _) in &r.coeffs {
                    entries.push((a, b));
                }
            }
        }
        for (e, r) in qp.equalities.iter().enumerate() {
            for &(j, _) in &r.coeffs {
                entries.push((n + e, j));
            }
        }
        let sym = Symbolic::analyse(n + me, &entries);
        let diag = (0..n + me).map(|i| sym.slot(i, i)).collect();
        let quad = qp.quadratic.iter().map(|&(i, j, _)| sym.slot(i, j)).collect();
        let ineq_pairs = qp
            .inequalities
            .iter()
            .map(|r| {
                let mut v = Vec::new();
                for (ka, &(a, _)) in r.coeffs.iter().enumerate() {
                    for (kb, &(b, _)) in r.coeffs.iter().enumerate() {
                        if a < b || (a == b && ka <= kb) {
                            v.push((sym.slot(a, b), ka, kb));
                        }
                    }
                }
                v
            })
            .collect();
        let eq = qp
            .equalities
            .iter()
            .enumerate()
            .map(|(e, r)| r.coeffs.iter().map(|&(j, _)| sym.slot(n + e, j)).collect())
            .collect();
        Self {
            sym,
            n,
            diag,
            quad,
            ineq_pairs,
            eq,
            signs: (0..n + me).map(|i| if i < n { 1 } else { -1 }).collect(),
        }
    }

    fn factor(&self, qp: &Qp, w: &[f64]) -> Result<crate::ldl::Factor, QpError> {
        let values = self.values(qp, w);
        self.sym
            .factor_signed(&values, Some((&self.signs, PIVOT_EPS, PIVOT_DELTA)))
            .map_err(|_| QpError::Factorization)
    }

    fn values(&self, qp: &Qp, w: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.sym.nnz()];
        for (s, &(_, _, p)) in self.quad.iter().zip(&qp.quadratic) {
            v[s.0] += p;
        }
        for (row, (pairs, wi)) in qp.inequalities.iter().zip(self.ineq_pairs.iter().zip(w)) {
            for &(s, ka, kb) in pairs {
                let (a, ga) = row.coeffs[ka];
                let (b, gb) = row.coeffs[kb];
                // a == b with ka != kb only arises from repeated columns in a row
                let twice = a == b && ka != kb;
                v[s.0] += wi * ga * gb * if twice { 2.0 } else { 1.0 };
            }
        }
        for i in 0..self.n {
            v[self.diag[i].0] += REG_PRIMAL;
        }
        for (e, slots) in self.eq.iter().enumerate() {
            for (s, &(_, a)) in slots.iter().zip(&qp.equalities[e].coeffs) {
                v[s.0] += a;
            }
            v[self.diag[self.n + e].0] -= REG_DUAL;
        }
        v
    }
}

/// Reduced KKT operator without regularization, for iterative refinement.
fn kkt_apply(qp: &Qp, w: &[f64], x: &[f64], out: &mut [f64], tmp: &mut [f64]) {
    let n = qp.n;
    qp.hess_mul(&x[..n], &mut out[..n]);
    for (row, wi) in qp.inequalities.iter().zip(w) {
        let gx = row.dot(&x[..n]);
        for &(j, a) in &row.coeffs {
            out[j] += wi * a * gx;
        }
    }
    for (e, row) in qp.equalities.iter().enumerate() {
        let ye = x[n + e];
        for &(j, a) in &row.coeffs {
            out[j] += a * ye;
        }
        tmp[e] = row.dot(&x[..n]);
    }
    out[n..].copy_from_slice(&tmp[..qp.equalities.len()]);
}

pub fn solve(qp: &Qp, options: &QpOptions) -> Result<QpSolution, QpError> {
    let n = qp.n;
    let me = qp.equalities.len();
    let mi = qp.inequalities.len();
    if qp.linear.len() != n {
        return Err(QpError::Dimension);
    }
    let kkt = Kkt::new(qp);
    let dim = n + me;
    let mut work = Vec::new();
    let mut tmp = vec![0.0; me.max(1)];

    // starting point: solve with W = I, then push slacks inside
    let mut w = vec![1.0; mi];
    let solve_system = |w: &[f64], rhs: &[f64], work: &mut Vec<f64>, tmp: &mut [f64]| -> Result<Vec<f64>, QpError> {
        let factor = kkt.factor(qp, w)?;
        let mut sol = rhs.to_vec();
        kkt.sym.solve(&factor, &mut sol, work);
        let mut r = vec![0.0; dim];
        for _ in 0..3 {
            kkt_apply(qp, w, &sol, &mut r, tmp);
            let mut any = false;
            for i in 0..dim {
                r[i] = rhs[i] - r[i];
                any |= r[i] != 0.0;
            }
            if !any {
                break;
            }
            kkt.sym.solve(&factor, &mut r, work);
            for i in 0..dim {
                sol[i] += r[i];
            }
        }
        Ok(sol)
    };

    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -qp.linear[j];
    }
    for row in &qp.inequalities {
        for &(j, a) in &row.coeffs {
            rhs[j] += a * row.rhs;
        }
    }
    for (e, row) in qp.equalities.iter().enumerate() {
        rhs[n + e] = row.rhs;
    }
    let init = solve_system(&w, &rhs, &mut work, &mut tmp)?;
    let mut x = init[..n].to_vec();
    let mut y = init[n..].to_vec();
    let mut s: Vec<f64> = qp.inequalities.iter().map(|r| r.rhs - r.dot(&x)).collect();
    let mut z = vec![1.0; mi];
    for si in &mut s {
        *si = si.max(1.0);
    }

    let data_norm = {
        let c = qp.linear.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let b = qp.equalities.iter().fold(0.0_f64, |m, r| m.max(r.rhs.abs()));
        let h = qp.inequalities.iter().fold(0.0_f64, |m, r| m.max(r.rhs.abs()));
        1.0 + c.max(b).max(h)
    };

    let mut px = vec![0.0; n];
    let mut rx = vec![0.0; n];
    let mut ry = vec![0.0; me];
    let mut rz = vec![0.0; mi];
    let mut best = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..options.max_iterations {
        qp.hess_mul(&x, &mut px);
        for j in 0..n {
            rx[j] = px[j] + qp.linear[j];
        }
        for (e, row) in qp.equalities.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                rx[j] += a * y[e];
            }
            ry[e] = row.dot(&x) - row.rhs;
        }
        for (i, row) in qp.inequalities.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                rx[j] += a * z[i];
            }
            rz[i] = row.dot(&x) + s[i] - row.rhs;
        }
        let mu = if mi > 0 {
            s.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / mi as f64
        } else {
            0.0
        };
        let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        let scale = data_norm.max(inf(&px)).max(inf(&x));
        residual = (inf(&rx) / scale)
            .max(inf(&ry) / data_norm.max(inf(&x)))
            .max(inf(&rz) / data_norm.max(inf(&x)))
            .max(1e2 * mu);
        if !residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(QpError::Stalled {
                iterations: it,
                residual: best,
            });
        }
        if residual <= options.tolerance {
            return Ok(QpSolution {
                objective: qp.objective(&x),
                x,
                y,
                z,
                iterations: it,
                residual,
            });
        }
        best = best.min(residual);

        for i in 0..mi {
            w[i] = z[i] / s[i];
        }
        let factor = kkt.factor(qp, &w)?;
        let solve_with = |rhs: &[f64], work: &mut Vec<f64>, tmp: &mut [f64]| -> Vec<f64> {
            let mut sol = rhs.to_vec();
            kkt.sym.solve(&factor, &mut sol, work);
            let mut r = vec![0.0; dim];
            for _ in 0..3 {
                kkt_apply(qp, &w, &sol, &mut r, tmp);
                for i in 0..dim {
                    r[i] = rhs[i] - r[i];
                }
                kkt.sym.solve(&factor, &mut r, work);
                for i in 0..dim {
                    sol[i] += r[i];
                }
            }
            sol
        };
        // Δz = W(G Δx) + S⁻¹(Z r_z − r_sz); r_sz = s∘z − σμ − corrector
        let direction = |rsz: &[f64], work: &mut Vec<f64>, tmp: &mut [f64]| {
            let mut rhs = vec![0.0; dim];
            for j in 0..n {
                rhs[j] = -rx[j];
            }
            for (i, row) in qp.inequalities.iter().enumerate() {
                let t = (z[i] * rz[i] - rsz[i]) / s[i];
                for &(j, a) in &row.coeffs {
                    rhs[j] -= a * t;
                }
            }
            for e in 0..me {
                rhs[n + e] = -ry[e];
            }
            let sol = solve_with(&rhs, work, tmp);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let mut dz = vec![0.0; mi];
            let mut ds = vec![0.0; mi];
            for (i, row) in qp.inequalities.iter().enumerate() {
                let gdx = row.dot(&dx);
                dz[i] = w[i] * gdx + (z[i] * rz[i] - rsz[i]) / s[i];
                ds[i] = -rz[i] - gdx;
            }
            (dx, dy, dz, ds)
        };
        let max_step = |v: &[f64], dv: &[f64]| -> f64 {
            v.iter()
                .zip(dv)
                .filter(|(_, &d)| d < 0.0)
                .map(|(&a, &d)| -a / d)
                .fold(1.0_f64, f64::min)
        };

        // predictor
        let rsz_aff: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a * b).collect();
        let (_, _, dz_a, ds_a) = direction(&rsz_aff, &mut work, &mut tmp);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let sigma = if mi > 0 {
            let mu_aff = s
                .iter()
                .zip(&ds_a)
                .zip(z.iter().zip(&dz_a))
                .map(|((si, dsi), (zi, dzi))| (si + alpha_aff * dsi) * (zi + alpha_aff * dzi))
                .sum::<f64>()
                / mi as f64;
            let ratio = (mu_aff / mu).clamp(0.0, 1.0);
            ratio * ratio * ratio
        } else {
            0.0
        };
        // corrector
        let rsz: Vec<f64> = (0..mi)
            .map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu)
            .collect();
        let (dx, dy, dz, ds) = direction(&rsz, &mut work, &mut tmp);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for e in 0..me {
            y[e] += alpha * dy[e];
        }
        for i in 0..mi {
            s[i] = (s[i] + alpha * ds[i]).max(1e-300);
            z[i] = (z[i] + alpha * dz[i]).max(1e-300);
        }
    }
    Err(QpError::Stalled {
        iterations: options.max_iterations,
        residual: best.min(residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_constrained_scalar() {
        // min (x - 3)^2 s.t. x <= 1  ->  x = 1, z = 4
        let qp = Qp {
            n: 1,
            quadratic: vec![(0, 0, 2.0)],
            linear: vec![-6.0],
            constant: 9.0,
            equalities: vec![],
            inequalities: vec![Row::new(vec![(0, 1.0)], 1.0)],
        };
        let sol = solve(&qp, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.z[0], 4.0, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, 4.0, epsilon = 1e-7);
    }

    #[test]
    fn equality_multiplier_sign() {
        // min x1^2 + x2^2 s.t. x1 + x2 = 2 -> x = (1, 1), y = -2
        let qp = Qp {
            n: 2,
            quadratic: vec![(0, 0, 2.0), (1, 1, 2.0)],
            linear: vec![0.0, 0.0],
            constant: 0.0,
            equalities: vec![Row::new(vec![(0, 1.0), (1, 1.0)], 2.0)],
            inequalities: vec![],
        };
        let sol = solve(&qp, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.y[0], -2.0, epsilon = 1e-7);
    }

    #[test]
    fn linear_program_with_free_variable() {
        // min x + 2y s.t. x + y = 1, x >= 0, y >= 0, t free with t = x - y
        let qp = Qp {
            n: 3,
            quadratic: vec![],
            linear: vec![1.0, 2.0, 0.0],
            constant: 0.0,
            equalities: vec![
                Row::new(vec![(0, 1.0), (1, 1.0)], 1.0),
                Row::new(vec![(2, 1.0), (0, -1.0), (1, 1.0)], 0.0),
            ],
            inequalities: vec![Row::new(vec![(0, -1.0)], 0.0), Row::new(vec![(1, -1.0)], 0.0)],
        };
        let sol = solve(&qp, &QpOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], 0.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[2], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn scaling_returns_original_units() {
        let qp = Qp {
            n: 2,
            quadratic: vec![(0, 0, 0.02), (1, 1, 0.01)],
            linear: vec![10.0, 12.0],
            constant: 0.0,
            equalities: vec![Row::new(vec![(0, 1.0), (1, 1.0)], 1000.0)],
            inequalities: vec![Row::new(vec![(0, 1.0)], 300.0)],
        };
        let plain = solve(&qp, &QpOptions::default()).unwrap();
        let scaled = solve_scaled(
            &qp,
            &Scaling {
                var: vec![100.0, 100.0],
                objective: 500.0,
            },
            &QpOptions::default(),
        )
        .unwrap();
        for j in 0..2 {
            assert_relative_eq!(plain.x[j], scaled.x[j], epsilon = 1e-6, max_relative = 1e-7);
        }
        assert_relative_eq!(plain.y[0], scaled.y[0], max_relative = 1e-7);
        assert_relative_eq!(plain.z[0], scaled.z[0], max_relative = 1e-6);
    }

    #[test]
    fn infeasible_problem_stalls() {
        // x <= -1 and -x <= -1 has no solution
        let qp = Qp {
            n: 1,
            quadratic: vec![(0, 0, 1.0)],
            linear: vec![0.0],
            constant: 0.0,
            equalities: vec![],
            inequalities: vec![Row::new(vec![(0, 1.0)], -1.0), Row::new(vec![(0, -1.0)], -1.0)],
        };
        let r = solve(&qp, &QpOptions::default());
        assert!(r.is_err(), "{r:?}");
    }
}

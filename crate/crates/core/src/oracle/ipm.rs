//! Dense primal-dual interior point method for small smooth convex programs
//!
//! ```text
//! min f(x)  s.t.  A x = b,  G x <= h,  x_j >= 0 for j in B
//! ```
//!
//! Newton steps on the perturbed KKT system with Mehrotra centering; the
//! reduced system is factored with a dense LU.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::network::RoadLink;

/// Sparse linear row `Σ c_j x_j (= or <=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl LinRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs }
    }

    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, c)| c * x[j]).sum()
    }
}

/// Separable pieces of the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `a x² + b x`
    Quadratic { var: usize, a: f64, b: f64 },
    /// `w ∫_0^v t(s) ds` with `v = Σ vars`.
    Congestion { link: RoadLink, vars: Vec<usize>, weight: f64 },
    /// `w (q ln q − q − c q)` with `q = Σ vars`.
    Entropy { vars: Vec<usize>, weight: f64, attractiveness: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub n: usize,
    pub terms: Vec<Term>,
    pub equalities: Vec<LinRow>,
    pub inequalities: Vec<LinRow>,
    pub nonnegative: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSolution {
    pub x: Vec<f64>,
    /// Equality multipliers, Lagrangian `f + yᵀ(Ax − b) + zᵀ(Gx − h) − wᵀx_B`.
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IpmFailure {
    /// Iteration limit or breakdown; `primal` is the scaled primal residual.
    Stalled { primal: f64, residual: f64 },
}

fn sum(vars: &[usize], x: &[f64]) -> f64 {
    vars.iter().map(|&j| x[j]).sum()
}

impl Program {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| match t {
                Term::Quadratic { var, a, b } => a * x[*var] * x[*var] + b * x[*var],
                Term::Congestion { link, vars, weight } => weight * link.travel_time_integral(sum(vars, x)),
                Term::Entropy {
                    vars,
                    weight,
                    attractiveness,
                } => {
                    let q = sum(vars, x);
                    if q > 0.0 {
                        weight * (q * libm::log(q) - q - attractiveness * q)
                    } else if q == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            })
            .sum()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        for t in &self.terms {
            match t {
                Term::Quadratic { var, a, b } => g[*var] += 2.0 * a * x[*var] + b,
                Term::Congestion { link, vars, weight } => {
                    let d = weight * link.travel_time(sum(vars, x).max(0.0));
                    vars.iter().for_each(|&j| g[j] += d);
                }
                Term::Entropy {
                    vars,
                    weight,
                    attractiveness,
                } => {
                    let d = weight * (libm::log(sum(vars, x)) - attractiveness);
                    vars.iter().for_each(|&j| g[j] += d);
                }
            }
        }
    }

    fn hessian_into(&self, x: &[f64], h: &mut DMatrix<f64>) {
        for t in &self.terms {
            let (vars, c) = match t {
                Term::Quadratic { var, a, .. } => {
                    h[(*var, *var)] += 2.0 * a;
                    continue;
                }
                Term::Congestion { link, vars, weight } => {
                    (vars, weight * link.travel_time_slope(sum(vars, x).max(0.0)))
                }
                Term::Entropy { vars, weight, .. } => (vars, weight / sum(vars, x)),
            };
            for &i in vars {
                for &j in vars {
                    h[(i, j)] += c;
                }
            }
        }
    }
}

pub struct IpmOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    w: Vec<f64>,
}

struct Residuals {
    dual: Vec<f64>,
    eq: Vec<f64>,
    ineq: Vec<f64>,
}

const STEP_FRACTION: f64 = 0.99;
const REGULARIZATION: f64 = 1e-12;
const REFINEMENT_STEPS: usize = 2;

impl Program {
    fn residuals(&self, p: &Point, grad: &[f64], k: f64) -> Residuals {
        let mut dual: Vec<f64> = grad.iter().map(|g| k * g).collect();
        for (row, &yi) in self.equalities.iter().zip(&p.y) {
            row.coeffs.iter().for_each(|&(j, c)| dual[j] += c * yi);
        }
        for (row, &zi) in self.inequalities.iter().zip(&p.z) {
            row.coeffs.iter().for_each(|&(j, c)| dual[j] += c * zi);
        }
        for (&j, &wj) in self.nonnegative.iter().zip(&p.w) {
            dual[j] -= wj;
        }
        let eq = self.equalities.iter().map(|r| r.dot(&p.x) - r.rhs).collect();
        let ineq = self
            .inequalities
            .iter()
            .zip(&p.s)
            .map(|(r, s)| r.dot(&p.x) + s - r.rhs)
            .collect();
        Residuals { dual, eq, ineq }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Solves `program` from `x0`, which must be strictly positive on the
/// nonnegative set.
pub fn solve(program: &Program, x0: &[f64], options: &IpmOptions) -> Result<IpmSolution, IpmFailure> {
    let n = program.n;
    let me = program.equalities.len();
    let mi = program.inequalities.len();
    let nb = program.nonnegative.len();
    let m_comp = (mi + nb).max(1) as f64;

    let mut grad = vec![0.0; n];
    program.gradient(x0, &mut grad);
    // objective scale so that gradients are O(1)
    let k = 1.0 / inf_norm(&grad).max(1.0);
    let b_scale = 1.0 + program.equalities.iter().fold(0.0_f64, |m, r| m.max(r.rhs.abs()));
    let h_scale = 1.0 + program.inequalities.iter().fold(0.0_f64, |m, r| m.max(r.rhs.abs()));

    let mut p = Point {
        x: x0.to_vec(),
        y: vec![0.0; me],
        z: vec![1.0; mi],
        s: program
            .inequalities
            .iter()
            .map(|r| (r.rhs - r.dot(x0)).max(1.0))
            .collect(),
        w: vec![1.0; nb],
    };
    for &j in &program.nonnegative {
        debug_assert!(p.x[j] > 0.0);
    }

    let dim = n + me;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut last = (f64::INFINITY, f64::INFINITY);
    for iteration in 0..=options.max_iterations {
        program.gradient(&p.x, &mut grad);
        let r = program.residuals(&p, &grad, k);
        let mu = (p.s.iter().zip(&p.z).map(|(a, b)| a * b).sum::<f64>()
            + program.nonnegative.iter().zip(&p.w).map(|(&j, w)| p.x[j] * w).sum::<f64>())
            / m_comp;
        let primal = (inf_norm(&r.eq) / b_scale).max(inf_norm(&r.ineq) / h_scale);
        let dual = inf_norm(&r.dual);
        let residual = primal.max(dual).max(mu);
        last = (primal, residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= options.tolerance {
            return Ok(IpmSolution {
                objective: program.value(&p.x),
                x: p.x,
                y: p.y.iter().map(|v| v / k).collect(),
                z: p.z.iter().map(|v| v / k).collect(),
                iterations: iteration,
                residual,
            });
        }
        if iteration == options.max_iterations {
            break;
        }

        // reduced Newton matrix
        kkt.fill(0.0);
        {
            let mut h = DMatrix::<f64>::zeros(n, n);
            program.hessian_into(&p.x, &mut h);
            kkt.view_mut((0, 0), (n, n)).copy_from(&(h * k));
        }
        for (row, (s, z)) in program.inequalities.iter().zip(p.s.iter().zip(&p.z)) {
            let d = z / s;
            for &(i, ci) in &row.coeffs {
                for &(j, cj) in &row.coeffs {
                    kkt[(i, j)] += d * ci * cj;
                }
            }
        }
        for (&j, w) in program.nonnegative.iter().zip(&p.w) {
            kkt[(j, j)] += w / p.x[j];
        }
        for (r, row) in program.equalities.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                kkt[(n + r, j)] += c;
                kkt[(j, n + r)] += c;
            }
        }
        for i in 0..n {
            kkt[(i, i)] += REGULARIZATION;
        }
        for r in 0..me {
            kkt[(n + r, n + r)] -= REGULARIZATION;
        }
        let lu = kkt.clone().lu();
        let kkt = &kkt;

        let direction = |r_sz: &[f64], r_xw: &[f64]| -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
            let mut rhs = DVector::<f64>::zeros(dim);
            for i in 0..n {
                rhs[i] = -r.dual[i];
            }
            for (q, row) in program.inequalities.iter().enumerate() {
                let t = (p.z[q] * r.ineq[q] - r_sz[q]) / p.s[q];
                for &(j, c) in &row.coeffs {
                    rhs[j] -= c * t;
                }
            }
            for (q, &j) in program.nonnegative.iter().enumerate() {
                rhs[j] -= r_xw[q] / p.x[j];
            }
            for q in 0..me {
                rhs[n + q] = -r.eq[q];
            }
            let mut sol = lu.solve(&rhs)?;
            for _ in 0..REFINEMENT_STEPS {
                let fix = lu.solve(&(&rhs - kkt * &sol))?;
                sol += fix;
            }
            let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
            let dy: Vec<f64> = sol.rows(n, me).iter().copied().collect();
            let mut ds = vec![0.0; mi];
            let mut dz = vec![0.0; mi];
            for (q, row) in program.inequalities.iter().enumerate() {
                let gdx = row.dot(&dx);
                ds[q] = -r.ineq[q] - gdx;
                dz[q] = (-r_sz[q] + p.z[q] * r.ineq[q] + p.z[q] * gdx) / p.s[q];
            }
            let dw = program
                .nonnegative
                .iter()
                .enumerate()
                .map(|(q, &j)| (-r_xw[q] - p.w[q] * dx[j]) / p.x[j])
                .collect();
            if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
                return None;
            }
            Some((dx, dy, ds, dz, dw))
        };
        let step_bound = |dx: &[f64], ds: &[f64], dz: &[f64], dw: &[f64]| {
            let xb: Vec<f64> = program.nonnegative.iter().map(|&j| p.x[j]).collect();
            let dxb: Vec<f64> = program.nonnegative.iter().map(|&j| dx[j]).collect();
            max_step(&p.s, ds)
                .min(max_step(&p.z, dz))
                .min(max_step(&xb, &dxb))
                .min(max_step(&p.w, dw))
        };

        let sz: Vec<f64> = p.s.iter().zip(&p.z).map(|(a, b)| a * b).collect();
        let xw: Vec<f64> = program.nonnegative.iter().zip(&p.w).map(|(&j, w)| p.x[j] * w).collect();
        let Some((dxa, _, dsa, dza, dwa)) = direction(&sz, &xw) else {
            break;
        };
        let alpha_aff = step_bound(&dxa, &dsa, &dza, &dwa);
        let mu_aff = (p
            .s
            .iter()
            .zip(&dsa)
            .zip(p.z.iter().zip(&dza))
            .map(|((s, ds), (z, dz))| (s + alpha_aff * ds) * (z + alpha_aff * dz))
            .sum::<f64>()
            + program
                .nonnegative
                .iter()
                .zip(&dwa)
                .zip(&p.w)
                .map(|((&j, dw), w)| (p.x[j] + alpha_aff * dxa[j]) * (w + alpha_aff * dw))
                .sum::<f64>())
            / m_comp;
        let sigma = libm::pow((mu_aff / mu).clamp(0.0, 1.0), 3.0);
        // keep complementarity off zero until the other residuals catch up
        let target = (sigma * mu).max(0.1 * options.tolerance);
        let r_sz: Vec<f64> = (0..mi).map(|q| sz[q] + dsa[q] * dza[q] - target).collect();
        let r_xw: Vec<f64> = program
            .nonnegative
            .iter()
            .enumerate()
            .map(|(q, &j)| xw[q] + dxa[j] * dwa[q] - target)
            .collect();
        let Some((dx, dy, ds, dz, dw)) = direction(&r_sz, &r_xw) else {
            break;
        };
        let alpha = (STEP_FRACTION * step_bound(&dx, &ds, &dz, &dw)).min(1.0);
        for j in 0..n {
            p.x[j] += alpha * dx[j];
        }
        for q in 0..me {
            p.y[q] += alpha * dy[q];
        }
        for q in 0..mi {
            p.s[q] += alpha * ds[q];
            p.z[q] += alpha * dz[q];
        }
        for q in 0..nb {
            p.w[q] += alpha * dw[q];
        }
    }
    Err(IpmFailure::Stalled {
        primal: last.0,
        residual: last.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_with_bound_and_equality() {
        // min x0² + x1² s.t. x0 + x1 = 2, x1 <= 0.5, x0 >= 0
        let program = Program {
            n: 2,
            terms: vec![
                Term::Quadratic { var: 0, a: 1.0, b: 0.0 },
                Term::Quadratic { var: 1, a: 1.0, b: 0.0 },
            ],
            equalities: vec![LinRow::new(vec![(0, 1.0), (1, 1.0)], 2.0)],
            inequalities: vec![LinRow::new(vec![(1, 1.0)], 0.5)],
            nonnegative: vec![0],
        };
        let sol = solve(&program, &[1.0, 0.0], &IpmOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.5, epsilon = 1e-8);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-8);
        // stationarity: 2 x0 + y = 0, 2 x1 + y + z = 0
        assert_relative_eq!(sol.y[0], -3.0, epsilon = 1e-7);
        assert_relative_eq!(sol.z[0], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn entropy_split_is_logit() {
        // min q1 ln q1 − q1 + q2 ln q2 − q2 + q2 s.t. q1 + q2 = 3
        let program = Program {
            n: 2,
            terms: vec![
                Term::Entropy {
                    vars: vec![0],
                    weight: 1.0,
                    attractiveness: 0.0,
                },
                Term::Entropy {
                    vars: vec![1],
                    weight: 1.0,
                    attractiveness: -1.0,
                },
            ],
            equalities: vec![LinRow::new(vec![(0, 1.0), (1, 1.0)], 3.0)],
            inequalities: vec![],
            nonnegative: vec![0, 1],
        };
        let sol = solve(&program, &[1.5, 1.5], &IpmOptions::default()).unwrap();
        let share = 1.0 / (1.0 + libm::exp(-1.0));
        assert_relative_eq!(sol.x[0], 3.0 * share, epsilon = 1e-8);
    }

    #[test]
    fn infeasible_program_stalls() {
        let program = Program {
            n: 1,
            terms: vec![Term::Quadratic { var: 0, a: 1.0, b: 0.0 }],
            equalities: vec![],
            inequalities: vec![LinRow::new(vec![(0, 1.0)], -1.0)],
            nonnegative: vec![0],
        };
        assert!(solve(&program, &[1.0], &IpmOptions::default()).is_err());
    }
}

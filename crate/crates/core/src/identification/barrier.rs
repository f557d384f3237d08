//! Log-barrier interior-point method for a convex quadratic objective under
//! 4×4 linear matrix inequalities and scalar linear inequalities.

use nalgebra::{DMatrix, DVector, Matrix4};

use crate::error::{Error, Result};

/// `Σ a_i x_i ≥ b`, with `a` given sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn slack(&self, x: &DVector<f64>) -> f64 {
        self.terms.iter().map(|&(i, a)| a * x[i]).sum::<f64>() - self.bound
    }
}

/// `F(x) = F0 + Σ x_i F_i ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lmi {
    pub constant: Matrix4<f64>,
    pub terms: Vec<(usize, Matrix4<f64>)>,
}

impl Lmi {
    pub fn value(&self, x: &DVector<f64>) -> Matrix4<f64> {
        self.terms.iter().fold(self.constant, |acc, (i, f)| acc + f * x[*i])
    }
}

/// `min ½‖Ax − y‖²` subject to the constraints.
#[derive(Clone, Debug)]
pub struct BarrierProblem {
    a: DMatrix<f64>,
    y: DVector<f64>,
    gram: DMatrix<f64>,
    pub linear: Vec<LinearConstraint>,
    pub lmis: Vec<Lmi>,
}

#[derive(Clone, Copy, Debug)]
pub struct BarrierOptions {
    /// Stop when the duality-gap bound falls below `gap_tolerance · max(1, f)`.
    pub gap_tolerance: f64,
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            gap_tolerance: 1e-7,
            growth: 10.0,
            max_newton: 2000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub gap: f64,
    pub newton_iterations: usize,
}

impl BarrierProblem {
    pub fn new(a: DMatrix<f64>, y: DVector<f64>, linear: Vec<LinearConstraint>, lmis: Vec<Lmi>) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::Dimension {
                what: "least-squares right-hand side",
                expected: a.nrows(),
                got: y.len(),
            });
        }
        let gram = a.tr_mul(&a);
        Ok(BarrierProblem { a, y, gram, linear, lmis })
    }

    pub fn dimension(&self) -> usize {
        self.a.ncols()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (&self.a * x - &self.y).norm_squared()
    }

    fn barrier_weight(&self) -> f64 {
        (self.linear.len() + 4 * self.lmis.len()) as f64
    }

    /// Barrier value, or `None` outside the strict interior.
    fn barrier(&self, x: &DVector<f64>) -> Option<f64> {
        let mut phi = 0.0;
        for l in &self.linear {
            let s = l.slack(x);
            if !(s > 0.0) {
                return None;
            }
            phi -= s.ln();
        }
        for m in &self.lmis {
            let chol = m.value(x).cholesky()?;
            phi -= 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(phi)
    }

    fn barrier_derivatives(&self, x: &DVector<f64>, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
        for l in &self.linear {
            let s = l.slack(x);
            for &(i, a) in &l.terms {
                g[i] -= a / s;
                for &(j, b) in &l.terms {
                    h[(i, j)] += a * b / (s * s);
                }
            }
        }
        for m in &self.lmis {
            let inv = m.value(x).try_inverse().expect("interior point");
            let prods: Vec<Matrix4<f64>> = m.terms.iter().map(|(_, f)| inv * f).collect();
            for (a, (i, _)) in m.terms.iter().enumerate() {
                g[*i] -= prods[a].trace();
                for (b, (j, _)) in m.terms.iter().enumerate() {
                    h[(*i, *j)] += (prods[a] * prods[b]).trace();
                }
            }
        }
    }

    pub fn is_strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.barrier(x).is_some()
    }

    /// Follows the central path from a strictly feasible `x0`.
    pub fn solve(&self, x0: DVector<f64>, opts: &BarrierOptions) -> Result<BarrierSolution> {
        if !self.is_strictly_feasible(&x0) {
            return Err(Error::Infeasible("starting point violates the constraints".into()));
        }
        let m = self.barrier_weight();
        let mut x = x0;
        let mut t = (m / self.objective(&x).abs().max(1.0)).max(1e-3);
        let mut newton = 0;
        loop {
            loop {
                let mut g = self.a.tr_mul(&(&self.a * &x - &self.y)) * t;
                let mut h = &self.gram * t;
                self.barrier_derivatives(&x, &mut g, &mut h);
                let dx = match h.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&g)),
                    None => pseudo_solve(&h, &g),
                };
                let merit = |y: &DVector<f64>| self.barrier(y).map(|p| t * self.objective(y) + p);
                let current = merit(&x).expect("interior point");
                // below this the merit function cannot resolve the decrease
                let floor = 1e-10f64.max(1e-13 * current.abs());
                let decrement = -g.dot(&dx);
                if decrement * 0.5 <= floor {
                    break;
                }
                newton += 1;
                if newton > opts.max_newton {
                    return Err(Error::NoConvergence(format!(
                        "{} Newton steps without reaching the gap tolerance",
                        opts.max_newton
                    )));
                }
                let mut step = 1.0;
                let mut moved = false;
                while step > 1e-10 {
                    let y = &x + &dx * step;
                    if let Some(v) = merit(&y) {
                        if v <= current - 0.25 * step * decrement {
                            x = y;
                            moved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            let f = self.objective(&x);
            let gap = m / t;
            if gap <= opts.gap_tolerance * f.abs().max(1.0) {
                return Ok(BarrierSolution {
                    objective: f,
                    x,
                    gap,
                    newton_iterations: newton,
                });
            }
            t *= opts.growth;
        }
    }
}

/// Minimum-norm Newton step `−H⁺g` for a semidefinite `H`, ignoring
/// directions in which neither the objective nor any constraint curves.
fn pseudo_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let eig = h.clone().symmetric_eigen();
    let tol = 1e-13 * eig.eigenvalues.amax();
    let proj = eig.eigenvectors.transpose() * g;
    let scaled = DVector::from_fn(proj.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l > tol {
            -proj[i] / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * scaled
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_constrained_quadratic() {
        // min ½|x - (2, -1)|² with x ≥ 0 → (2, 0)
        let p = BarrierProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![2.0, -1.0]),
            vec![
                LinearConstraint { terms: vec![(0, 1.0)], bound: 0.0 },
                LinearConstraint { terms: vec![(1, 1.0)], bound: 0.0 },
            ],
            vec![],
        )
        .unwrap();
        let s = p.solve(DVector::from_vec(vec![1.0, 1.0]), &BarrierOptions::default()).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-6 && s.x[1].abs() < 1e-6, "{}", s.x);
        assert!((s.objective - 0.5).abs() < 1e-6);
    }

    #[test]
    fn lmi_keeps_matrix_psd() {
        // min ½|x - (-1)|² with diag(x, 1, 1, 1) ⪰ 0 → 0
        let mut f = Matrix4::zeros();
        f[(0, 0)] = 1.0;
        let p = BarrierProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_vec(vec![-1.0]),
            vec![],
            vec![Lmi {
                constant: Matrix4::from_diagonal(&nalgebra::Vector4::new(0.0, 1.0, 1.0, 1.0)),
                terms: vec![(0, f)],
            }],
        )
        .unwrap();
        let s = p.solve(DVector::from_vec(vec![3.0]), &BarrierOptions::default()).unwrap();
        assert!(s.x[0] >= 0.0 && s.x[0] < 1e-6);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let p = BarrierProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            vec![LinearConstraint { terms: vec![(0, 1.0)], bound: 1.0 }],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            p.solve(DVector::zeros(1), &BarrierOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }
}

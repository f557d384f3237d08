use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stack_regressor, MotorState};
use crate::error::Result;
use crate::model::RobotModel;

/// Relative rank tolerance on `|R_ii|`.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Acceleration bound for structural sampling, rad/s² (or m/s²).
pub const SAMPLE_ACCEL_BOUND: f64 = 10.0;

/// Householder QR with column pivoting, `A P = Q R`.
#[derive(Clone, Debug)]
pub struct PivotedQr {
    /// `R` without `Q`, `min(m, n) × n`, columns in pivot order.
    pub r: DMatrix<f64>,
    /// `perm[k]` is the original column placed at position `k`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

/// Pivots on the largest remaining column norm; stops once it falls to
/// `tol · |R_11|`.
pub fn qr_column_pivoting(a: &DMatrix<f64>, tol: f64) -> PivotedQr {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = m.min(n);
    let mut rank = 0;
    let mut r11 = 0.0;
    for k in 0..steps {
        let (mut best, mut best_norm) = (k, -1.0);
        for j in k..n {
            let nrm = w.column(j).rows(k, m - k).norm();
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        if k == 0 {
            r11 = best_norm;
        }
        if best_norm <= tol * r11 || best_norm == 0.0 {
            break;
        }
        if best != k {
            w.swap_columns(k, best);
            perm.swap(k, best);
        }
        // Householder vector for column k below the diagonal.
        let x0 = w[(k, k)];
        let alpha = if x0 >= 0.0 { -best_norm } else { best_norm };
        let mut v = w.column(k).rows(k, m - k).into_owned();
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for j in k + 1..n {
                let mut col = w.column_mut(j);
                let mut col = col.rows_mut(k, m - k);
                let s = 2.0 * v.dot(&col) / vnorm2;
                col.axpy(-s, &v, 1.0);
            }
        }
        w[(k, k)] = alpha;
        for i in k + 1..m {
            w[(i, k)] = 0.0;
        }
        rank = k + 1;
    }
    let r = w.rows(0, steps).upper_triangle();
    PivotedQr { r, perm, rank }
}

/// Base-parameter reduction: `W δ = W_b δ_b` with `W_b = W[:, independent]`
/// and `δ_b = δ_I + K_d δ_D`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseReduction {
    /// Independent columns (`P_b`), ascending.
    pub independent: Vec<usize>,
    /// Dependent columns, ascending.
    pub dependent: Vec<usize>,
    /// Regrouping coefficients, `b × (n − b)`.
    pub k_d: DMatrix<f64>,
    pub parameter_count: usize,
}

impl BaseReduction {
    /// Builds the reduction from a stacked regressor.
    pub fn from_stacked(w: &DMatrix<f64>) -> Self {
        let n = w.ncols();
        let qr = qr_column_pivoting(w, RANK_TOLERANCE);
        let b = qr.rank;
        let r1 = qr.r.view((0, 0), (b, b)).into_owned();
        let r2 = qr.r.view((0, b), (b, n - b)).into_owned();
        let k_pivot = if b == 0 {
            DMatrix::zeros(0, n - b)
        } else {
            r1.solve_upper_triangular(&r2).expect("R1 is nonsingular up to rank")
        };

        let mut ind: Vec<(usize, usize)> = qr.perm[..b].iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
        let mut dep: Vec<(usize, usize)> = qr.perm[b..].iter().copied().enumerate().map(|(i, c)| (c, i)).collect();
        ind.sort();
        dep.sort();
        let k_d = DMatrix::from_fn(b, n - b, |r, c| k_pivot[(ind[r].1, dep[c].1)]);
        BaseReduction {
            independent: ind.into_iter().map(|(c, _)| c).collect(),
            dependent: dep.into_iter().map(|(c, _)| c).collect(),
            k_d,
            parameter_count: n,
        }
    }

    pub fn b(&self) -> usize {
        self.independent.len()
    }

    /// `δ_b = δ_I + K_d δ_D`.
    pub fn base_parameters(&self, delta: &DVector<f64>) -> DVector<f64> {
        let di = DVector::from_iterator(self.b(), self.independent.iter().map(|&i| delta[i]));
        let dd = DVector::from_iterator(self.dependent.len(), self.dependent.iter().map(|&i| delta[i]));
        di + &self.k_d * dd
    }

    /// `W_b = W P_b`.
    pub fn select(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        w.select_columns(&self.independent)
    }

    /// Standard vector whose base projection is `delta_b` (dependent entries zero).
    pub fn lift(&self, delta_b: &DVector<f64>) -> DVector<f64> {
        let mut d = DVector::zeros(self.parameter_count);
        for (k, &i) in self.independent.iter().enumerate() {
            d[i] = delta_b[k];
        }
        d
    }

    /// CSV with one row per base parameter: index, column and regrouping terms.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("base,column,label,regrouped\n");
        for (r, &c) in self.independent.iter().enumerate() {
            let terms: Vec<String> = self
                .dependent
                .iter()
                .enumerate()
                .filter(|(k, _)| self.k_d[(r, *k)].abs() > 1e-12)
                .map(|(k, &d)| format!("{:+.12e}*{}", self.k_d[(r, k)], labels[d]))
                .collect();
            out.push_str(&format!("{r},{c},{},{}\n", labels[c], terms.join(" ")));
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random motor states: basis positions uniform within their limits (±π when
/// unlimited), velocities within the velocity limits (±1 when unlimited),
/// accelerations within ±10.
pub fn sample_states(model: &RobotModel, count: usize, seed: u64) -> Vec<MotorState> {
    let c = model.coupling();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_b = c.basis_selector.len();
    let bounds: Vec<(f64, f64, f64, f64)> = c
        .basis_selector
        .iter()
        .map(|&i| match model.limit_for(i) {
            Some(l) => (l.q_min, l.q_max, l.dq_min, l.dq_max),
            None => (-std::f64::consts::PI, std::f64::consts::PI, -1.0, 1.0),
        })
        .collect();
    (0..count)
        .map(|_| {
            let q_b = DVector::from_iterator(n_b, bounds.iter().map(|b| uniform(&mut rng, b.0, b.1)));
            let dq_b = DVector::from_iterator(n_b, bounds.iter().map(|b| uniform(&mut rng, b.2, b.3)));
            let ddq_b = DVector::from_iterator(
                n_b,
                (0..n_b).map(|_| uniform(&mut rng, -SAMPLE_ACCEL_BOUND, SAMPLE_ACCEL_BOUND)),
            );
            MotorState {
                q: c.motor_from_basis(&q_b),
                dq: c.motor_rate_from_basis(&dq_b),
                ddq: c.motor_rate_from_basis(&ddq_b),
            }
        })
        .collect()
}

/// Structural base-parameter reduction from `sample_count` random states.
pub fn base_reduction(model: &RobotModel, sample_count: usize, seed: u64) -> Result<BaseReduction> {
    let states = sample_states(model, sample_count, seed);
    let w = stack_regressor(model, &states)?;
    Ok(BaseReduction::from_stacked(&w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_qr_finds_duplicate_column() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 0.0, 1.0, 1.0, 3.0, 0.0, 0.0, 1.0, 5.0, 5.0]);
        let red = BaseReduction::from_stacked(&a);
        assert_eq!(red.b(), 2);
        let delta = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let lhs = &a * &delta;
        let rhs = red.select(&a) * red.base_parameters(&delta);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn empty_matrix_has_rank_zero() {
        let red = BaseReduction::from_stacked(&DMatrix::zeros(5, 0));
        assert_eq!(red.b(), 0);
        let red = BaseReduction::from_stacked(&DMatrix::zeros(5, 2));
        assert_eq!(red.b(), 0);
        assert_eq!(red.dependent, vec![0, 1]);
    }
}

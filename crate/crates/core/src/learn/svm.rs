//! One-vs-rest soft-margin SVMs solved by sequential minimal optimization.
//!
//! The binary solver follows the LIBSVM formulation: it minimizes
//! `½ αᵀQα − eᵀα` subject to `0 ≤ α ≤ C` and `yᵀα = 0`, picking the working
//! pair by maximal violation and second-order gain, and stops once the
//! maximal KKT violation drops below `tol`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{BinReader, BinWriter};
use crate::vocab::sq_dist;

/// Full Gram matrices are cached up to this many training rows.
pub const FULL_GRAM_LIMIT: usize = 20_000;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: Kernel,
    pub c: f64,
    /// Maximal KKT violation at termination.
    pub tol: f64,
    /// Iteration cap, in multiples of the training-set size.
    pub max_passes: usize,
    /// Recorded for reproducibility; the solver itself draws no random numbers.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            kernel: Kernel::Linear,
            c: 1.0,
            tol: 1e-3,
            max_passes: 1000,
            seed: 0,
        }
    }
}

/// Kernel values between training rows, either precomputed or on demand.
pub enum GramMatrix<'a> {
    Full(Array2<f64>),
    OnDemand { x: ArrayView2<'a, f64>, kernel: Kernel },
}

impl<'a> GramMatrix<'a> {
    pub fn new(x: ArrayView2<'a, f64>, kernel: Kernel) -> Self {
        let m = x.nrows();
        if m > FULL_GRAM_LIMIT {
            return GramMatrix::OnDemand { x, kernel };
        }
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i).to_vec();
                (0..m).map(|j| kernel.eval(&xi, &x.row(j).to_vec())).collect()
            })
            .collect();
        GramMatrix::Full(Array2::from_shape_vec((m, m), rows.concat()).unwrap())
    }

    pub fn precomputed(k: Array2<f64>) -> Self {
        GramMatrix::Full(k)
    }

    fn len(&self) -> usize {
        match self {
            GramMatrix::Full(k) => k.nrows(),
            GramMatrix::OnDemand { x, .. } => x.nrows(),
        }
    }

    fn row(&self, i: usize) -> std::borrow::Cow<'_, [f64]> {
        match self {
            GramMatrix::Full(k) => std::borrow::Cow::Borrowed(k.row(i).to_slice().unwrap()),
            GramMatrix::OnDemand { x, kernel } => {
                let xi = x.row(i).to_vec();
                std::borrow::Cow::Owned((0..x.nrows()).map(|j| kernel.eval(&xi, &x.row(j).to_vec())).collect())
            }
        }
    }

    fn diag(&self, i: usize) -> f64 {
        match self {
            GramMatrix::Full(k) => k[[i, i]],
            GramMatrix::OnDemand { x, kernel } => {
                let xi = x.row(i).to_vec();
                kernel.eval(&xi, &xi)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ αᵢ yᵢ K(xᵢ, x) + bias`.
    pub bias: f64,
    /// `Σ α − ½ αᵀQα` (to be maximized).
    pub objective: f64,
    pub iterations: usize,
}

/// Solves the binary dual for labels `y ∈ {−1, +1}`.
pub fn solve_dual(gram: &GramMatrix<'_>, y: &[f64], c: f64, tol: f64, max_iter: usize) -> DualSolution {
    let m = gram.len();
    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];
    let diag: Vec<f64> = (0..m).map(|i| gram.diag(i)).collect();
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    while iterations < max_iter {
        // maximal violating index from I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..m {
            let v = -y[t] * grad[t];
            let eligible = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if eligible && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else { break };
        let k_i = gram.row(i);

        // second-order choice from I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_gain = f64::INFINITY;
        for t in 0..m {
            let eligible = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !eligible {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let quad = diag[i] + diag[t] - 2.0 * k_i[t];
                let gain = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best_gain {
                    best_gain = gain;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < tol {
            break;
        }
        let Some(j) = j_sel else { break };
        iterations += 1;
        let k_j = gram.row(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let q_ij = y[i] * y[j] * k_i[j];
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] + 2.0 * q_ij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * q_ij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..m {
            grad[t] += y[t] * (y[i] * k_i[t] * di + y[j] * k_j[t] * dj);
        }
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb, mut sum_free, mut n_free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..m {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = alpha.iter().zip(&grad).map(|(a, g)| a - 0.5 * a * (g + 1.0)).sum();
    DualSolution {
        alpha,
        bias: -rho,
        objective,
        iterations,
    }
}

/// One binary machine, positive = its class.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub support_vectors: Array2<f64>,
    /// `αᵢ yᵢ` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support_vectors
            .rows()
            .into_iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * kernel.eval(sv.as_slice().unwrap(), x))
            .sum::<f64>()
            + self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Class labels in column order of the decision values.
    pub classes: Vec<usize>,
    pub machines: Vec<BinaryMachine>,
    pub config: SvmConfig,
    pub n_features: usize,
}

pub(crate) fn validate_training(x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<usize>> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    for ((row, col), v) in x.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature { row, col });
        }
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if x.nrows() < 2 || classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(classes)
}

pub fn svm_train(x: ArrayView2<f64>, y: &[usize], cfg: &SvmConfig) -> Result<SvmModel> {
    let classes = validate_training(x, y)?;
    if !(cfg.c > 0.0) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", cfg.c)));
    }
    if let Kernel::Rbf { gamma } = cfg.kernel {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
    }
    let x = x.as_standard_layout();
    let gram = GramMatrix::new(x.view(), cfg.kernel);
    let max_iter = cfg.max_passes.saturating_mul(x.nrows()).max(1);
    let machines = classes
        .par_iter()
        .map(|&class| {
            let signs: Vec<f64> = y.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let sol = solve_dual(&gram, &signs, cfg.c, cfg.tol, max_iter);
            let sv: Vec<usize> = (0..x.nrows()).filter(|&i| sol.alpha[i] > 0.0).collect();
            BinaryMachine {
                support_vectors: x.select(ndarray::Axis(0), &sv),
                coef: sv.iter().map(|&i| sol.alpha[i] * signs[i]).collect(),
                bias: sol.bias,
            }
        })
        .collect();
    Ok(SvmModel {
        classes,
        machines,
        config: *cfg,
        n_features: x.ncols(),
    })
}

impl SvmModel {
    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// `M × classes` raw decision values.
    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let x = x.as_standard_layout();
        let rows: Vec<f64> = (0..x.nrows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = x.row(i).to_vec();
                self.machines
                    .iter()
                    .map(|m| m.decision(&self.config.kernel, &xi))
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Array2::from_shape_vec((x.nrows(), self.classes.len()), rows).unwrap())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let values = self.decision_values(x)?;
        Ok(super::argmax_rows(&values)
            .into_iter()
            .map(|c| self.classes[c])
            .collect())
    }

    pub fn support_vector_counts(&self) -> Vec<usize> {
        self.machines.iter().map(|m| m.coef.len()).collect()
    }

    pub(crate) fn write(&self, w: &mut BinWriter) {
        match self.config.kernel {
            Kernel::Linear => {
                w.u8(0);
                w.f64(0.0);
            }
            Kernel::Rbf { gamma } => {
                w.u8(1);
                w.f64(gamma);
            }
        }
        w.f64(self.config.c);
        w.f64(self.config.tol);
        w.u64(self.config.max_passes as u64);
        w.u64(self.config.seed);
        w.u32(self.n_features as u32);
        w.u32(self.classes.len() as u32);
        for (class, m) in self.classes.iter().zip(&self.machines) {
            w.u32(*class as u32);
            w.f64(m.bias);
            w.u32(m.coef.len() as u32);
            w.f64s(&m.coef);
            w.f64s(m.support_vectors.as_standard_layout().as_slice().unwrap());
        }
    }

    pub(crate) fn read(r: &mut BinReader<'_>) -> Result<Self> {
        let kernel = match (r.u8("kernel")?, r.f64("gamma")?) {
            (0, _) => Kernel::Linear,
            (1, gamma) => Kernel::Rbf { gamma },
            (t, _) => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        let config = SvmConfig {
            kernel,
            c: r.f64("C")?,
            tol: r.f64("tol")?,
            max_passes: r.u64("max passes")? as usize,
            seed: r.u64("seed")?,
        };
        let n_features = r.u32("features")? as usize;
        let n_classes = r.u32("classes")? as usize;
        let mut classes = Vec::with_capacity(n_classes);
        let mut machines = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            classes.push(r.u32("class")? as usize);
            let bias = r.f64("bias")?;
            let n_sv = r.u32("support vectors")? as usize;
            let coef = r.f64s(n_sv, "coefficients")?;
            let support_vectors =
                Array2::from_shape_vec((n_sv, n_features), r.f64s(n_sv * n_features, "support vectors")?)
                    .map_err(|e| Error::Format(e.to_string()))?;
            machines.push(BinaryMachine {
                support_vectors,
                coef,
                bias,
            });
        }
        Ok(SvmModel {
            classes,
            machines,
            config,
            n_features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(kernel: Kernel, c: f64) -> SvmConfig {
        SvmConfig {
            kernel,
            c,
            tol: 1e-6,
            ..SvmConfig::default()
        }
    }

    #[test]
    fn symmetric_pair() {
        let x = array![[-1.0], [1.0]];
        let model = svm_train(x.view(), &[0, 1], &cfg(Kernel::Linear, 1000.0)).unwrap();
        assert_eq!(model.predict(x.view()).unwrap(), vec![0, 1]);
        let dv = model.decision_values(array![[0.0]].view()).unwrap();
        assert!(dv[[0, 0]].abs() < 1e-9 && dv[[0, 1]].abs() < 1e-9);
        // both points sit on the margin
        let dv = model.decision_values(x.view()).unwrap();
        assert!((dv[[0, 0]] - 1.0).abs() < 1e-6 && (dv[[1, 1]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn xor_with_rbf() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [0, 0, 1, 1];
        let model = svm_train(x.view(), &y, &cfg(Kernel::Rbf { gamma: 1.0 }, 10.0)).unwrap();
        assert_eq!(model.predict(x.view()).unwrap(), y.to_vec());
    }

    #[test]
    fn linear_decision_is_affine() {
        let x = array![[0.0, 0.0], [1.0, 0.5], [3.0, 3.0], [4.0, 2.5]];
        let model = svm_train(x.view(), &[0, 0, 1, 1], &cfg(Kernel::Linear, 10.0)).unwrap();
        let p = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let dv = model.decision_values(p.view()).unwrap();
        let step1 = dv[[1, 1]] - dv[[0, 1]];
        let step2 = dv[[2, 1]] - dv[[1, 1]];
        assert!((step1 - step2).abs() < 1e-9);
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((40, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| if r[0] + 0.3 * r[1] > 0.1 { 1.0 } else { -1.0 })
            .collect();
        let tol = 1e-4;
        let c = 2.0;
        for kernel in [Kernel::Linear, Kernel::Rbf { gamma: 0.7 }] {
            let gram = GramMatrix::new(x.view(), kernel);
            let sol = solve_dual(&gram, &y, c, tol, 1_000_000);
            let GramMatrix::Full(k) = &gram else { unreachable!() };
            for i in 0..40 {
                let f: f64 = (0..40).map(|j| sol.alpha[j] * y[j] * k[[i, j]]).sum::<f64>() + sol.bias;
                let margin = y[i] * f;
                let a = sol.alpha[i];
                assert!((0.0..=c).contains(&a));
                if a == 0.0 {
                    assert!(margin >= 1.0 - tol, "{margin}");
                } else if a < c {
                    assert!((margin - 1.0).abs() <= tol, "{margin}");
                } else {
                    assert!(margin <= 1.0 + tol, "{margin}");
                }
            }
            let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
            assert!(balance.abs() < 1e-9);
        }
    }

    #[test]
    fn duplicating_points_keeps_the_decision_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((12, 2), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = x.rows().into_iter().map(|r| (r[0] * r[1] > 0.0) as usize).collect();
        let doubled = ndarray::concatenate![ndarray::Axis(0), x, x];
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        // with no multiplier at the box bound, duplication leaves the optimum unchanged
        let c = cfg(Kernel::Rbf { gamma: 2.0 }, 1e6);
        let a = svm_train(x.view(), &y, &c).unwrap();
        let b = svm_train(doubled.view(), &y2, &c).unwrap();
        assert!(a.machines.iter().flat_map(|m| &m.coef).all(|v| v.abs() < 1e6));
        let probe = Array2::from_shape_fn((21 * 21, 2), |(i, d)| {
            let (r, q) = (i / 21, i % 21);
            -1.0 + 0.1 * if d == 0 { r as f64 } else { q as f64 }
        });
        let (da, db) = (
            a.decision_values(probe.view()).unwrap(),
            b.decision_values(probe.view()).unwrap(),
        );
        let mut mismatches = 0;
        for (p, q) in da.iter().zip(db.iter()) {
            if p.signum() != q.signum() && p.abs().min(q.abs()) > 1e-3 {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }

    /// Accelerated projected gradient on `{0 ≤ α ≤ C, yᵀα = 0}`; the
    /// projection solves for the hyperplane multiplier by bisection.
    fn qp_oracle(k: &Array2<f64>, y: &[f64], c: f64) -> f64 {
        let m = y.len();
        let q = Array2::from_shape_fn((m, m), |(i, j)| y[i] * y[j] * k[[i, j]]);
        let project = |v: &[f64]| -> Vec<f64> {
            let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(a, yi)| (a - lam * yi).clamp(0.0, c)).collect() };
            let (mut lo, mut hi) = (-1e6, 1e6);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let s: f64 = at(mid).iter().zip(y).map(|(a, yi)| a * yi).sum();
                if s > 0.0 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            at(0.5 * (lo + hi))
        };
        let lipschitz = q.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        let objective = |a: &[f64]| -> f64 {
            let qa: Vec<f64> = (0..m).map(|i| (0..m).map(|j| q[[i, j]] * a[j]).sum()).collect();
            a.iter().sum::<f64>() - 0.5 * a.iter().zip(&qa).map(|(x, z)| x * z).sum::<f64>()
        };
        let mut a = vec![0.0; m];
        let mut z = a.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let grad: Vec<f64> = (0..m)
                .map(|i| 1.0 - (0..m).map(|j| q[[i, j]] * z[j]).sum::<f64>())
                .collect();
            let step: Vec<f64> = z.iter().zip(&grad).map(|(zi, g)| zi + g / lipschitz).collect();
            let next = project(&step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = next
                .iter()
                .zip(&a)
                .map(|(n, o)| n + (t - 1.0) / t_next * (n - o))
                .collect();
            a = next;
            t = t_next;
        }
        objective(&a)
    }

    #[test]
    fn dual_objective_matches_qp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (case, kernel) in [Kernel::Linear, Kernel::Rbf { gamma: 1.0 }, Kernel::Rbf { gamma: 0.1 }]
            .into_iter()
            .enumerate()
        {
            let m = 8 + 4 * case;
            let x = Array2::from_shape_fn((m, 2), |_| rng.random_range(-1.0..1.0));
            let y: Vec<f64> = x
                .rows()
                .into_iter()
                .map(|r| {
                    if r[0] - r[1] + 0.2 * r[0] * r[1] > 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            let gram = GramMatrix::new(x.view(), kernel);
            let sol = solve_dual(&gram, &y, 1.0, 1e-8, 1_000_000);
            let GramMatrix::Full(k) = &gram else { unreachable!() };
            let oracle = qp_oracle(k, &y, 1.0);
            assert!(
                (sol.objective - oracle).abs() <= 1e-4 * oracle.abs().max(1.0),
                "{} vs {oracle}",
                sol.objective
            );
        }
    }

    #[test]
    fn xor_matches_oracle_objective() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [1.0, 1.0, -1.0, -1.0];
        let gram = GramMatrix::new(x.view(), Kernel::Rbf { gamma: 1.0 });
        let sol = solve_dual(&gram, &y, 10.0, 1e-8, 100_000);
        let GramMatrix::Full(k) = &gram else { unreachable!() };
        let oracle = qp_oracle(k, &y, 10.0);
        assert!((sol.objective - oracle).abs() <= 1e-4 * oracle.abs());
    }

    #[test]
    fn point_deep_in_a_region_and_ties() {
        let x = array![[-5.0], [-4.0], [4.0], [5.0]];
        let model = svm_train(x.view(), &[2, 2, 6, 6], &cfg(Kernel::Linear, 10.0)).unwrap();
        assert_eq!(model.predict(array![[-5.0]].view()).unwrap(), vec![2]);
        // the two one-vs-rest machines are mirror images, so 0 is an exact tie
        assert_eq!(model.predict(array![[0.0]].view()).unwrap(), vec![2]);
    }

    #[test]
    fn errors() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(
            svm_train(x.view(), &[1, 1], &SvmConfig::default()),
            Err(Error::SingleClass)
        ));
        let bad = array![[0.0], [f64::INFINITY]];
        assert!(matches!(
            svm_train(bad.view(), &[0, 1], &SvmConfig::default()),
            Err(Error::NonFiniteFeature { row: 1, col: 0 })
        ));
        let model = svm_train(x.view(), &[0, 1], &SvmConfig::default()).unwrap();
        assert!(matches!(
            model.predict(array![[0.0, 1.0]].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn on_demand_gram_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((15, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..15).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let kernel = Kernel::Rbf { gamma: 0.5 };
        let full = solve_dual(&GramMatrix::new(x.view(), kernel), &y, 1.0, 1e-6, 100_000);
        let lazy = solve_dual(&GramMatrix::OnDemand { x: x.view(), kernel }, &y, 1.0, 1e-6, 100_000);
        assert_eq!(full.alpha, lazy.alpha);
    }
}

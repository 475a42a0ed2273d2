//! Pooling vocabularies: k-Means codebooks (BoW) and diagonal Gaussian
//! mixtures fitted by EM (Fisher Vectors).

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::{BinReader, BinWriter, MODEL_MAGIC};

pub(crate) const KIND_CODEBOOK: u8 = 1;
pub(crate) const KIND_GMM: u8 = 2;

/// Absolute lower bound on any mixture variance.
pub const MIN_VARIANCE: f64 = 1e-10;

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: ArrayView2<f64>) -> Result<()> {
    if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
        let d = points.ncols().max(1);
        return Err(Error::NonFiniteValue(format!(
            "point {} dimension {}",
            pos / d,
            pos % d
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `k × D`.
    pub centroids: Array2<f64>,
    /// Sum of squared distances of the training points to their centroid.
    pub inertia: f64,
    /// Inertia after every assignment step, ending with the final value.
    pub inertia_trace: Vec<f64>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(MODEL_MAGIC);
        w.u8(KIND_CODEBOOK);
        w.u32(self.k() as u32);
        w.u32(self.dim() as u32);
        w.f64(self.inertia);
        w.f64s(self.centroids.as_standard_layout().as_slice().unwrap());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        expect_kind(&mut r, KIND_CODEBOOK)?;
        let k = r.u32("k")? as usize;
        let d = r.u32("dimension")? as usize;
        let inertia = r.f64("inertia")?;
        let centroids =
            Array2::from_shape_vec((k, d), r.f64s(k * d, "centroids")?).map_err(|e| Error::Format(e.to_string()))?;
        r.finish()?;
        Ok(Codebook {
            centroids,
            inertia,
            inertia_trace: vec![inertia],
        })
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "codebook\nk\t{}\nD\t{}\ninertia\t{:.6}\ncluster\tcentroid_norm\n",
            self.k(),
            self.dim(),
            self.inertia
        );
        for (j, c) in self.centroids.rows().into_iter().enumerate() {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let _ = writeln!(s, "{j}\t{norm:.6}");
        }
        s
    }
}

pub(crate) fn expect_kind(r: &mut BinReader<'_>, kind: u8) -> Result<()> {
    let found = r.u8("model kind")?;
    if found != kind {
        return Err(Error::Format(format!("model kind {found}, expected {kind}")));
    }
    Ok(())
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c.as_slice().unwrap());
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &Array2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| nearest(points.row(i).as_slice().unwrap(), centroids))
        .collect()
}

fn kmeans_pp_init(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| {
            sq_dist(
                points.row(i).as_slice().unwrap(),
                points.row(chosen[0]).as_slice().unwrap(),
            )
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the accumulated total
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        let c = points.row(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i).as_slice().unwrap(), c.as_slice().unwrap()));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans_fit(points: ArrayView2<f64>, params: &KMeansParams) -> Result<Codebook> {
    let (n, d) = points.dim();
    if params.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if n < params.k {
        return Err(Error::TooFewPoints {
            points: n,
            clusters: params.k,
        });
    }
    check_points(points)?;
    let points = points.as_standard_layout().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = kmeans_pp_init(&points, params.k, &mut rng);
    let mut trace = Vec::new();

    for _ in 0..params.max_iter {
        let assignment = assign_all(&points, &centroids);
        trace.push(assignment.iter().map(|a| a.1).sum::<f64>());

        let mut sums = Array2::<f64>::zeros((params.k, d));
        let mut counts = vec![0usize; params.k];
        for (i, &(j, _)) in assignment.iter().enumerate() {
            counts[j] += 1;
            sums.row_mut(j).zip_mut_with(&points.row(i), |s, &x| *s += x);
        }
        let mut next = centroids.clone();
        let mut taken = vec![false; n];
        #[allow(clippy::needless_range_loop)]
        for j in 0..params.k {
            if counts[j] > 0 {
                next.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // reseed to the point farthest from its current centroid
                let mut far = None;
                for (i, &(_, dist)) in assignment.iter().enumerate() {
                    if !taken[i] && far.is_none_or(|(_, best)| dist > best) {
                        far = Some((i, dist));
                    }
                }
                let (i, _) = far.expect("n >= k leaves a point to reseed with");
                taken[i] = true;
                next.row_mut(j).assign(&points.row(i));
            }
        }
        let shift = next
            .rows()
            .into_iter()
            .zip(centroids.rows())
            .map(|(a, b)| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < params.tol {
            break;
        }
    }
    let inertia = assign_all(&points, &centroids).iter().map(|a| a.1).sum::<f64>();
    trace.push(inertia);
    Ok(Codebook {
        centroids,
        inertia,
        inertia_trace: trace,
    })
}

/// Index of the nearest centroid for every point; ties go to the lowest index.
pub fn kmeans_assign(points: ArrayView2<f64>, codebook: &Codebook) -> Result<Vec<usize>> {
    if points.ncols() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            expected: codebook.dim(),
            found: points.ncols(),
        });
    }
    let points = points.as_standard_layout();
    Ok((0..points.nrows())
        .map(|i| nearest(points.row(i).as_slice().unwrap(), &codebook.centroids).0)
        .collect())
}

/// Seeded uniform subset of at most `max_rows` rows, kept in original order.
pub fn sample_rows(points: ArrayView2<f64>, max_rows: usize, seed: u64) -> Array2<f64> {
    let n = points.nrows();
    if n <= max_rows {
        return points.to_owned();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, max_rows).into_vec();
    picked.sort_unstable();
    points.select(Axis(0), &picked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarFloor {
    /// Multiple of each dimension's global variance (never below [`MIN_VARIANCE`]).
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the mean per-point log-likelihood gains less than this.
    pub tol: f64,
    pub var_floor: VarFloor,
}

impl GmmParams {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
            var_floor: VarFloor::Relative(1e-6),
        }
    }
}

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `k × D`.
    pub means: Array2<f64>,
    /// `k × D` diagonal variances.
    pub variances: Array2<f64>,
    /// Mean per-point log-likelihood after every E-step.
    pub log_likelihood_trace: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// Per-component `log w_j − ½ Σ_d log(2π σ²_jd)`.
    fn log_norms(&self) -> Vec<f64> {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.variances
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(var, &w)| w.ln() - 0.5 * var.iter().map(|v| ln2pi + v.ln()).sum::<f64>())
            .collect()
    }

    /// Log-responsibilities of one point and its log-density.
    fn log_posterior_row(&self, x: &[f64], log_norms: &[f64], out: &mut [f64]) -> f64 {
        for j in 0..self.k() {
            let mu = self.means.row(j);
            let var = self.variances.row(j);
            let mut q = 0.0;
            for d in 0..x.len() {
                let diff = x[d] - mu[d];
                q += diff * diff / var[d];
            }
            out[j] = log_norms[j] - 0.5 * q;
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.iter_mut().for_each(|v| *v -= lse);
        lse
    }

    /// Responsibilities (`N × k`) and the mean per-point log-likelihood.
    fn e_step(&self, points: &Array2<f64>) -> (Array2<f64>, f64) {
        let k = self.k();
        let norms = self.log_norms();
        let rows: Vec<(Vec<f64>, f64)> = (0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; k];
                let ll = self.log_posterior_row(points.row(i).as_slice().unwrap(), &norms, &mut row);
                row.iter_mut().for_each(|v| *v = v.exp());
                (row, ll)
            })
            .collect();
        let mut resp = Array2::zeros((points.nrows(), k));
        let mut total = 0.0;
        for (i, (row, ll)) in rows.into_iter().enumerate() {
            resp.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
            total += ll;
        }
        (resp, total / points.nrows() as f64)
    }

    /// Mean per-point log-likelihood.
    pub fn mean_log_likelihood(&self, points: ArrayView2<f64>) -> Result<f64> {
        self.check_dim(points.ncols())?;
        Ok(self.e_step(&points.as_standard_layout().into_owned()).1)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: d,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::with_magic(MODEL_MAGIC);
        w.u8(KIND_GMM);
        w.u32(self.k() as u32);
        w.u32(self.dim() as u32);
        w.f64s(&self.weights);
        w.f64s(self.means.as_standard_layout().as_slice().unwrap());
        w.f64s(self.variances.as_standard_layout().as_slice().unwrap());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.magic(MODEL_MAGIC)?;
        expect_kind(&mut r, KIND_GMM)?;
        let k = r.u32("k")? as usize;
        let d = r.u32("dimension")? as usize;
        let weights = r.f64s(k, "weights")?;
        let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
        let means = Array2::from_shape_vec((k, d), r.f64s(k * d, "means")?).map_err(shape_err)?;
        let variances = Array2::from_shape_vec((k, d), r.f64s(k * d, "variances")?).map_err(shape_err)?;
        r.finish()?;
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Format("non-positive variance".into()));
        }
        Ok(GmmModel {
            weights,
            means,
            variances,
            log_likelihood_trace: Vec::new(),
        })
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "gmm\nk\t{}\nD\t{}\ncomponent\tweight\tmean_norm\n",
            self.k(),
            self.dim()
        );
        for (j, m) in self.means.rows().into_iter().enumerate() {
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            let _ = writeln!(s, "{j}\t{:.6}\t{norm:.6}", self.weights[j]);
        }
        s
    }
}

fn variance_floor(points: &Array2<f64>, floor: VarFloor) -> Vec<f64> {
    match floor {
        VarFloor::Absolute(v) => vec![v.max(MIN_VARIANCE); points.ncols()],
        VarFloor::Relative(scale) => points
            .var_axis(Axis(0), 0.0)
            .iter()
            .map(|&v| (scale * v).max(MIN_VARIANCE))
            .collect(),
    }
}

/// EM for a diagonal GMM, initialized from [`kmeans_fit`] with the same seed.
pub fn gmm_fit(points: ArrayView2<f64>, params: &GmmParams) -> Result<GmmModel> {
    let (n, d) = points.dim();
    let k = params.k;
    let codebook = kmeans_fit(
        points,
        &KMeansParams {
            k,
            seed: params.seed,
            max_iter: params.max_iter,
            tol: 1e-9,
        },
    )?;
    let points = points.as_standard_layout().into_owned();
    let floor = variance_floor(&points, params.var_floor);

    let labels = kmeans_assign(points.view(), &codebook)?;
    let mut counts = vec![0usize; k];
    let mut variances = Array2::<f64>::zeros((k, d));
    for (i, &j) in labels.iter().enumerate() {
        counts[j] += 1;
        for dd in 0..d {
            let diff = points[[i, dd]] - codebook.centroids[[j, dd]];
            variances[[j, dd]] += diff * diff;
        }
    }
    for j in 0..k {
        for dd in 0..d {
            let v = if counts[j] > 0 {
                variances[[j, dd]] / counts[j] as f64
            } else {
                0.0
            };
            variances[[j, dd]] = v.max(floor[dd]);
        }
    }
    let mut model = GmmModel {
        weights: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        means: codebook.centroids,
        variances,
        log_likelihood_trace: Vec::new(),
    };

    let mut converged = false;
    for it in 0..params.max_iter {
        let (resp, ll) = model.e_step(&points);
        model.log_likelihood_trace.push(ll);
        if it > 0 {
            let prev = model.log_likelihood_trace[it - 1];
            if ll - prev < params.tol {
                converged = true;
                break;
            }
        }
        m_step(&mut model, &points, &resp, &floor);
    }
    if !converged {
        let (_, ll) = model.e_step(&points);
        model.log_likelihood_trace.push(ll);
    }
    Ok(model)
}

fn m_step(model: &mut GmmModel, points: &Array2<f64>, resp: &Array2<f64>, floor: &[f64]) {
    let (n, d) = points.dim();
    for j in 0..model.k() {
        let gamma = resp.column(j);
        let nk: f64 = gamma.sum();
        if nk <= f64::MIN_POSITIVE {
            // dead component: keep its Gaussian, drop its weight
            model.weights[j] = 0.0;
            continue;
        }
        model.weights[j] = nk / n as f64;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            let g = gamma[i];
            for (m, &x) in mean.iter_mut().zip(points.row(i)) {
                *m += g * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);
        let mut var = vec![0.0; d];
        for i in 0..n {
            let g = gamma[i];
            for ((v, &x), &m) in var.iter_mut().zip(points.row(i)).zip(&mean) {
                *v += g * (x - m) * (x - m);
            }
        }
        for dd in 0..d {
            model.means[[j, dd]] = mean[dd];
            model.variances[[j, dd]] = (var[dd] / nk).max(floor[dd]);
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

/// `N × k` posterior responsibilities, computed in log space.
pub fn gmm_posteriors(points: ArrayView2<f64>, gmm: &GmmModel) -> Result<Array2<f64>> {
    gmm.check_dim(points.ncols())?;
    Ok(gmm.e_step(&points.as_standard_layout().into_owned()).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_points(seed: u64, n: usize, d: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0))
    }

    #[test]
    fn k_equals_n_is_exact() {
        let pts = array![[0.0, 1.0], [3.0, 4.0], [-2.0, 7.0], [5.0, 5.0]];
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(4, 3)).unwrap();
        assert_eq!(cb.inertia, 0.0);
        let mut rows: Vec<Vec<f64>> = cb.centroids.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            rows,
            vec![vec![-2.0, 7.0], vec![0.0, 1.0], vec![3.0, 4.0], vec![5.0, 5.0]]
        );
    }

    #[test]
    fn two_clusters_on_a_line() {
        // Exhaustive oracle over the 2-partitions of {0,0,10,10}.
        let xs = [0.0, 0.0, 10.0, 10.0];
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..15 {
            let (a, b): (Vec<f64>, Vec<f64>) =
                (0..4)
                    .map(|i| (mask >> i & 1 == 1, xs[i]))
                    .fold((vec![], vec![]), |mut acc, (m, x)| {
                        if m {
                            acc.0.push(x)
                        } else {
                            acc.1.push(x)
                        }
                        acc
                    });
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (ma, mb) = (mean(&a), mean(&b));
            let cost: f64 =
                a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
            if cost < best.0 {
                let mut c = vec![ma, mb];
                c.sort_by(f64::total_cmp);
                best = (cost, c);
            }
        }
        let pts = Array2::from_shape_vec((4, 1), xs.to_vec()).unwrap();
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(2, 11)).unwrap();
        let mut got: Vec<f64> = cb.centroids.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, best.1);
        assert_eq!(cb.inertia, best.0);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = random_points(1, 30, 3);
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(1, 0)).unwrap();
        let mean = pts.mean_axis(Axis(0)).unwrap();
        for (a, b) in cb.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_errors() {
        let pts = random_points(1, 3, 2);
        assert!(matches!(
            kmeans_fit(pts.view(), &KMeansParams::new(4, 0)),
            Err(Error::TooFewPoints { .. })
        ));
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(2, 0)).unwrap();
        assert!(matches!(
            kmeans_assign(random_points(1, 3, 3).view(), &cb),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assignment_ties_and_exact_hits() {
        let cb = Codebook {
            centroids: array![[-1.0, 0.0], [1.0, 0.0], [5.0, 5.0]],
            inertia: 0.0,
            inertia_trace: vec![],
        };
        let pts = array![[0.0, 3.0], [5.0, 5.0], [1.0, 0.0]];
        assert_eq!(kmeans_assign(pts.view(), &cb).unwrap(), vec![0, 2, 1]);
    }

    #[test]
    fn duplicate_points_do_not_break_init() {
        let pts = Array2::from_elem((10, 2), 3.0);
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(3, 5)).unwrap();
        assert_eq!(cb.inertia, 0.0);
    }

    #[test]
    fn gmm_single_component_closed_form() {
        let pts = random_points(4, 200, 3);
        let gmm = gmm_fit(pts.view(), &GmmParams::new(1, 0)).unwrap();
        assert_eq!(gmm.weights, vec![1.0]);
        let mean = pts.mean_axis(Axis(0)).unwrap();
        let var = pts.var_axis(Axis(0), 0.0);
        for d in 0..3 {
            assert!((gmm.means[[0, d]] - mean[d]).abs() < 1e-10);
            assert!((gmm.variances[[0, d]] - var[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn gmm_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut blob_means = [0.0, 0.0];
        for (b, centre) in [0.0, 100.0].iter().enumerate() {
            let blob: Vec<f64> = (0..150).map(|_| centre + noise.sample(&mut rng)).collect();
            blob_means[b] = blob.iter().sum::<f64>() / blob.len() as f64;
            xs.extend(blob);
        }
        let pts = Array2::from_shape_vec((300, 1), xs).unwrap();
        let gmm = gmm_fit(pts.view(), &GmmParams::new(2, 1)).unwrap();
        let mut means: Vec<f64> = gmm.means.iter().copied().collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] - blob_means[0]).abs() < 0.5 && means[0].abs() < 0.5);
        assert!((means[1] - blob_means[1]).abs() < 0.5 && (means[1] - 100.0).abs() < 0.5);
    }

    #[test]
    fn identical_points_hit_the_floor() {
        let pts = Array2::from_elem((20, 4), 2.5);
        let gmm = gmm_fit(pts.view(), &GmmParams::new(1, 0)).unwrap();
        assert!(gmm.variances.iter().all(|&v| v == MIN_VARIANCE));
        let gmm = gmm_fit(
            pts.view(),
            &GmmParams {
                var_floor: VarFloor::Absolute(0.25),
                ..GmmParams::new(2, 0)
            },
        )
        .unwrap();
        assert!(gmm.variances.iter().all(|&v| v == 0.25));
        assert!((gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn posterior_cases() {
        let one = GmmModel {
            weights: vec![1.0],
            means: array![[0.0, 0.0]],
            variances: array![[1.0, 2.0]],
            log_likelihood_trace: vec![],
        };
        let r = gmm_posteriors(random_points(2, 5, 2).view(), &one).unwrap();
        assert!(r.iter().all(|&v| v == 1.0));

        let two = GmmModel {
            weights: vec![0.5, 0.5],
            means: array![[0.0], [20.0]],
            variances: array![[1.0], [1.0]],
            log_likelihood_trace: vec![],
        };
        let r = gmm_posteriors(array![[0.0], [10.0]].view(), &two).unwrap();
        // direct density ratio: exp(-0)/(exp(-0) + exp(-200))
        let direct = 1.0 / (1.0 + (-200.0f64).exp());
        assert!(r[[0, 0]] > 0.999 && (r[[0, 0]] - direct).abs() < 1e-12);
        assert!((r[[1, 0]] - 0.5).abs() < 1e-12 && (r[[1, 1]] - 0.5).abs() < 1e-12);
        assert!(matches!(
            gmm_posteriors(array![[0.0, 1.0]].view(), &two),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn models_round_trip() {
        let pts = random_points(8, 60, 3);
        let cb = kmeans_fit(pts.view(), &KMeansParams::new(3, 1)).unwrap();
        let back = Codebook::from_bytes(&cb.to_bytes()).unwrap();
        assert_eq!(back.centroids, cb.centroids);
        let gmm = gmm_fit(pts.view(), &GmmParams::new(3, 1)).unwrap();
        let back = GmmModel::from_bytes(&gmm.to_bytes()).unwrap();
        assert_eq!(
            (back.weights, back.means, back.variances),
            (gmm.weights.clone(), gmm.means.clone(), gmm.variances.clone())
        );
        assert!(GmmModel::from_bytes(&cb.to_bytes()).is_err());
        assert!(gmm.summary().starts_with("gmm\nk\t3\nD\t3\n"));
    }

    #[test]
    fn sample_rows_is_seeded() {
        let pts = random_points(3, 100, 2);
        let a = sample_rows(pts.view(), 10, 4);
        assert_eq!(a, sample_rows(pts.view(), 10, 4));
        assert_eq!(a.nrows(), 10);
        assert_eq!(sample_rows(pts.view(), 1000, 4), pts);
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(seed in any::<u64>(), k in 1usize..6) {
            let pts = random_points(seed, 20, 3);
            let cb = Codebook { centroids: random_points(seed ^ 0xabc, k, 3), inertia: 0.0, inertia_trace: vec![] };
            let got = kmeans_assign(pts.view(), &cb).unwrap();
            for (i, &g) in got.iter().enumerate() {
                let dists: Vec<f64> = (0..k).map(|j| (0..3).map(|d| (pts[[i, d]] - cb.centroids[[j, d]]).powi(2)).sum()).collect();
                let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(g, dists.iter().position(|&v| v == best).unwrap());
            }
        }

        #[test]
        fn responsibilities_scale_invariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let pts = random_points(seed, 12, 2);
            let gmm = GmmModel {
                weights: vec![0.2, 0.3, 0.5],
                means: random_points(seed ^ 1, 3, 2),
                variances: random_points(seed ^ 2, 3, 2).mapv(|v| v.abs() + 0.1),
                log_likelihood_trace: vec![],
            };
            let scaled = GmmModel { weights: gmm.weights.iter().map(|w| w * scale).collect(), ..gmm.clone() };
            let a = gmm_posteriors(pts.view(), &gmm).unwrap();
            let b = gmm_posteriors(pts.view(), &scaled).unwrap();
            for row in a.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

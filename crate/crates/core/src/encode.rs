//! Pooling a descriptor set into one fixed-length vector.
//!
//! Fisher Vector layout: for every component `j` the `D` mean-gradient entries
//! followed by the `D` variance-gradient entries, giving `2·k·D` values.

use serde::{Deserialize, Serialize};

use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::vocab::{gmm_posteriors, kmeans_assign, Codebook, GmmModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Bow,
    Fv,
}

impl Encoding {
    pub fn output_len(self, k: usize, dim: usize) -> usize {
        match self {
            Encoding::Bow => k,
            Encoding::Fv => 2 * k * dim,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Bow => "BoW",
            Encoding::Fv => "FV",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingOptions {
    /// FV: signed square root on every entry.
    pub power_norm: bool,
    /// FV: scale to unit Euclidean norm.
    pub l2_norm: bool,
    /// BoW: keep raw counts instead of relative frequencies.
    pub bow_raw_counts: bool,
}

impl Default for EncodingOptions {
    fn default() -> Self {
        EncodingOptions {
            power_norm: true,
            l2_norm: true,
            bow_raw_counts: false,
        }
    }
}

impl EncodingOptions {
    pub(crate) fn flags(self) -> u8 {
        self.power_norm as u8 | (self.l2_norm as u8) << 1 | (self.bow_raw_counts as u8) << 2
    }

    pub(crate) fn from_flags(f: u8) -> Self {
        EncodingOptions {
            power_norm: f & 1 != 0,
            l2_norm: f & 2 != 0,
            bow_raw_counts: f & 4 != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    pub values: Vec<f64>,
    pub encoding: Encoding,
    pub vocab_k: usize,
    pub descriptor_dim: usize,
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Codeword histogram under hard nearest-centroid assignment.
pub fn encode_bow(set: &DescriptorSet, codebook: &Codebook, raw_counts: bool) -> Result<EncodedVector> {
    check_dim(codebook.dim(), set.dim())?;
    let mut hist = vec![0.0; codebook.k()];
    for j in kmeans_assign(set.data.view(), codebook)? {
        hist[j] += 1.0;
    }
    if !raw_counts {
        let n = set.len() as f64;
        hist.iter_mut().for_each(|h| *h /= n);
    }
    Ok(EncodedVector {
        values: hist,
        encoding: Encoding::Bow,
        vocab_k: codebook.k(),
        descriptor_dim: set.dim(),
    })
}

/// Gradients of the average log-likelihood with respect to the component
/// means and standard deviations, scaled by `σ/√w` and `σ/√(2w)`.
pub fn encode_fv(set: &DescriptorSet, gmm: &GmmModel, power_norm: bool, l2_norm: bool) -> Result<EncodedVector> {
    let (n, d) = set.data.dim();
    check_dim(gmm.dim(), d)?;
    let k = gmm.k();
    let resp = gmm_posteriors(set.data.view(), gmm)?;
    let mut values = vec![0.0; 2 * k * d];
    for j in 0..k {
        let w = gmm.weights[j];
        let mass: f64 = resp.column(j).sum();
        if !(mass > 0.0) || !(w > 0.0) {
            continue;
        }
        let (mean_block, var_block) = values[2 * j * d..2 * (j + 1) * d].split_at_mut(d);
        let mu = gmm.means.row(j);
        let var = gmm.variances.row(j);
        for (i, x) in set.data.rows().into_iter().enumerate() {
            let g = resp[[i, j]];
            if g == 0.0 {
                continue;
            }
            for dd in 0..d {
                let u = (x[dd] - mu[dd]) / var[dd].sqrt();
                mean_block[dd] += g * u;
                var_block[dd] += g * (u * u - 1.0);
            }
        }
        let mean_scale = 1.0 / (n as f64 * w.sqrt());
        let var_scale = 1.0 / (n as f64 * (2.0 * w).sqrt());
        mean_block.iter_mut().for_each(|v| *v *= mean_scale);
        var_block.iter_mut().for_each(|v| *v *= var_scale);
    }
    if power_norm {
        values.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
    }
    if l2_norm {
        l2_normalize(&mut values);
    }
    Ok(EncodedVector {
        values,
        encoding: Encoding::Fv,
        vocab_k: k,
        descriptor_dim: d,
    })
}

fn l2_normalize(values: &mut [f64]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
}

/// A trained vocabulary of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Vocabulary {
    Codebook(Codebook),
    Gmm(GmmModel),
}

impl Vocabulary {
    pub fn encoding(&self) -> Encoding {
        match self {
            Vocabulary::Codebook(_) => Encoding::Bow,
            Vocabulary::Gmm(_) => Encoding::Fv,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Vocabulary::Codebook(c) => c.k(),
            Vocabulary::Gmm(g) => g.k(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Vocabulary::Codebook(c) => c.dim(),
            Vocabulary::Gmm(g) => g.dim(),
        }
    }

    pub fn encode(&self, set: &DescriptorSet, options: &EncodingOptions) -> Result<EncodedVector> {
        match self {
            Vocabulary::Codebook(c) => encode_bow(set, c, options.bow_raw_counts),
            Vocabulary::Gmm(g) => encode_fv(set, g, options.power_norm, options.l2_norm),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Vocabulary::Codebook(c) => c.to_bytes(),
            Vocabulary::Gmm(g) => g.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        // kind byte follows the 4-byte magic and the u32 version
        match bytes.get(8) {
            Some(&crate::vocab::KIND_CODEBOOK) => Codebook::from_bytes(bytes).map(Vocabulary::Codebook),
            Some(&crate::vocab::KIND_GMM) => GmmModel::from_bytes(bytes).map(Vocabulary::Gmm),
            _ => Err(Error::Format("not a vocabulary file".into())),
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Vocabulary::Codebook(c) => c.summary(),
            Vocabulary::Gmm(g) => g.summary(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn codebook(centroids: Array2<f64>) -> Codebook {
        Codebook {
            centroids,
            inertia: 0.0,
            inertia_trace: vec![],
        }
    }

    fn small_gmm(seed: u64, k: usize, d: usize) -> GmmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        GmmModel {
            weights: raw.iter().map(|w| w / total).collect(),
            means: Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0)),
            variances: Array2::from_shape_fn((k, d), |_| rng.random_range(0.3..2.0)),
            log_likelihood_trace: vec![],
        }
    }

    #[test]
    fn bow_one_hot_and_split() {
        let cb = codebook(Array2::from_shape_fn((10, 2), |(i, j)| (i * 10 + j) as f64));
        let set = DescriptorSet::new("p", array![[30.0, 31.0]]).unwrap();
        let v = encode_bow(&set, &cb, false).unwrap();
        let mut want = vec![0.0; 10];
        want[3] = 1.0;
        assert_eq!(v.values, want);

        let cb5 = codebook(array![[0.0], [10.0], [20.0], [30.0], [40.0]]);
        let set = DescriptorSet::new("p", array![[0.1], [-0.2], [9.9], [10.3]]).unwrap();
        assert_eq!(
            encode_bow(&set, &cb5, false).unwrap().values,
            vec![0.5, 0.5, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            encode_bow(&set, &cb5, true).unwrap().values,
            vec![2.0, 2.0, 0.0, 0.0, 0.0]
        );
        let all_first = DescriptorSet::new("p", array![[0.0], [1.0], [-3.0]]).unwrap();
        assert_eq!(
            encode_bow(&all_first, &cb5, false).unwrap().values,
            vec![1.0, 0.0, 0.0, 0.0, 0.0]
        );
        let wrong = DescriptorSet::new("p", array![[0.0, 1.0]]).unwrap();
        assert!(matches!(
            encode_bow(&wrong, &cb5, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fv_length_at_k10_d256() {
        let gmm = small_gmm(1, 10, 256);
        let set = DescriptorSet::new(
            "p",
            Array2::from_shape_fn((169, 256), |(i, j)| ((i + j) % 7) as f64 / 7.0),
        )
        .unwrap();
        let v = encode_fv(&set, &gmm, true, true).unwrap();
        assert_eq!(v.values.len(), 5120);
        assert_eq!(Encoding::Fv.output_len(10, 256), 5120);
    }

    #[test]
    fn fv_mean_block_vanishes_at_the_mean() {
        let gmm = GmmModel {
            weights: vec![1.0],
            means: array![[1.0, -2.0, 0.5]],
            variances: array![[0.5, 2.0, 1.0]],
            log_likelihood_trace: vec![],
        };
        let set = DescriptorSet::new("p", array![[1.0, -2.0, 0.5], [1.0, -2.0, 0.5]]).unwrap();
        let v = encode_fv(&set, &gmm, false, false).unwrap();
        assert_eq!(&v.values[..3], &[0.0, 0.0, 0.0]);
        // u = 0 → variance block = -1/√2
        for x in &v.values[3..] {
            assert!((x + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn fv_matches_finite_differences() {
        // Independent oracle: average log-likelihood written out directly.
        fn avg_ll(x: &Array2<f64>, w: &[f64], mu: &Array2<f64>, sigma: &Array2<f64>) -> f64 {
            let mut total = 0.0;
            for row in x.rows() {
                let mut p = 0.0;
                for j in 0..w.len() {
                    let mut dens = w[j];
                    for d in 0..row.len() {
                        let s = sigma[[j, d]];
                        let z = (row[d] - mu[[j, d]]) / s;
                        dens *= (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                    }
                    p += dens;
                }
                total += p.ln();
            }
            total / x.nrows() as f64
        }
        let gmm = small_gmm(5, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-2.0..2.0));
        let set = DescriptorSet::new("p", x.clone()).unwrap();
        let fv = encode_fv(&set, &gmm, false, false).unwrap();
        let sigma = gmm.variances.mapv(f64::sqrt);
        let h = 1e-5;
        for j in 0..2 {
            for d in 0..3 {
                let (mut up, mut down) = (gmm.means.clone(), gmm.means.clone());
                up[[j, d]] += h;
                down[[j, d]] -= h;
                let g_mu =
                    (avg_ll(&x, &gmm.weights, &up, &sigma) - avg_ll(&x, &gmm.weights, &down, &sigma)) / (2.0 * h);
                let (mut up, mut down) = (sigma.clone(), sigma.clone());
                up[[j, d]] += h;
                down[[j, d]] -= h;
                let g_sigma = (avg_ll(&x, &gmm.weights, &gmm.means, &up) - avg_ll(&x, &gmm.weights, &gmm.means, &down))
                    / (2.0 * h);
                let s = sigma[[j, d]];
                let w = gmm.weights[j];
                let want_mu = g_mu * s / w.sqrt();
                let want_sigma = g_sigma * s / (2.0 * w).sqrt();
                let got_mu = fv.values[2 * j * 3 + d];
                let got_sigma = fv.values[2 * j * 3 + 3 + d];
                assert!(
                    (got_mu - want_mu).abs() <= 1e-5 * want_mu.abs().max(1e-3),
                    "{got_mu} vs {want_mu}"
                );
                assert!(
                    (got_sigma - want_sigma).abs() <= 1e-5 * want_sigma.abs().max(1e-3),
                    "{got_sigma} vs {want_sigma}"
                );
            }
        }
    }

    #[test]
    fn fv_dead_component_is_zero() {
        let gmm = GmmModel {
            weights: vec![1.0, 0.0],
            means: array![[0.0], [1e6]],
            variances: array![[1.0], [1.0]],
            log_likelihood_trace: vec![],
        };
        let set = DescriptorSet::new("p", array![[0.3], [-0.4]]).unwrap();
        let v = encode_fv(&set, &gmm, true, true).unwrap();
        assert_eq!(&v.values[2..], &[0.0, 0.0]);
        assert!(v.values.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn fv_of_model_samples_is_smaller_than_shifted() {
        let gmm = small_gmm(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let std = Normal::new(0.0, 1.0).unwrap();
        let mut sample = Array2::zeros((10_000, 2));
        for mut row in sample.rows_mut() {
            let j = if rng.random::<f64>() < gmm.weights[0] { 0 } else { 1 };
            for d in 0..2 {
                row[d] = gmm.means[[j, d]] + gmm.variances[[j, d]].sqrt() * std.sample(&mut rng);
            }
        }
        let sigma_max = gmm.variances.iter().cloned().fold(0.0, f64::max).sqrt();
        let shifted = sample.mapv(|v| v + 3.0 * sigma_max);
        let norm = |x: Array2<f64>| {
            let v = encode_fv(&DescriptorSet::new("p", x).unwrap(), &gmm, false, false).unwrap();
            v.values.iter().map(|a| a * a).sum::<f64>().sqrt()
        };
        let (a, b) = (norm(sample), norm(shifted));
        assert!(a < b, "{a} !< {b}");
        assert!(a < 0.1);
    }

    #[test]
    fn vocabulary_dispatch_and_round_trip() {
        let cb = codebook(array![[0.0, 0.0], [1.0, 1.0]]);
        let v = Vocabulary::Codebook(cb);
        assert_eq!(Vocabulary::from_bytes(&v.to_bytes()).unwrap().encoding(), Encoding::Bow);
        let g = Vocabulary::Gmm(small_gmm(1, 2, 2));
        let back = Vocabulary::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back.k(), 2);
        let set = DescriptorSet::new("p", array![[0.1, 0.2], [0.9, 1.1]]).unwrap();
        let e = back.encode(&set, &EncodingOptions::default()).unwrap();
        assert_eq!(e.values.len(), 8);
        assert!(Vocabulary::from_bytes(b"junk").is_err());
        assert_eq!(
            EncodingOptions::from_flags(EncodingOptions::default().flags()),
            EncodingOptions::default()
        );
    }

    proptest! {
        #[test]
        fn encodings_ignore_descriptor_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((9, 3), |_| rng.random_range(-2.0..2.0));
            let mut order: Vec<usize> = (0..9).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            let shuffled = x.select(ndarray::Axis(0), &order);
            let a = DescriptorSet::new("a", x).unwrap();
            let b = DescriptorSet::new("b", shuffled).unwrap();

            let gmm = small_gmm(seed, 3, 3);
            let fa = encode_fv(&a, &gmm, true, true).unwrap();
            let fb = encode_fv(&b, &gmm, true, true).unwrap();
            for (p, q) in fa.values.iter().zip(&fb.values) {
                prop_assert!((p - q).abs() < 1e-12);
            }
            let norm: f64 = fa.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);

            let cb = codebook(Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0)));
            let ha = encode_bow(&a, &cb, false).unwrap();
            prop_assert_eq!(&ha.values, &encode_bow(&b, &cb, false).unwrap().values);
            prop_assert!((ha.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);

            // permuting codewords permutes the histogram
            let perm = [2usize, 0, 3, 1];
            let permuted = codebook(cb.centroids.select(ndarray::Axis(0), &perm));
            let hp = encode_bow(&a, &permuted, false).unwrap();
            for (new_idx, &old_idx) in perm.iter().enumerate() {
                prop_assert_eq!(hp.values[new_idx], ha.values[old_idx]);
            }
        }
    }
}

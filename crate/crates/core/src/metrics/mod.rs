//! Evaluation metrics: boundary transition distance, a Fréchet distance over
//! handcrafted trajectory features, diversity and nearest-centroid label
//! consistency.

mod features;

pub use features::{features, FEATURE_DIM};

use crate::error::{Error, Result};
use crate::ndcore::{psd_sqrt, Matrix, SeedStream};

/// Euclidean distance between the last frame of `first` and the first frame of `second`.
pub fn transition_distance(first: &Matrix, second: &Matrix) -> Result<f64> {
    if first.rows() == 0 || second.rows() == 0 {
        return Err(Error::Invalid("transition distance needs non-empty sequences".into()));
    }
    if first.cols() != second.cols() {
        return Err(Error::Shape(format!("frame widths {} and {}", first.cols(), second.cols())));
    }
    let a = first.row(first.rows() - 1);
    let b = second.row(0);
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

fn check_width(feats: &[Vec<f64>]) -> Result<usize> {
    let w = feats.first().map_or(0, Vec::len);
    if feats.iter().any(|f| f.len() != w) {
        return Err(Error::Shape("feature vectors differ in width".into()));
    }
    Ok(w)
}

/// Sample mean and unbiased covariance with `1e-6·I` added.
fn gaussian_fit(feats: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
    let w = check_width(feats)?;
    let n = feats.len();
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 feature vectors, got {n}")));
    }
    let mut mean = vec![0.0; w];
    for f in feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = Matrix::from_fn(n, w, |r, c| feats[r][c] - mean[c]);
    let mut cov = centred.t_matmul(&centred).scale(1.0 / (n - 1) as f64);
    for i in 0..w {
        cov.set(i, i, cov.get(i, i) + 1e-6);
    }
    Ok((mean, cov.symmetrized()))
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μa − μb‖² + tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a)?;
    let (mb, cb) = gaussian_fit(b)?;
    if ma.len() != mb.len() {
        return Err(Error::Shape(format!("feature widths {} and {}", ma.len(), mb.len())));
    }
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    let ra = psd_sqrt(&ca)?;
    let inner = ra.matmul(&cb).matmul(&ra).symmetrized();
    let cross = psd_sqrt(&inner)?;
    let d = diff + ca.trace() + cb.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

/// Mean Euclidean distance over `num_pairs` random pairs of distinct vectors.
pub fn diversity(feats: &[Vec<f64>], num_pairs: usize, rng: &mut SeedStream) -> Result<f64> {
    check_width(feats)?;
    let n = feats.len();
    if n < 2 {
        return Err(Error::Invalid(format!("diversity needs at least 2 vectors, got {n}")));
    }
    if num_pairs == 0 {
        return Err(Error::Invalid("diversity needs at least one pair".into()));
    }
    let mut total = 0.0;
    for _ in 0..num_pairs {
        let i = rng.below(n);
        let j = (i + 1 + rng.below(n - 1)) % n;
        total += feats[i].iter().zip(&feats[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    Ok(total / num_pairs as f64)
}

/// Per-label centroids in a standardized feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelCentroids {
    mean: Vec<f64>,
    scale: Vec<f64>,
    centroids: Vec<Option<Vec<f64>>>,
}

impl LabelCentroids {
    /// Fits standardization and one centroid per label that has examples.
    pub fn fit(feats: &[Vec<f64>], labels: &[usize], num_labels: usize) -> Result<Self> {
        let w = check_width(feats)?;
        if feats.is_empty() || feats.len() != labels.len() {
            return Err(Error::Invalid("centroids need one label per non-empty feature set".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(Error::UnknownLabel(format!("#{l}")));
        }
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..w).map(|c| feats.iter().map(|f| f[c]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..w)
            .map(|c| {
                let var = feats.iter().map(|f| (f[c] - mean[c]).powi(2)).sum::<f64>() / n;
                if var > 1e-18 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut sums = vec![vec![0.0; w]; num_labels];
        let mut counts = vec![0usize; num_labels];
        for (f, &l) in feats.iter().zip(labels) {
            counts[l] += 1;
            for c in 0..w {
                sums[l][c] += (f[c] - mean[c]) / scale[c];
            }
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, k)| (k > 0).then(|| s.into_iter().map(|v| v / k as f64).collect()))
            .collect();
        Ok(Self { mean, scale, centroids })
    }

    pub fn classify(&self, feat: &[f64]) -> Result<usize> {
        if feat.len() != self.mean.len() {
            return Err(Error::Shape("feature width differs from the fitted width".into()));
        }
        let z: Vec<f64> = feat
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut best = (usize::MAX, f64::INFINITY);
        for (l, c) in self.centroids.iter().enumerate() {
            if let Some(c) = c {
                let d: f64 = z.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
                if d < best.1 {
                    best = (l, d);
                }
            }
        }
        Ok(best.0)
    }

    /// Fraction of `feats` whose nearest centroid is the intended label.
    pub fn accuracy(&self, feats: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        if feats.len() != labels.len() || feats.is_empty() {
            return Err(Error::Invalid("accuracy needs one label per feature vector".into()));
        }
        let mut hits = 0;
        for (f, &l) in feats.iter().zip(labels) {
            if self.centroids.get(l).is_none_or(Option::is_none) {
                return Err(Error::UnknownLabel(format!("#{l}")));
            }
            if self.classify(f)? == l {
                hits += 1;
            }
        }
        Ok(hits as f64 / feats.len() as f64)
    }
}

/// Nearest-centroid accuracy of generated segments against their intended labels.
pub fn label_consistency(feats: &[Vec<f64>], labels: &[usize], centroids: &LabelCentroids) -> Result<f64> {
    centroids.accuracy(feats, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_dataset, split_streams, DataConfig};

    fn gaussian_set(n: usize, w: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        let m = SeedStream::new(seed).gaussian(n, w);
        (0..n).map(|r| m.row(r).iter().map(|v| v + shift).collect()).collect()
    }

    #[test]
    fn transition_distance_cases() {
        let a = Matrix::from_rows(&[vec![9.0, 9.0, 9.0, 9.0], vec![0.0, 0.0, 0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0, 4.0, 0.0, 0.0]]).unwrap();
        assert_eq!(transition_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(transition_distance(&a.slice_rows(1, 1), &a.slice_rows(1, 1)).unwrap(), 0.0);
        assert!(transition_distance(&Matrix::zeros(0, 4), &b).is_err());
        let shift = |m: &Matrix| m.map(|v| v + 7.25);
        assert_eq!(
            transition_distance(&shift(&a), &shift(&b)).unwrap(),
            transition_distance(&a, &b).unwrap()
        );
    }

    #[test]
    fn frechet_self_and_symmetry() {
        let a = gaussian_set(300, 6, 0.0, 1);
        let b = gaussian_set(200, 6, 0.4, 2);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-10, "{ab} {ba}");
        assert!(frechet_distance(&a, &gaussian_set(10, 5, 0.0, 3)).is_err());
        assert!(frechet_distance(&a[..1], &b).is_err());
    }

    #[test]
    fn frechet_closed_form_for_shifted_gaussians() {
        // N(0, 1) vs N(1, 1): squared mean gap 1, equal variances.
        let a = gaussian_set(100_000, 1, 0.0, 10);
        let b = gaussian_set(100_000, 1, 1.0, 11);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.02, "{d}");
    }

    #[test]
    fn diversity_properties() {
        let same = vec![vec![1.0, 2.0]; 10];
        assert_eq!(diversity(&same, 50, &mut SeedStream::new(0)).unwrap(), 0.0);
        let a = gaussian_set(100, 3, 0.0, 4);
        let scaled: Vec<Vec<f64>> = a.iter().map(|f| f.iter().map(|v| 2.5 * v).collect()).collect();
        let d1 = diversity(&a, 500, &mut SeedStream::new(9)).unwrap();
        let d2 = diversity(&scaled, 500, &mut SeedStream::new(9)).unwrap();
        assert!((d2 - 2.5 * d1).abs() < 1e-12);
        assert!(diversity(&a[..1], 5, &mut SeedStream::new(0)).is_err());
    }

    #[test]
    fn diversity_estimator_is_stable() {
        let a = gaussian_set(2000, 4, 0.0, 5);
        let x = diversity(&a, 10_000, &mut SeedStream::new(1)).unwrap();
        let y = diversity(&a, 10_000, &mut SeedStream::new(2)).unwrap();
        assert!((x / y - 1.0).abs() < 0.03, "{x} {y}");
    }

    #[test]
    fn ground_truth_segments_are_classified() {
        let data = gen_dataset(&DataConfig {
            num_streams: 400,
            test_streams: 100,
            ..DataConfig::default()
        })
        .unwrap();
        let (train, test) = split_streams(data, 100, 0);
        let collect = |streams: &[crate::data::LabeledStream]| {
            let mut f = Vec::new();
            let mut l = Vec::new();
            for s in streams {
                for (i, seg) in s.segments().iter().enumerate() {
                    f.push(features(&s.segment_frames(i)));
                    l.push(seg.label);
                }
            }
            (f, l)
        };
        let (tf, tl) = collect(&train);
        let (ef, el) = collect(&test);
        let c = LabelCentroids::fit(&tf, &tl, 8).unwrap();
        let acc = label_consistency(&ef, &el, &c).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");

        // Labels shuffled against features: chance level.
        let mut shuffled = el.clone();
        SeedStream::new(3).shuffle(&mut shuffled);
        let chance = label_consistency(&ef, &shuffled, &c).unwrap();
        assert!((chance - 0.125).abs() < 0.08, "chance {chance}");
    }

    #[test]
    fn single_label_is_trivially_consistent() {
        let f = gaussian_set(20, 3, 0.0, 7);
        let l = vec![0; 20];
        let c = LabelCentroids::fit(&f, &l, 1).unwrap();
        assert_eq!(label_consistency(&f, &l, &c).unwrap(), 1.0);
        assert!(label_consistency(&f, &[1; 20], &c).is_err());
    }
}

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Template-plus-noise classification task.
///
/// Each class owns a fixed random image drawn from the task seed. Samples
/// are the class template plus i.i.d. Gaussian noise, clamped to `[0, 1]`.
/// Different `stream`s share templates but draw fresh noise, which is how
/// train and test splits are produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub shape: [usize; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(num_classes: usize, shape: [usize; 3], noise_sigma: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("synthetic task needs at least two classes"));
        }
        if shape.contains(&0) {
            return Err(Error::config(format!("synthetic image shape {shape:?} has a zero dim")));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::config(format!(
                "noise_sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(SyntheticTask {
            num_classes,
            shape,
            noise_sigma,
            seed,
        })
    }

    /// One `[C*H*W]` template per class.
    pub fn templates(&self) -> Vec<Vec<f32>> {
        let n: usize = self.shape.iter().product();
        (0..self.num_classes)
            .map(|c| {
                let mut rng = seed::rng_indexed(self.seed, "template", c as u64);
                (0..n).map(|_| rng.random::<f32>()).collect()
            })
            .collect()
    }

    /// `per_class` samples of every class, interleaved so that sample `i`
    /// has label `i % K`.
    pub fn sample(&self, per_class: usize, stream: u64) -> Result<Dataset> {
        if per_class == 0 {
            return Err(Error::config("per_class must be positive"));
        }
        let templates = self.templates();
        let k = self.num_classes;
        let n: usize = self.shape.iter().product();
        let total = per_class * k;
        let mut rng = seed::rng_indexed(self.seed, "noise", stream);
        let noise = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
        let mut data = Vec::with_capacity(total * n);
        let mut labels = Vec::with_capacity(total);
        for i in 0..total {
            let c = i % k;
            labels.push(c);
            for &t in &templates[c] {
                let v = if self.noise_sigma > 0.0 {
                    t as f64 + noise.sample(&mut rng)
                } else {
                    t as f64
                };
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        let [c, h, w] = self.shape;
        let images = Tensor::new(vec![total, c, h, w], data)?;
        Dataset::new(images, labels, k)
    }
}

pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    shape: [usize; 3],
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    SyntheticTask::new(num_classes, shape, noise_sigma, seed)?.sample(per_class, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_template(templates: &[Vec<f32>], x: &[f32]) -> usize {
        templates
            .iter()
            .enumerate()
            .map(|(c, t)| {
                let d: f64 = t.iter().zip(x).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                (c, d)
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0
    }

    #[test]
    fn zero_noise_gives_identical_class_members() {
        let ds = generate_synthetic(3, 4, [1, 4, 4], 0.0, 1).unwrap();
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if ds.labels()[i] == ds.labels()[j] {
                    assert_eq!(ds.image(i), ds.image(j));
                }
            }
        }
        assert_ne!(ds.image(0), ds.image(1));
    }

    #[test]
    fn low_noise_is_template_separable() {
        let task = SyntheticTask::new(2, [3, 8, 8], 0.05, 21).unwrap();
        let ds = task.sample(50, 0).unwrap();
        let templates = task.templates();
        let correct = (0..ds.len())
            .filter(|&i| nearest_template(&templates, ds.image(i)) == ds.labels()[i])
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn same_seed_same_data_and_values_in_range() {
        let a = generate_synthetic(4, 5, [3, 8, 8], 0.3, 9).unwrap();
        let b = generate_synthetic(4, 5, [3, 8, 8], 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let task = SyntheticTask::new(4, [3, 8, 8], 0.3, 9).unwrap();
        assert_ne!(task.sample(5, 1).unwrap(), a);
    }

    #[test]
    fn one_class_rejected() {
        assert!(generate_synthetic(1, 5, [1, 2, 2], 0.1, 0).is_err());
    }
}

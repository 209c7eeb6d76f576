//! Confusion matrices and the class-proportion weighted F1 score.

use crate::error::{Error, Result};

/// `counts[truth][predicted]`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![vec![0u64; classes]; classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= classes || y >= classes {
                return Err(Error::param(format!(
                    "class index outside [0, {classes}): prediction {p}, label {y}"
                )));
            }
            counts[y][p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class `(precision, recall)`; an undefined ratio counts as 0.
    pub fn precision_recall(&self) -> Vec<(f64, f64)> {
        (0..self.classes)
            .map(|g| {
                let tp = self.counts[g][g] as f64;
                let predicted: u64 = (0..self.classes).map(|y| self.counts[y][g]).sum();
                let actual: u64 = self.counts[g].iter().sum();
                let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let r = if actual == 0 { 0.0 } else { tp / actual as f64 };
                (p, r)
            })
            .collect()
    }

    /// `F_w = 2 Σ_g w_g·p_g·r_g/(p_g + r_g)` with `w_g = N_g / N_total`.
    pub fn weighted_f1(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::degenerate("weighted F1 of an empty prediction set"));
        }
        let mut f = 0.0;
        for (g, (p, r)) in self.precision_recall().into_iter().enumerate() {
            if p + r == 0.0 {
                continue;
            }
            let w = self.counts[g].iter().sum::<u64>() as f64 / total as f64;
            f += w * p * r / (p + r);
        }
        Ok(2.0 * f)
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes).map(|g| self.counts[g][g]).sum::<u64>() as f64 / total as f64
    }
}

pub fn weighted_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    ConfusionMatrix::new(predictions, labels, classes)?.weighted_f1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_all_wrong() {
        let y = [0, 1, 2, 1, 0];
        assert_eq!(weighted_f1(&y, &y, 3).unwrap(), 1.0);
        let wrong = [1, 2, 0, 0, 1];
        assert_eq!(weighted_f1(&wrong, &y, 3).unwrap(), 0.0);
    }

    #[test]
    fn single_class_predicted() {
        let y = [0, 0, 1, 1];
        let f = weighted_f1(&[0, 0, 0, 0], &y, 2).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_degenerate() {
        assert!(matches!(weighted_f1(&[], &[], 2), Err(Error::Degenerate(_))));
        assert!(weighted_f1(&[0], &[0, 1], 2).is_err());
        assert!(weighted_f1(&[3], &[0], 2).is_err());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let g = rng.random_range(2..7);
            let n = rng.random_range(1..80);
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
            let mut expected = 0.0;
            for c in 0..g {
                let tp = (0..n).filter(|&i| y[i] == c && p[i] == c).count() as f64;
                let fp = (0..n).filter(|&i| y[i] != c && p[i] == c).count() as f64;
                let fneg = (0..n).filter(|&i| y[i] == c && p[i] != c).count() as f64;
                let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
                let w = (0..n).filter(|&i| y[i] == c).count() as f64 / n as f64;
                if prec + rec > 0.0 {
                    expected += w * 2.0 * prec * rec / (prec + rec);
                }
            }
            let got = weighted_f1(&p, &y, g).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }
}

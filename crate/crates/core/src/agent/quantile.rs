//! Quantile representation of the return distribution and the asymmetric
//! Huber quantile loss used to fit it.

/// Fixed cumulative probabilities `(2j - 1) / (2n)`, `j = 1..n`. Each
/// quantile location carries uniform probability mass `1/n`.
pub fn quantile_taus(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (2 * j - 1) as f64 / (2 * n) as f64).collect()
}

/// The critic's distribution estimate: `n` quantile locations at the fixed
/// uniform probabilities of [`quantile_taus`]. Locations are free during
/// training (no sortedness constraint).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileValue {
    pub theta: Vec<f64>,
}

impl QuantileValue {
    /// The scalar Q-value: the unweighted mean of the locations.
    pub fn mean(&self) -> f64 {
        self.theta.iter().sum::<f64>() / self.theta.len() as f64
    }

    /// Mean of the lowest-probability `fraction` of quantiles (left tail).
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let m = ((self.theta.len() as f64 * fraction).round() as usize).max(1);
        self.theta[..m].iter().sum::<f64>() / m as f64
    }
}

/// Asymmetric Huber quantile loss between predicted locations and target
/// samples, averaged over every `(location, target)` pair, together with
/// the gradient with respect to each location.
///
/// `kappa` is the Huber threshold; `kappa = 0` selects the pure (pinball)
/// quantile loss, whose minimizers are exact sample quantiles. The smooth
/// `kappa > 0` variant is the standard training surrogate but biases
/// extreme quantiles toward the center when the data scale is comparable
/// to `kappa`.
pub fn quantile_huber_loss(
    theta: &[f64],
    targets: &[f64],
    taus: &[f64],
    kappa: f64,
) -> (f64, Vec<f64>) {
    debug_assert_eq!(theta.len(), taus.len());
    debug_assert!(kappa >= 0.0);
    let scale = 1.0 / (theta.len() * targets.len()) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (j, (&th, &tau)) in theta.iter().zip(taus).enumerate() {
        let mut l = 0.0;
        let mut g = 0.0;
        for &y in targets {
            let u = y - th;
            let weight = if u < 0.0 { 1.0 - tau } else { tau };
            if kappa > 0.0 {
                let huber = if u.abs() <= kappa {
                    0.5 * u * u
                } else {
                    kappa * (u.abs() - 0.5 * kappa)
                };
                l += weight * huber / kappa;
                g -= weight * u.clamp(-kappa, kappa) / kappa;
            } else {
                l += weight * u.abs();
                g -= if u < 0.0 { -(1.0 - tau) } else { tau };
            }
        }
        loss += l;
        grad[j] = g * scale;
    }
    (loss * scale, grad)
}

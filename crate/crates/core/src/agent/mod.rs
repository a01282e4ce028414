//! Distributional actor-critic hedging agent: a deterministic policy
//! network trained against a quantile-regression critic with replay and
//! target networks.

pub mod checkpoint;
pub mod nn;
pub mod quantile;
pub mod replay;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::instruments::NoteSpec;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, RiskObjective, TrainConfig, TrainLogRow, TrainOutput};

/// Fixed normalization constants mapping an [`EnvState`] to network
/// features: spots over initial prices, gamma over notional, time-to-call
/// over the call interval. Stored in checkpoints so a policy can be
/// reloaded without the original note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNorm {
    pub initial_prices: Vec<f64>,
    pub notional: f64,
    pub call_freq: f64,
}

impl StateNorm {
    pub fn from_note(note: &NoteSpec) -> Self {
        StateNorm {
            initial_prices: note.initial_prices.clone(),
            notional: note.notional,
            call_freq: note.call_freq as f64,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.initial_prices.len() + 2
    }

    pub fn features(&self, state: &EnvState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_dim());
        for (s, p0) in state.spots.iter().zip(&self.initial_prices) {
            out.push(s / p0);
        }
        out.push(state.portfolio_gamma / self.notional);
        out.push(state.time_to_next_call * self.call_freq);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_normalized() {
        let note = NoteSpec {
            notional: 100.0,
            initial_prices: vec![382.0, 494.0, 142.0],
            maturity: 4.0,
            coupon_freq: 4,
            coupon_rate: 0.02275,
            coupon_barrier: -0.25,
            call_freq: 4,
            call_barrier: 0.0,
            protection_barrier: -0.30,
        };
        let norm = StateNorm::from_note(&note);
        let state = EnvState {
            spots: vec![382.0, 247.0, 284.0],
            portfolio_gamma: -50.0,
            time_to_next_call: 0.25,
            step_index: 7,
        };
        let f = norm.features(&state);
        assert_eq!(f.len(), 5);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.5);
        assert_eq!(f[2], 2.0);
        assert_eq!(f[3], -0.5);
        assert_eq!(f[4], 1.0);
    }
}

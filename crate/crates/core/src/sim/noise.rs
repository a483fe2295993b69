use serde::{Deserialize, Serialize};

use super::SimError;

/// Perception error model. The zero model yields exact reports.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Probability per object per simulated second that its track is lost.
    pub loss_rate: f64,
    /// Probability per object per report that its track is swapped with
    /// another object's.
    pub misassign_rate: f64,
    /// Standard deviation of pose estimates, in workcell units.
    pub pose_sigma: f64,
}

impl NoiseModel {
    pub fn is_zero(&self) -> bool {
        self.loss_rate == 0.0 && self.misassign_rate == 0.0 && self.pose_sigma == 0.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::InvalidNoise(format!(
                    "{name} must be in [0, 1], got {p}"
                )))
            }
        };
        prob("loss_rate", self.loss_rate)?;
        prob("misassign_rate", self.misassign_rate)?;
        if !(self.pose_sigma >= 0.0 && self.pose_sigma.is_finite()) {
            return Err(SimError::InvalidNoise(format!(
                "pose_sigma must be finite and non-negative, got {}",
                self.pose_sigma
            )));
        }
        Ok(())
    }
}

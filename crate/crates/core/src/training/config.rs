use super::optim::AdamConfig;
use super::TrainError;
use crate::datasets::DEFAULT_POINTS_PER_CLOUD;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// only `head.*` tensors are updated
    pub freeze_backbone: bool,
    /// evaluate every this many epochs; the first and last epochs always
    pub eval_every: usize,
    pub points_per_cloud: usize,
    /// record elapsed seconds in the history (otherwise 0, which keeps
    /// histories bitwise reproducible)
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            freeze_backbone: false,
            eval_every: 1,
            points_per_cloud: DEFAULT_POINTS_PER_CLOUD,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.points_per_cloud == 0 || self.eval_every == 0 {
            return bad("batch_size, points_per_cloud and eval_every must be >= 1".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return bad(format!("lr must be a positive number, got {}", a.lr));
        }
        for (name, b) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(a.eps > 0.0 && a.eps.is_finite()) {
            return bad(format!("adam eps must be positive, got {}", a.eps));
        }
        Ok(())
    }

    /// Whether `epoch` (1-based) is evaluated.
    pub fn evaluates(&self, epoch: usize) -> bool {
        epoch == 1 || epoch == self.epochs || epoch % self.eval_every == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_epochs_rejected() {
        let c = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn betas_open_interval() {
        let mut c = TrainConfig::default();
        c.adam.beta2 = 1.0;
        assert!(c.validate().is_err());
        c.adam.beta2 = 0.5;
        c.adam.lr = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn cadence_keeps_ends() {
        let c = TrainConfig {
            epochs: 10,
            eval_every: 4,
            ..TrainConfig::default()
        };
        let evaluated: Vec<usize> = (1..=10).filter(|&e| c.evaluates(e)).collect();
        assert_eq!(evaluated, vec![1, 4, 8, 10]);
    }
}

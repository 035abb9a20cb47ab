use crate::config::PreferenceConfig;
use crate::error::{Error, Result};

/// Anchor preferences with their guide window.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceAnchors {
    anchors: Vec<f64>,
    guide_distance: f64,
    reg_weight: f64,
}

impl PreferenceAnchors {
    pub fn new(anchors: Vec<f64>, guide_distance: f64, reg_weight: f64) -> Result<Self> {
        if anchors.is_empty() || anchors.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("anchors must be non-empty, sorted and distinct".into()));
        }
        if !(guide_distance > 0.0) || !(reg_weight >= 0.0) {
            return Err(Error::InvalidConfig("guide distance must be positive and weight non-negative".into()));
        }
        Ok(PreferenceAnchors { anchors, guide_distance, reg_weight })
    }

    pub fn from_config(cfg: &PreferenceConfig) -> Result<Self> {
        Self::new(cfg.anchors.clone(), cfg.guide_distance, cfg.reg_weight)
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn guide_distance(&self) -> f64 {
        self.guide_distance
    }

    pub fn reg_weight(&self) -> f64 {
        self.reg_weight
    }

    /// Index of the closest anchor; ties go to the lower anchor.
    pub fn nearest(&self, beta: f64) -> usize {
        let mut best = 0;
        for (k, a) in self.anchors.iter().enumerate().skip(1) {
            if (a - beta).abs() < (self.anchors[best] - beta).abs() {
                best = k;
            }
        }
        best
    }

    /// The anchor guiding a sample with preference `beta`, if any lies
    /// within the guide distance.
    pub fn matched(&self, beta: f64) -> Option<usize> {
        let k = self.nearest(beta);
        ((self.anchors[k] - beta).abs() <= self.guide_distance).then_some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn default() -> PreferenceAnchors {
        PreferenceAnchors::from_config(&PreferenceConfig::default()).unwrap()
    }

    #[test]
    fn anchors_match_themselves() {
        let a = default();
        for (k, &b) in a.anchors().iter().enumerate() {
            assert_eq!(a.matched(b), Some(k));
        }
        assert_eq!(a.matched(0.5), None);
        assert_eq!(a.matched(-1.05), Some(0));
        assert_eq!(a.matched(2.95), Some(4));
    }

    #[test]
    fn nearest_ties_go_low() {
        let a = default();
        assert_eq!(a.nearest(-0.5), 0);
        assert_eq!(a.nearest(2.5), 3);
        assert_eq!(a.nearest(9.0), 4);
    }

    #[test]
    fn matched_fraction_under_uniform_sampling() {
        let a = default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let hits = (0..n).filter(|_| a.matched(rng.gen_range(-1.0..3.0)).is_some()).count();
        assert!((hits as f64 / n as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_anchor_sets() {
        assert!(PreferenceAnchors::new(vec![], 0.1, 0.0).is_err());
        assert!(PreferenceAnchors::new(vec![1.0, 1.0], 0.1, 0.0).is_err());
        assert!(PreferenceAnchors::new(vec![0.0], 0.0, 0.0).is_err());
    }
}

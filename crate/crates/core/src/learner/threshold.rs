//! Deterministic online learners for one-dimensional threshold streams:
//! predict mode 1 when `x` exceeds an estimated threshold.

use crate::error::Result;
use crate::generators::ThresholdStream;

pub trait ThresholdLearner {
    fn name(&self) -> &'static str;
    fn predict(&mut self, x: f64) -> usize;
    fn update(&mut self, x: f64, mode: usize);
}

/// Keeps the interval of consistent thresholds and predicts with its
/// midpoint.
#[derive(Clone, Debug)]
pub struct Halving {
    lo: f64,
    hi: f64,
}

impl Default for Halving {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

impl ThresholdLearner for Halving {
    fn name(&self) -> &'static str {
        "halving"
    }

    fn predict(&mut self, x: f64) -> usize {
        usize::from(x > 0.5 * (self.lo + self.hi))
    }

    fn update(&mut self, x: f64, mode: usize) {
        if mode == 1 {
            self.hi = self.hi.min(x);
        } else {
            self.lo = self.lo.max(x);
        }
    }
}

/// Threshold at the largest point seen with mode 0.
#[derive(Clone, Debug)]
pub struct FollowTheLeader {
    threshold: f64,
}

impl Default for FollowTheLeader {
    fn default() -> Self {
        Self {
            threshold: f64::NEG_INFINITY,
        }
    }
}

impl ThresholdLearner for FollowTheLeader {
    fn name(&self) -> &'static str {
        "follow_the_leader"
    }

    fn predict(&mut self, x: f64) -> usize {
        usize::from(x > self.threshold)
    }

    fn update(&mut self, x: f64, mode: usize) {
        if mode == 0 {
            self.threshold = self.threshold.max(x);
        }
    }
}

#[derive(Clone, Debug)]
pub struct Constant(pub usize);

impl ThresholdLearner for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn predict(&mut self, _x: f64) -> usize {
        self.0
    }

    fn update(&mut self, _x: f64, _mode: usize) {}
}

pub fn learner_by_name(name: &str) -> Option<Box<dyn ThresholdLearner + Send>> {
    match name {
        "halving" => Some(Box::new(Halving::default())),
        "follow_the_leader" | "ftl" => Some(Box::new(FollowTheLeader::default())),
        "constant0" | "constant" => Some(Box::new(Constant(0))),
        "constant1" => Some(Box::new(Constant(1))),
        _ => None,
    }
}

/// Plays the stream and returns per-round mistake flags.
pub fn play(stream: &ThresholdStream, learner: &mut dyn ThresholdLearner) -> Result<Vec<bool>> {
    Ok(stream
        .points
        .iter()
        .zip(&stream.labels)
        .map(|(&x, &mode)| {
            let guess = learner.predict(x);
            learner.update(x, mode);
            guess != mode
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::adversarial_threshold_stream;
    use crate::rng::SeededRng;

    #[test]
    fn halving_learns_a_fixed_threshold() {
        let mut h = Halving::default();
        let mut mistakes = 0;
        let theta = 0.3141;
        for i in 0..200 {
            let x = ((i * 37) % 101) as f64 / 101.0;
            let mode = usize::from(x > theta);
            mistakes += usize::from(h.predict(x) != mode);
            h.update(x, mode);
        }
        assert!(mistakes < 20);
    }

    #[test]
    fn learners_by_name() {
        for name in ["halving", "ftl", "constant0", "constant1"] {
            assert!(learner_by_name(name).is_some());
        }
        assert!(learner_by_name("oracle").is_none());
    }

    #[test]
    fn stream_rate_is_about_half() {
        let mut total = 0;
        let mut count = 0;
        for seed in 0..40 {
            let s = adversarial_threshold_stream(200, &mut SeededRng::new(seed, 0)).unwrap();
            let flags = play(&s, &mut Halving::default()).unwrap();
            total += flags.iter().filter(|&&m| m).count();
            count += flags.len();
        }
        let rate = total as f64 / count as f64;
        assert!((0.4..0.6).contains(&rate), "rate {rate}");
    }
}

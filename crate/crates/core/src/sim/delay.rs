use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Propagation speed used for `p_del`, in m/s.
pub const SIGNAL_SPEED: f64 = 3.0e8;

/// Per-hop delay split into buffering, channel access, transmission and
/// propagation components (all in seconds).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub b_del: f64,
    pub ca_del: f64,
    pub t_del: f64,
    pub p_del: f64,
}

impl DelayBreakdown {
    pub fn total(&self) -> f64 {
        self.b_del + self.ca_del + self.t_del + self.p_del
    }

    /// Portion of the hop spent after leaving the buffer.
    pub fn after_buffer(&self) -> f64 {
        self.ca_del + self.t_del + self.p_del
    }

    pub fn accumulate(&mut self, other: &DelayBreakdown) {
        self.b_del += other.b_del;
        self.ca_del += other.ca_del;
        self.t_del += other.t_del;
        self.p_del += other.p_del;
    }
}

/// Channel-access delay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelAccess {
    Fixed { delay: f64 },
    /// Exponential with the given mean, clamped to `cap`.
    Exponential { mean: f64, cap: f64 },
}

impl Default for ChannelAccess {
    fn default() -> Self {
        ChannelAccess::Exponential {
            mean: 0.002,
            cap: 0.05,
        }
    }
}

impl ChannelAccess {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ChannelAccess::Fixed { delay } => delay,
            ChannelAccess::Exponential { mean, cap } => {
                if mean <= 0.0 {
                    return 0.0;
                }
                let exp = Exp::new(1.0 / mean).expect("positive rate");
                exp.sample(rng).min(cap)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ChannelAccess::Fixed { delay } => delay,
            // mean of min(X, cap) for X ~ Exp(1/mean)
            ChannelAccess::Exponential { mean, cap } => {
                if mean <= 0.0 {
                    0.0
                } else {
                    mean * (1.0 - (-cap / mean).exp())
                }
            }
        }
    }

    pub(crate) fn validate(&self) -> Result<(), &'static str> {
        match *self {
            ChannelAccess::Fixed { delay } if !(delay >= 0.0 && delay.is_finite()) => {
                Err("fixed channel-access delay must be finite and >= 0")
            }
            ChannelAccess::Exponential { mean, cap }
                if !(mean >= 0.0 && cap >= 0.0 && mean.is_finite() && cap.is_finite()) =>
            {
                Err("exponential mean and cap must be finite and >= 0")
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;

    #[test]
    fn total_is_component_sum() {
        let d = DelayBreakdown {
            b_del: 0.1,
            ca_del: 0.002,
            t_del: 0.004,
            p_del: 1e-7,
        };
        assert_eq!(d.total(), 0.1 + 0.002 + 0.004 + 1e-7);
    }

    #[test]
    fn exponential_is_capped_and_nonnegative() {
        let ca = ChannelAccess::Exponential {
            mean: 0.01,
            cap: 0.015,
        };
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10_000 {
            let x = ca.sample(&mut rng);
            assert!((0.0..=0.015).contains(&x));
        }
    }

    #[test]
    fn truncated_mean_matches_samples() {
        let ca = ChannelAccess::default();
        let mut rng = RngStream::new(3, 9);
        let n = 200_000;
        let avg: f64 = (0..n).map(|_| ca.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((avg - ca.mean()).abs() < 2e-5, "{avg} vs {}", ca.mean());
    }
}

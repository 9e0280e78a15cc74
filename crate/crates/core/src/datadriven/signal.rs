use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a seeded sum-of-sinusoids signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub amplitude: f64,
    /// Number of frequencies per channel.
    pub count: usize,
    /// Frequencies are drawn uniformly from `[range[0], range[1]]` (rad/time).
    pub range: [f64; 2],
    pub seed: u64,
}

/// `amplitude * sum_j sin(omega_j t)` on each channel, with every channel
/// drawing its own frequency set.
#[derive(Debug, Clone, PartialEq)]
pub struct SinusoidSignal {
    spec: SignalSpec,
    frequencies: Vec<Vec<f64>>,
}

impl SinusoidSignal {
    pub fn sampled(spec: SignalSpec, channels: usize) -> Result<Self> {
        let [lo, hi] = spec.range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "frequency range [{lo}, {hi}] is invalid"
            )));
        }
        if !spec.amplitude.is_finite() {
            return Err(Error::InvalidArgument("signal amplitude must be finite".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let frequencies = (0..channels)
            .map(|_| {
                (0..spec.count)
                    .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
                    .collect()
            })
            .collect();
        Ok(Self { spec, frequencies })
    }

    /// A signal that is identically zero.
    pub fn zero(channels: usize) -> Self {
        Self {
            spec: SignalSpec {
                amplitude: 0.0,
                count: 0,
                range: [0.0, 0.0],
                seed: 0,
            },
            frequencies: vec![Vec::new(); channels],
        }
    }

    pub fn spec(&self) -> &SignalSpec {
        &self.spec
    }

    pub fn channels(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[Vec<f64>] {
        &self.frequencies
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels(),
            self.frequencies
                .iter()
                .map(|freqs| self.spec.amplitude * freqs.iter().map(|w| (w * t).sin()).sum::<f64>()),
        )
    }
}

use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Physiological hand tremor: one sinusoid per axis in the 8–12 Hz band.
#[derive(Debug, Clone, PartialEq)]
pub struct Tremor {
    /// Peak-to-peak amplitude, mm.
    pub amplitude_mm: f64,
    pub frequency_hz: [f64; 3],
    pub phase: [f64; 3],
}

impl Tremor {
    pub fn new(amplitude_um: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequency_hz = std::array::from_fn(|_| rng.random_range(8.0..=12.0));
        let phase = std::array::from_fn(|_| rng.random_range(0.0..TAU));
        Tremor {
            amplitude_mm: amplitude_um * 1e-3,
            frequency_hz,
            phase,
        }
    }

    pub fn offset(&self, t: f64) -> Vector3<f64> {
        let half = 0.5 * self.amplitude_mm;
        Vector3::from_fn(|k, _| half * (TAU * self.frequency_hz[k] * t + self.phase[k]).sin())
    }

    /// Time derivative of [`Tremor::offset`], mm/s.
    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let half = 0.5 * self.amplitude_mm;
        Vector3::from_fn(|k, _| {
            let w = TAU * self.frequency_hz[k];
            half * w * (w * t + self.phase[k]).cos()
        })
    }
}

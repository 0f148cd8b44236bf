use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tissue::{ContactReport, TissueEvent, TissueState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceConfig {
    /// Per-axis bound of the uniform sensor noise, mN.
    pub noise_amplitude_mn: f64,
    pub wall_stiffness_mn_per_um: f64,
    pub spike_amplitude_mn: f64,
    pub spike_tau_s: f64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            noise_amplitude_mn: 0.2,
            wall_stiffness_mn_per_um: 0.05,
            spike_amplitude_mn: 5.0,
            spike_tau_s: 0.05,
        }
    }
}

impl ForceConfig {
    /// Largest noise magnitude the sensor can report with no contact.
    pub fn noise_floor_mn(&self) -> f64 {
        3f64.sqrt() * self.noise_amplitude_mn
    }

    /// Magnitude above which a sample counts as part of a puncture spike.
    pub fn spike_threshold_mn(&self) -> f64 {
        0.5 * self.spike_amplitude_mn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub force: Vector3<f64>,
    pub spring_mn: f64,
    pub spike_mn: f64,
}

/// Synthesises the handle force: wall spring, decaying puncture spikes and
/// bounded sensor noise.
#[derive(Debug, Clone)]
pub struct ForceSynth {
    cfg: ForceConfig,
    rng: ChaCha8Rng,
    spikes: Vec<(f64, Vector3<f64>)>,
}

impl ForceSynth {
    pub fn new(cfg: ForceConfig, seed: u64) -> Self {
        ForceSynth {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            spikes: Vec::new(),
        }
    }

    pub fn config(&self) -> &ForceConfig {
        &self.cfg
    }

    /// Force at time `t`, given the tissue state after this step and any
    /// events the step produced.
    pub fn sample(
        &mut self,
        t: f64,
        tissue: &TissueState,
        report: &ContactReport,
        events: &[TissueEvent],
    ) -> ForceSample {
        if events.contains(&TissueEvent::PunctureOccurred) {
            self.spikes.push((t, report.normal));
        }
        let spring_mn = self.cfg.wall_stiffness_mn_per_um * tissue.deflection_um;
        let mut force = report.normal * spring_mn;
        let mut spike_mn = 0.0;
        let tau = self.cfg.spike_tau_s;
        self.spikes.retain(|(t0, _)| t - t0 < 20.0 * tau);
        for (t0, dir) in &self.spikes {
            let m = self.cfg.spike_amplitude_mn * (-(t - t0) / tau).exp();
            spike_mn += m;
            force += dir * m;
        }
        let a = self.cfg.noise_amplitude_mn;
        if a > 0.0 {
            force += Vector3::from_fn(|_, _| self.rng.random_range(-a..=a));
        }
        ForceSample {
            force,
            spring_mn,
            spike_mn,
        }
    }
}

/// Counts rising crossings of the spike threshold in a force-magnitude trace.
pub fn count_spikes(magnitudes: &[f64], threshold: f64) -> usize {
    let mut above = false;
    let mut n = 0;
    for &m in magnitudes {
        if m > threshold && !above {
            n += 1;
        }
        above = m > threshold;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eye_sim::{tip_tissue_query, Scenario};

    fn free() -> (TissueState, ContactReport) {
        let s = Scenario::default();
        let t = TissueState::new(&s);
        let r = tip_tissue_query(&s.initial_tip(), &s, &t);
        (t, r)
    }

    #[test]
    fn noise_stays_within_floor() {
        let (t, r) = free();
        let mut f = ForceSynth::new(ForceConfig::default(), 1);
        let floor = f.config().noise_floor_mn();
        for i in 0..10_000 {
            let s = f.sample(i as f64 * 0.005, &t, &r, &[]);
            assert!(s.force.norm() <= floor + 1e-12);
            for k in 0..3 {
                assert!(s.force[k].abs() <= 0.2);
            }
        }
    }

    #[test]
    fn spike_decays_exponentially() {
        let (t, r) = free();
        let cfg = ForceConfig {
            noise_amplitude_mn: 0.0,
            ..ForceConfig::default()
        };
        let mut f = ForceSynth::new(cfg, 1);
        let s0 = f.sample(1.0, &t, &r, &[TissueEvent::PunctureOccurred]);
        assert!((s0.force.norm() - 5.0).abs() < 1e-12);
        let s1 = f.sample(1.05, &t, &r, &[]);
        assert!((s1.spike_mn - 5.0 * (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn spring_is_hookean() {
        let (mut t, r) = free();
        t.deflection_um = 20.0;
        let cfg = ForceConfig {
            noise_amplitude_mn: 0.0,
            ..ForceConfig::default()
        };
        let s = ForceSynth::new(cfg, 0).sample(0.0, &t, &r, &[]);
        assert!((s.force.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let (t, r) = free();
        let mut a = ForceSynth::new(ForceConfig::default(), 42);
        let mut b = ForceSynth::new(ForceConfig::default(), 42);
        for i in 0..100 {
            let ti = i as f64 * 0.005;
            assert_eq!(a.sample(ti, &t, &r, &[]), b.sample(ti, &t, &r, &[]));
        }
    }

    #[test]
    fn spike_counting() {
        assert_eq!(count_spikes(&[0.1, 3.0, 4.0, 1.0, 0.2, 3.0, 0.1], 2.5), 2);
        assert_eq!(count_spikes(&[], 2.5), 0);
    }
}

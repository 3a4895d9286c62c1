//! Rolling per-phase deviation bands: mean, population standard deviation,
//! and coefficient of variation for every (phase bin, state) pair over a
//! window of recent steady cycles.

use std::collections::VecDeque;

use thiserror::Error;

use crate::kinematics::{STATE_COUNT, STATE_NAMES};

/// One resampled cycle: `bins` rows of 16 states.
pub type CycleMatrix = Vec<[f64; STATE_COUNT]>;

/// Coefficient of variation with a magnitude floor on the mean so the
/// ratio stays finite when a state crosses zero.
pub fn cov(mean: f64, sd: f64, epsilon: f64) -> f64 {
    sd / mean.abs().max(epsilon)
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("cycle matrix has {got} rows, model expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
}

/// Per-bin, per-state band statistics over the most recent
/// `window_cycles` pushed cycles. The model is only usable once the
/// window is full; statistics are recomputed exactly from the retained
/// queue on every push.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBandModel {
    window_cycles: usize,
    bins: usize,
    epsilon: f64,
    queue: VecDeque<CycleMatrix>,
    mean: Vec<[f64; STATE_COUNT]>,
    sd: Vec<[f64; STATE_COUNT]>,
    cov: Vec<[f64; STATE_COUNT]>,
}

impl PhaseBandModel {
    pub fn new(window_cycles: usize, bins: usize, epsilon: f64) -> Result<Self, StatsError> {
        if window_cycles == 0 {
            return Err(StatsError::InvalidConfig("window_cycles must be >= 1"));
        }
        if bins < 2 {
            return Err(StatsError::InvalidConfig("bins must be >= 2"));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(StatsError::InvalidConfig("epsilon must be > 0"));
        }
        Ok(Self {
            window_cycles,
            bins,
            epsilon,
            queue: VecDeque::with_capacity(window_cycles + 1),
            mean: vec![[0.0; STATE_COUNT]; bins],
            sd: vec![[0.0; STATE_COUNT]; bins],
            cov: vec![[0.0; STATE_COUNT]; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn window_cycles(&self) -> usize {
        self.window_cycles
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn window_len(&self) -> usize {
        self.queue.len()
    }

    /// True once the window holds exactly `window_cycles` cycles.
    pub fn is_valid(&self) -> bool {
        self.queue.len() == self.window_cycles
    }

    /// Enqueue a cycle, evicting the oldest beyond the window, and rebuild
    /// all statistics from the retained cycles.
    pub fn push_cycle(&mut self, cycle: CycleMatrix) -> Result<(), StatsError> {
        if cycle.len() != self.bins {
            return Err(StatsError::DimensionMismatch {
                got: cycle.len(),
                want: self.bins,
            });
        }
        self.queue.push_back(cycle);
        if self.queue.len() > self.window_cycles {
            self.queue.pop_front();
        }
        self.recompute();
        Ok(())
    }

    fn recompute(&mut self) {
        let n = self.queue.len() as f64;
        for b in 0..self.bins {
            for s in 0..STATE_COUNT {
                let mut sum = 0.0;
                for c in &self.queue {
                    sum += c[b][s];
                }
                let mean = sum / n;
                let mut ss = 0.0;
                for c in &self.queue {
                    let d = c[b][s] - mean;
                    ss += d * d;
                }
                let sd = (ss / n).sqrt();
                self.mean[b][s] = mean;
                self.sd[b][s] = sd;
                self.cov[b][s] = cov(mean, sd, self.epsilon);
            }
        }
    }

    pub fn mean_at(&self, bin: usize) -> &[f64; STATE_COUNT] {
        &self.mean[bin]
    }

    pub fn sd_at(&self, bin: usize) -> &[f64; STATE_COUNT] {
        &self.sd[bin]
    }

    pub fn cov_at(&self, bin: usize) -> &[f64; STATE_COUNT] {
        &self.cov[bin]
    }

    /// CSV dump (`bin,state,mean,sd,cov`) for debugging and plotting.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("bin,state,mean,sd,cov\n");
        for b in 0..self.bins {
            for s in 0..STATE_COUNT {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    b, STATE_NAMES[s], self.mean[b][s], self.sd[b][s], self.cov[b][s]
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_cycle(bins: usize, v: f64) -> CycleMatrix {
        vec![[v; STATE_COUNT]; bins]
    }

    #[test]
    fn identical_cycles_have_zero_spread() {
        let mut m = PhaseBandModel::new(10, 8, 1e-6).unwrap();
        for _ in 0..10 {
            m.push_cycle(constant_cycle(8, 2.0)).unwrap();
        }
        assert!(m.is_valid());
        for b in 0..8 {
            for s in 0..STATE_COUNT {
                assert_eq!(m.mean_at(b)[s], 2.0);
                assert_eq!(m.sd_at(b)[s], 0.0);
                assert_eq!(m.cov_at(b)[s], 0.0);
            }
        }
    }

    #[test]
    fn two_cycle_window_population_sigma() {
        let mut m = PhaseBandModel::new(2, 4, 1e-6).unwrap();
        m.push_cycle(constant_cycle(4, 1.0)).unwrap();
        m.push_cycle(constant_cycle(4, 3.0)).unwrap();
        assert_eq!(m.mean_at(0)[0], 2.0);
        // Population formula: sqrt(((1-2)^2 + (3-2)^2) / 2) = 1.
        assert_eq!(m.sd_at(0)[0], 1.0);
    }

    #[test]
    fn eleventh_push_forgets_the_first_cycle() {
        let mut a = PhaseBandModel::new(10, 4, 1e-6).unwrap();
        a.push_cycle(constant_cycle(4, 99.0)).unwrap();
        for k in 0..10 {
            a.push_cycle(constant_cycle(4, k as f64)).unwrap();
        }
        let mut b = PhaseBandModel::new(10, 4, 1e-6).unwrap();
        for k in 0..10 {
            b.push_cycle(constant_cycle(4, k as f64)).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn cov_definition_and_floor() {
        assert!((cov(1.0, 0.1, 1e-6) - 0.1).abs() < 1e-15);
        // Zero mean falls back to the epsilon floor: 0.1 / 1e-6 = 1e5.
        assert!((cov(0.0, 0.1, 1e-6) - 1e5).abs() < 1e-9);
        // Negative means use their magnitude: 0.1 / 0.5 = 0.2.
        assert!((cov(-0.5, 0.1, 1e-6) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut m = PhaseBandModel::new(10, 8, 1e-6).unwrap();
        assert!(matches!(
            m.push_cycle(constant_cycle(7, 0.0)),
            Err(StatsError::DimensionMismatch { got: 7, want: 8 })
        ));
    }

    #[test]
    fn dump_csv_has_row_per_bin_state() {
        let mut m = PhaseBandModel::new(1, 3, 1e-6).unwrap();
        m.push_cycle(constant_cycle(3, 1.5)).unwrap();
        let csv = m.dump_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "bin,state,mean,sd,cov");
        assert_eq!(lines.len(), 1 + 3 * STATE_COUNT);
        assert_eq!(lines[1], "0,rheel_rel_com_x,1.5,0,0");
    }

    proptest! {
        #[test]
        fn scaling_window_values_leaves_cov_unchanged(
            vals in proptest::collection::vec(0.5f64..4.0, 5),
            k in 0.1f64..10.0,
        ) {
            let mut base = PhaseBandModel::new(5, 2, 1e-9).unwrap();
            let mut scaled = PhaseBandModel::new(5, 2, 1e-9).unwrap();
            for &v in &vals {
                base.push_cycle(constant_cycle(2, v)).unwrap();
                scaled.push_cycle(constant_cycle(2, v * k)).unwrap();
            }
            let (m0, s0, c0) = (base.mean_at(0)[0], base.sd_at(0)[0], base.cov_at(0)[0]);
            let (m1, s1, c1) = (scaled.mean_at(0)[0], scaled.sd_at(0)[0], scaled.cov_at(0)[0]);
            prop_assert!((m1 - k * m0).abs() < 1e-9 * m0.abs().max(1.0) * k.max(1.0));
            prop_assert!((s1 - k * s0).abs() < 1e-9 * (s0 + 1.0) * k.max(1.0));
            prop_assert!((c1 - c0).abs() < 1e-9 * (c0 + 1.0));
        }

        #[test]
        fn model_is_a_pure_function_of_the_retained_window(
            vals in proptest::collection::vec(-3.0f64..3.0, 12..20),
        ) {
            let mut rolling = PhaseBandModel::new(10, 3, 1e-6).unwrap();
            for &v in &vals {
                rolling.push_cycle(constant_cycle(3, v)).unwrap();
            }
            let mut rebuilt = PhaseBandModel::new(10, 3, 1e-6).unwrap();
            for &v in &vals[vals.len() - 10..] {
                rebuilt.push_cycle(constant_cycle(3, v)).unwrap();
            }
            prop_assert_eq!(rolling, rebuilt);
        }
    }
}

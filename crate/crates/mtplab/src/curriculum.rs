//! Head-activation schedules: how many prediction heads are active at each
//! training step.
//!
//! Schedules are defined on normalized progress p = s/S over k_max equal
//! phases. `forward` starts at one head and adds one per phase; `reverse`
//! starts with all heads and removes one per phase; `none` keeps all heads
//! active throughout. Active heads are always the prefix {1..k}: the
//! nearest-offset heads survive longest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumMode {
    #[default]
    None,
    Forward,
    Reverse,
}

impl std::fmt::Display for CurriculumMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CurriculumMode::None => "none",
            CurriculumMode::Forward => "forward",
            CurriculumMode::Reverse => "reverse",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurriculumSpec {
    pub mode: CurriculumMode,
    pub k_max: usize,
    pub total_steps: usize,
}

/// One schedule phase: `k` heads are active for steps in `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Phase {
    pub start: usize,
    pub end: usize,
    pub k: usize,
}

impl CurriculumSpec {
    pub fn new(mode: CurriculumMode, k_max: usize, total_steps: usize) -> Result<Self> {
        let spec = CurriculumSpec { mode, k_max, total_steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::invalid("curriculum: k_max must be at least 1"));
        }
        if self.total_steps < self.k_max {
            return Err(Error::invalid(format!(
                "curriculum: total_steps {} < k_max {} would leave an empty phase",
                self.total_steps, self.k_max
            )));
        }
        Ok(())
    }

    /// Number of active heads at step `s` (0-based, `s < total_steps`).
    ///
    /// With integer arithmetic, `floor(p * k_max)` for progress p = s/S is
    /// exactly `s * k_max / S`, so no floats are involved.
    pub fn active_heads(&self, s: usize) -> Result<usize> {
        if s >= self.total_steps {
            return Err(Error::invalid(format!(
                "curriculum: step {s} outside [0, {})",
                self.total_steps
            )));
        }
        let phase = (s as u64 * self.k_max as u64 / self.total_steps as u64) as usize;
        Ok(match self.mode {
            CurriculumMode::None => self.k_max,
            CurriculumMode::Forward => (phase + 1).min(self.k_max),
            CurriculumMode::Reverse => self.k_max.saturating_sub(phase).max(1),
        })
    }

    /// The schedule as explicit phases partitioning `[0, total_steps)`.
    /// Phase j starts at the first step whose progress reaches (j-1)/k_max,
    /// which places any remainder steps in the earliest phases.
    pub fn phase_plan(&self) -> Vec<Phase> {
        let (k, s) = (self.k_max as u64, self.total_steps as u64);
        (0..self.k_max)
            .map(|j| {
                let start = ((j as u64) * s).div_ceil(k) as usize;
                let end = ((j as u64 + 1) * s).div_ceil(k) as usize;
                let k_active = match self.mode {
                    CurriculumMode::None => self.k_max,
                    CurriculumMode::Forward => j + 1,
                    CurriculumMode::Reverse => self.k_max - j,
                };
                Phase { start, end, k: k_active }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(mode: CurriculumMode, k_max: usize, s: usize) -> CurriculumSpec {
        CurriculumSpec::new(mode, k_max, s).unwrap()
    }

    #[test]
    fn forward_examples() {
        let c = spec(CurriculumMode::Forward, 3, 12);
        for (s, want) in [(0, 1), (4, 2), (8, 3), (11, 3)] {
            assert_eq!(c.active_heads(s).unwrap(), want, "s={s}");
        }
    }

    #[test]
    fn reverse_examples() {
        let c = spec(CurriculumMode::Reverse, 3, 12);
        for (s, want) in [(0, 3), (4, 2), (8, 1), (11, 1)] {
            assert_eq!(c.active_heads(s).unwrap(), want, "s={s}");
        }
    }

    #[test]
    fn none_is_constant() {
        let c = spec(CurriculumMode::None, 4, 10);
        for s in 0..10 {
            assert_eq!(c.active_heads(s).unwrap(), 4);
        }
    }

    #[test]
    fn step_out_of_range_errors() {
        let c = spec(CurriculumMode::Forward, 2, 10);
        assert!(c.active_heads(10).is_err());
        assert!(c.active_heads(9).is_ok());
    }

    #[test]
    fn rejects_more_phases_than_steps() {
        assert!(CurriculumSpec::new(CurriculumMode::Forward, 5, 4).is_err());
        assert!(CurriculumSpec::new(CurriculumMode::Forward, 0, 4).is_err());
        assert!(CurriculumSpec::new(CurriculumMode::Forward, 4, 4).is_ok());
    }

    #[test]
    fn even_split_phase_plan() {
        let plan = spec(CurriculumMode::Forward, 4, 100).phase_plan();
        let lens: Vec<usize> = plan.iter().map(|p| p.end - p.start).collect();
        assert_eq!(lens, vec![25, 25, 25, 25]);
        assert_eq!(plan.iter().map(|p| p.k).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn uneven_split_gives_remainder_to_early_phases() {
        // 10 steps over 3 phases: the formula floor(s*3/10) advances at
        // s=4 and s=7, so lengths are 4,3,3.
        let plan = spec(CurriculumMode::Reverse, 3, 10).phase_plan();
        let lens: Vec<usize> = plan.iter().map(|p| p.end - p.start).collect();
        assert_eq!(lens, vec![4, 3, 3]);
        assert_eq!(plan.iter().map(|p| p.k).collect::<Vec<_>>(), vec![3, 2, 1]);
    }

    #[test]
    fn plan_agrees_with_active_heads_everywhere() {
        // Brute force: every mode, several (k_max, S) shapes, every step.
        for mode in [CurriculumMode::None, CurriculumMode::Forward, CurriculumMode::Reverse] {
            for k_max in 1..=8 {
                for s_total in [k_max, k_max + 1, 2 * k_max + 3, 97, 1000] {
                    let c = spec(mode, k_max, s_total);
                    let plan = c.phase_plan();
                    assert_eq!(plan[0].start, 0);
                    assert_eq!(plan.last().unwrap().end, s_total);
                    for w in plan.windows(2) {
                        assert_eq!(w[0].end, w[1].start, "phases must tile [0,S)");
                    }
                    for s in 0..s_total {
                        let by_plan = plan.iter().find(|p| p.start <= s && s < p.end).unwrap().k;
                        assert_eq!(
                            c.active_heads(s).unwrap(),
                            by_plan,
                            "{mode} k_max={k_max} S={s_total} s={s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn monotonicity_and_coverage() {
        for k_max in 1..=6 {
            for s_total in [k_max, 3 * k_max + 1, 50] {
                let fwd = spec(CurriculumMode::Forward, k_max, s_total);
                let rev = spec(CurriculumMode::Reverse, k_max, s_total);
                let f: Vec<usize> = (0..s_total).map(|s| fwd.active_heads(s).unwrap()).collect();
                let r: Vec<usize> = (0..s_total).map(|s| rev.active_heads(s).unwrap()).collect();
                assert!(f.windows(2).all(|w| w[0] <= w[1]), "forward non-decreasing");
                assert!(r.windows(2).all(|w| w[0] >= w[1]), "reverse non-increasing");
                assert_eq!((f[0], *f.last().unwrap()), (1, k_max), "forward spans 1..k_max");
                assert_eq!((r[0], *r.last().unwrap()), (k_max, 1), "reverse spans k_max..1");
                for k in 1..=k_max {
                    assert!(f.contains(&k) && r.contains(&k), "every k visited");
                }
            }
        }
    }

    #[test]
    fn mode_serde_round_trip() {
        for (mode, text) in [
            (CurriculumMode::None, "\"none\""),
            (CurriculumMode::Forward, "\"forward\""),
            (CurriculumMode::Reverse, "\"reverse\""),
        ] {
            assert_eq!(serde_json::to_string(&mode).unwrap(), text);
            assert_eq!(serde_json::from_str::<CurriculumMode>(text).unwrap(), mode);
        }
    }
}

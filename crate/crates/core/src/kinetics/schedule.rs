use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ordered, contiguous acquisition frames `(t_start, t_end)` in minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    frames: Vec<(f64, f64)>,
}

impl FrameSchedule {
    pub fn new(frames: Vec<(f64, f64)>) -> Result<Self> {
        if frames.is_empty() {
            return Err(invalid("frame schedule is empty"));
        }
        if frames[0].0 != 0.0 {
            return Err(invalid(format!("first frame must start at 0, got {}", frames[0].0)));
        }
        for (k, &(ts, te)) in frames.iter().enumerate() {
            if !(ts.is_finite() && te.is_finite() && ts < te) {
                return Err(invalid(format!("frame {k}: start {ts} must precede end {te}")));
            }
            if k + 1 < frames.len() && (frames[k + 1].0 - te).abs() > 1e-9 {
                return Err(invalid(format!("frame {k} ends at {te} but frame {} starts at {}", k + 1, frames[k + 1].0)));
            }
        }
        Ok(Self { frames })
    }

    /// Builds a schedule from `(count, duration in seconds)` groups, e.g.
    /// `[(4, 30), (4, 120), (10, 300)]`.
    pub fn from_groups(groups: &[(usize, f64)]) -> Result<Self> {
        let mut frames = Vec::new();
        let mut elapsed_sec = 0.0;
        for &(count, seconds) in groups {
            for _ in 0..count {
                frames.push((elapsed_sec / 60.0, (elapsed_sec + seconds) / 60.0));
                elapsed_sec += seconds;
            }
        }
        Self::new(frames)
    }

    /// The 18-frame, 60 minute protocol `4×30 s + 4×120 s + 10×300 s`.
    pub fn standard_18() -> Self {
        Self::from_groups(&[(4, 30.0), (4, 120.0), (10, 300.0)]).expect("valid preset")
    }

    pub fn frames(&self) -> &[(f64, f64)] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.frames.last().map(|f| f.1).unwrap_or(0.0)
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.frames.iter().map(|&(s, e)| 0.5 * (s + e)).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.frames.iter().map(|&(s, e)| e - s).collect()
    }

    /// Indices of the last `n` frames (all frames if `n` exceeds the count).
    pub fn last_frames(&self, n: usize) -> Vec<usize> {
        let start = self.frames.len().saturating_sub(n);
        (start..self.frames.len()).collect()
    }

    /// Indices of frames starting at or after `t_min`.
    pub fn frames_from(&self, t_min: f64) -> Vec<usize> {
        (0..self.frames.len()).filter(|&k| self.frames[k].0 >= t_min - 1e-9).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_protocol_layout() {
        let s = FrameSchedule::standard_18();
        assert_eq!(s.len(), 18);
        assert_eq!(s.end(), 60.0);
        assert_eq!(s.frames()[4], (2.0, 4.0));
        assert_eq!(s.frames()[8], (10.0, 15.0));
        assert_eq!(s.last_frames(10), (8..18).collect::<Vec<_>>());
        assert_eq!(s.frames_from(30.0), (12..18).collect::<Vec<_>>());
        // first 12 frames cover the first 30 minutes
        assert_eq!(s.frames()[11].1, 30.0);
    }

    #[test]
    fn rejects_gaps_and_bad_start() {
        assert!(FrameSchedule::new(vec![(0.0, 1.0), (1.5, 2.0)]).is_err());
        assert!(FrameSchedule::new(vec![(0.5, 1.0)]).is_err());
        assert!(FrameSchedule::new(vec![(0.0, 0.0)]).is_err());
        assert!(FrameSchedule::new(vec![]).is_err());
    }
}

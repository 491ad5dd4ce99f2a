//! Photon-counting detection records and their CSV layout.
//!
//! ```text
//! # dt=0.001
//! # n_steps=25000
//! # detectors=0,1
//! step_index,detector_id
//! 0,-1
//! 1,0
//! ...
//! ```
//!
//! One row per time step; `-1` marks a step without a click.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("click at step {step} is not after the previous click")]
    OutOfOrder { step: usize },
    #[error("step {step} is outside the record ({n_steps} steps)")]
    OutOfRange { step: usize, n_steps: usize },
    #[error("unknown detector {0}")]
    UnknownDetector(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Click/no-click sequence of one or more photon counters on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    dt: f64,
    n_steps: usize,
    detectors: Vec<u16>,
    clicks: Vec<(u32, u16)>,
}

impl DetectionRecord {
    pub fn new(dt: f64, n_steps: usize, detectors: Vec<u16>) -> Self {
        Self { dt, n_steps, detectors, clicks: Vec::new() }
    }

    /// Registers a click at `step`. Steps must be strictly increasing: at most
    /// one click per step.
    pub fn push(&mut self, step: usize, detector: u16) -> Result<(), RecordError> {
        if step >= self.n_steps {
            return Err(RecordError::OutOfRange { step, n_steps: self.n_steps });
        }
        if !self.detectors.contains(&detector) {
            return Err(RecordError::UnknownDetector(detector));
        }
        if let Some(&(last, _)) = self.clicks.last() {
            if step as u32 <= last {
                return Err(RecordError::OutOfOrder { step });
            }
        }
        self.clicks.push((step as u32, detector));
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn detectors(&self) -> &[u16] {
        &self.detectors
    }

    /// `(step, detector)` of every click, in time order.
    pub fn clicks(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.clicks.iter().map(|&(s, d)| (s as usize, d))
    }

    pub fn event_at(&self, step: usize) -> Option<u16> {
        self.clicks.binary_search_by_key(&(step as u32), |&(s, _)| s).ok().map(|i| self.clicks[i].1)
    }

    /// Per-step events, `None` for no click.
    pub fn events(&self) -> impl Iterator<Item = Option<u16>> + '_ {
        let mut next = 0;
        (0..self.n_steps).map(move |step| match self.clicks.get(next) {
            Some(&(s, d)) if s as usize == step => {
                next += 1;
                Some(d)
            }
            _ => None,
        })
    }

    pub fn total_count(&self) -> usize {
        self.clicks.len()
    }

    pub fn count_for(&self, detector: u16) -> usize {
        self.clicks.iter().filter(|&&(_, d)| d == detector).count()
    }

    /// Clicks in steps `0..steps`.
    pub fn count_before(&self, steps: usize) -> usize {
        self.clicks.partition_point(|&(s, _)| (s as usize) < steps)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), RecordError> {
        writeln!(w, "# dt={}", self.dt)?;
        writeln!(w, "# n_steps={}", self.n_steps)?;
        let ids: Vec<String> = self.detectors.iter().map(|d| d.to_string()).collect();
        writeln!(w, "# detectors={}", ids.join(","))?;
        writeln!(w, "step_index,detector_id")?;
        for (step, event) in self.events().enumerate() {
            match event {
                Some(d) => writeln!(w, "{step},{d}")?,
                None => writeln!(w, "{step},-1")?,
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, RecordError> {
        let mut dt = None;
        let mut n_steps = None;
        let mut detectors = None;
        let mut record: Option<DetectionRecord> = None;
        let mut expected_step = 0usize;
        let mut seen_header = false;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let bad = |reason: &str| RecordError::Malformed { line: lineno, reason: reason.to_string() };
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta.trim().split_once('=').ok_or_else(|| bad("expected key=value"))?;
                match key.trim() {
                    "dt" => dt = Some(value.trim().parse::<f64>().map_err(|_| bad("bad dt"))?),
                    "n_steps" => n_steps = Some(value.trim().parse::<usize>().map_err(|_| bad("bad n_steps"))?),
                    "detectors" => {
                        let ids: Result<Vec<u16>, _> = value
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.trim().parse::<u16>())
                            .collect();
                        detectors = Some(ids.map_err(|_| bad("bad detector list"))?);
                    }
                    _ => return Err(bad("unknown metadata key")),
                }
                continue;
            }
            if !seen_header {
                if line.trim() != "step_index,detector_id" {
                    return Err(bad("missing column header"));
                }
                seen_header = true;
                let (dt, n, det) = match (dt, n_steps, detectors.take()) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => return Err(bad("metadata must precede the header")),
                };
                record = Some(DetectionRecord::new(dt, n, det));
                continue;
            }
            let rec = record.as_mut().expect("set with header");
            let (step, det) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
            let step: usize = step.trim().parse().map_err(|_| bad("bad step index"))?;
            if step != expected_step {
                return Err(bad("step indices must be consecutive"));
            }
            expected_step += 1;
            let det: i32 = det.trim().parse().map_err(|_| bad("bad detector id"))?;
            match det {
                -1 => {}
                d if d >= 0 && d <= u16::MAX as i32 => rec.push(step, d as u16)?,
                _ => return Err(bad("detector id out of range")),
            }
        }
        let rec = record.ok_or(RecordError::Malformed { line: 0, reason: "empty record".into() })?;
        if expected_step != rec.n_steps {
            return Err(RecordError::Malformed { line: 0, reason: format!("expected {} rows", rec.n_steps) });
        }
        Ok(rec)
    }
}

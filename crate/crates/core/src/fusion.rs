//! Union fusion of the passive and active verdicts.
//!
//! A tick is reported as attacked when either detector flags it. The two
//! detectors run independently, so results for a tick may arrive in any
//! order; [`FusionBuffer`] holds each half until its partner shows up.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::passive::{decide, PassiveVerdict, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionVerdict {
    pub t: u64,
    /// Passive residual metric.
    pub r_n: f64,
    pub flag_n: bool,
    pub flag_gc: bool,
    pub flag_fused: bool,
}

impl FusionVerdict {
    pub fn new(t: u64, r_n: f64, flag_n: bool, flag_gc: bool) -> Self {
        Self {
            t,
            r_n,
            flag_n,
            flag_gc,
            flag_fused: flag_n || flag_gc,
        }
    }
}

/// Thresholds the residual and ORs in the classifier verdict.
pub fn combine(t: u64, r_n: f64, th: &Thresholds, r_gc: bool) -> FusionVerdict {
    FusionVerdict::new(t, r_n, decide(r_n, th), r_gc)
}

#[derive(Debug, Clone, Copy, Default)]
struct Pending {
    passive: Option<(f64, bool)>,
    active: Option<bool>,
}

/// Pairs passive and active results per tick regardless of arrival order.
#[derive(Debug, Clone, Default)]
pub struct FusionBuffer {
    pending: BTreeMap<u64, Pending>,
}

impl FusionBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    fn complete(&mut self, t: u64) -> Option<FusionVerdict> {
        match self.pending.get(&t) {
            Some(Pending {
                passive: Some((r, n)),
                active: Some(gc),
            }) => {
                let v = FusionVerdict::new(t, *r, *n, *gc);
                self.pending.remove(&t);
                Some(v)
            }
            _ => None,
        }
    }

    pub fn push_passive(&mut self, t: u64, r_n: f64, flag_n: bool) -> Option<FusionVerdict> {
        self.pending.entry(t).or_default().passive = Some((r_n, flag_n));
        self.complete(t)
    }

    pub fn push_active(&mut self, t: u64, flag_gc: bool) -> Option<FusionVerdict> {
        self.pending.entry(t).or_default().active = Some(flag_gc);
        self.complete(t)
    }

    /// Ticks still waiting for one of the two detectors.
    pub fn waiting(&self) -> impl Iterator<Item = u64> + '_ {
        self.pending.keys().copied()
    }
}

/// Fuses a passive verdict stream with active verdicts keyed by tick.
/// Ticks the classifier did not cover (before its first full window) count
/// as not flagged by it.
pub fn fuse_streams(passive: &[PassiveVerdict], active: &[(u64, bool)]) -> Vec<FusionVerdict> {
    let mut buf = FusionBuffer::new();
    let mut out = Vec::with_capacity(passive.len());
    for &(t, flag) in active {
        buf.push_active(t, flag);
    }
    let covered: std::collections::BTreeSet<u64> = active.iter().map(|a| a.0).collect();
    for v in passive {
        if !covered.contains(&v.t) {
            buf.push_active(v.t, false);
        }
        if let Some(f) = buf.push_passive(v.t, v.residual_r, v.flag) {
            out.push(f);
        }
    }
    out
}

/// Writes `t,r_N,flag_N,flag_GC,flag_fused`.
pub fn write_fused_csv<W: Write>(verdicts: &[FusionVerdict], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "r_N", "flag_N", "flag_GC", "flag_fused"])?;
    for v in verdicts {
        w.write_record(&[
            v.t.to_string(),
            v.r_n.to_string(),
            u8::from(v.flag_n).to_string(),
            u8::from(v.flag_gc).to_string(),
            u8::from(v.flag_fused).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

use serde::{Deserialize, Serialize};

use crate::field::FlowField;
use crate::loss::{LossParams, TermValues};

/// Loss values recorded at one solver iteration (before that iteration's
/// update). Skipped terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub total: f64,
    pub photometric: Option<f64>,
    pub smoothness: Option<f64>,
    pub consistency: Option<f64>,
}

impl IterRecord {
    pub fn new(iter: usize, total: f64, terms: TermValues) -> Self {
        Self {
            iter,
            total,
            photometric: terms.photometric,
            smoothness: terms.smoothness,
            consistency: terms.consistency,
        }
    }

    pub fn terms(&self) -> TermValues {
        TermValues {
            photometric: self.photometric,
            smoothness: self.smoothness,
            consistency: self.consistency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    /// Pyramid level, 0 = full resolution.
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub losses: Vec<IterRecord>,
    /// Mean forward displacement at the end of the level, in level pixels.
    pub mean_forward: (f64, f64),
}

impl LevelTrace {
    pub fn iters(&self) -> usize {
        self.losses.len()
    }

    /// Fraction of consecutive steps whose loss did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let steps = self.losses.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        let ok = self
            .losses
            .windows(2)
            .filter(|w| w[1].total <= w[0].total)
            .count();
        ok as f64 / steps as f64
    }
}

/// History of a coarse-to-fine solve plus the full-resolution result.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    /// Coarsest level first, in the order they were solved.
    pub levels: Vec<LevelTrace>,
    pub forward: FlowField,
    pub backward: FlowField,
    /// Multi-scale objective of the final flows, when requested.
    pub multiscale_loss: Option<f64>,
}

impl SolveTrace {
    pub fn record_count(&self) -> usize {
        self.levels.iter().map(LevelTrace::iters).sum()
    }

    pub fn final_record(&self) -> Option<&IterRecord> {
        self.levels.last().and_then(|l| l.losses.last())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTerms {
    pub total: f64,
    pub photometric: Option<f64>,
    pub smoothness: Option<f64>,
    pub consistency: Option<f64>,
    /// `lambda`-weighted recombination of the terms; matches `total`.
    pub recombined: f64,
}

/// JSON form of a [`SolveTrace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub levels: Vec<LevelReport>,
    pub final_flow: Option<String>,
    pub final_terms: Option<FinalTerms>,
    pub total_iters: usize,
    pub multiscale_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub iters: usize,
    pub losses: Vec<IterRecord>,
}

/// Summarizes a trace. `final_flow` is the path the forward flow was
/// written to, if any.
pub fn solve_trace_report(
    trace: &SolveTrace,
    params: &LossParams,
    final_flow: Option<&str>,
) -> TraceReport {
    let levels = trace
        .levels
        .iter()
        .map(|l| LevelReport {
            level: l.level,
            width: l.width,
            height: l.height,
            iters: l.iters(),
            losses: l.losses.clone(),
        })
        .collect();
    let final_terms = trace.final_record().map(|r| FinalTerms {
        total: r.total,
        photometric: r.photometric,
        smoothness: r.smoothness,
        consistency: r.consistency,
        recombined: r.terms().weighted_total(params),
    });
    TraceReport {
        levels,
        final_flow: final_flow.map(str::to_string),
        final_terms,
        total_iters: trace.record_count(),
        multiscale_loss: trace.multiscale_loss,
    }
}

impl TraceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace report serializes")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.levels {
            let first = l.losses.first().map(|r| r.total).unwrap_or(f64::NAN);
            let last = l.losses.last().map(|r| r.total).unwrap_or(f64::NAN);
            out.push_str(&format!(
                "level {} ({}x{}): {} iters, loss {:.6e} -> {:.6e}\n",
                l.level, l.width, l.height, l.iters, first, last
            ));
        }
        if let Some(t) = &self.final_terms {
            let fmt = |v: Option<f64>| v.map_or("skipped".to_string(), |v| format!("{v:.6e}"));
            out.push_str(&format!(
                "final: total {:.6e}, photometric {}, smoothness {}, consistency {}\n",
                t.total,
                fmt(t.photometric),
                fmt(t.smoothness),
                fmt(t.consistency)
            ));
        }
        out
    }
}

//! Per-iteration records of a PMD run and their CSV form.

use std::io::Write;

use crate::error::Result;
use crate::mdp::{Policy, ValueFunction};
use crate::scalar::Scalar;
use crate::schedule::StepSize;

pub const EXACT_COLUMNS: [&str; 6] = [
    "iter",
    "sup_gap",
    "eta",
    "bound_theorem1",
    "min_q_increase",
    "elapsed_ns",
];
pub const INEXACT_COLUMNS: [&str; 2] = ["tau_realized", "samples_cumulative"];

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iter: usize,
    /// `‖V⋆ − V^k‖_∞`
    pub sup_gap: T,
    /// Step used to produce `π^{k+1}`; `None` on the terminal record.
    pub eta: Option<StepSize<T>>,
    pub eta_saturated: bool,
    /// `min_{π̃ greedy} D_h(π̃, π^k_s)` for every state.
    pub min_greedy_div: Vec<T>,
    /// Greedy sets `A^k_s` (w.r.t. the Q used by the update).
    pub greedy_sets: Vec<Vec<usize>>,
    /// Upper bound certified for this iterate, when the schedule has one.
    pub bound: Option<T>,
    /// `min_{s,a} Q^k(s,a) − Q^{k−1}(s,a)`; `None` at `k = 0`.
    pub min_q_increase: Option<T>,
    /// `min_s V^k(s) − V^{k−1}(s)`; `None` at `k = 0`.
    pub min_v_increase: Option<T>,
    /// `‖Q̂^k − Q^k‖_∞` for inexact runs.
    pub tau_realized: Option<T>,
    /// Generative-model calls made up to and including this iteration's estimate.
    pub samples_cumulative: Option<u64>,
    /// Some entry of `π^{k+1}` was floored to stay in the relative interior.
    pub domain_guard: bool,
    pub elapsed_ns: u64,
}

impl<T: Scalar> IterationRecord<T> {
    pub(crate) fn new(iter: usize, sup_gap: T) -> Self {
        IterationRecord {
            iter,
            sup_gap,
            eta: None,
            eta_saturated: false,
            min_greedy_div: Vec::new(),
            greedy_sets: Vec::new(),
            bound: None,
            min_q_increase: None,
            min_v_increase: None,
            tau_realized: None,
            samples_cumulative: None,
            domain_guard: false,
            elapsed_ns: 0,
        }
    }

    /// Scalar summary of the step: the global step or the largest per-state step.
    pub fn eta_value(&self) -> Option<T> {
        self.eta.as_ref().map(StepSize::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T> {
    pub records: Vec<IterationRecord<T>>,
    pub final_policy: Policy<T>,
    pub final_value: ValueFunction<T>,
    pub optimal_value: ValueFunction<T>,
    /// `π^0, …, π^K` when requested by the run configuration.
    pub policies: Option<Vec<Policy<T>>>,
    pub inexact: bool,
}

impl<T: Scalar> IterationTrace<T> {
    pub fn gaps(&self) -> Vec<T> {
        self.records.iter().map(|r| r.sup_gap).collect()
    }

    pub fn gap0(&self) -> T {
        self.records[0].sup_gap
    }

    pub fn any_domain_guard(&self) -> bool {
        self.records.iter().any(|r| r.domain_guard)
    }

    pub fn csv_header(inexact: bool) -> Vec<&'static str> {
        let mut cols = EXACT_COLUMNS.to_vec();
        if inexact {
            cols.extend(INEXACT_COLUMNS);
        }
        cols
    }

    /// CSV rows (without header) for this trace.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.iter.to_string(),
                    fmt(Some(r.sup_gap)),
                    fmt(r.eta_value()),
                    fmt(r.bound),
                    fmt(r.min_q_increase),
                    r.elapsed_ns.to_string(),
                ];
                if self.inexact {
                    row.push(fmt(r.tau_realized));
                    row.push(
                        r.samples_cumulative
                            .map(|n| n.to_string())
                            .unwrap_or_default(),
                    );
                }
                row
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.inexact))?;
        for row in self.csv_rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory CSV write");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Shortest round-trip decimal; empty for missing values.
pub fn fmt<T: Scalar>(x: Option<T>) -> String {
    match x {
        Some(v) => format!("{:?}", v.as_f64()),
        None => String::new(),
    }
}

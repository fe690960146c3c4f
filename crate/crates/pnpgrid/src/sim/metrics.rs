//! Step-response metrics over a window of a trace.

use crate::error::invalid;
use crate::grid::DguId;

use super::SimTrace;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Time after the last event in the window from which `|V − ref|` stays inside the band.
    pub settling_time: f64,
    /// Largest excursion past the final reference, relative to the step size.
    ///
    /// Zero when the step is inside the settling band.
    pub overshoot: f64,
    /// Mean of `V − ref` over the last 10% of the window.
    pub steady_state_error: f64,
    /// Largest `|V − ref|` in the window.
    pub peak_deviation: f64,
}

/// Metrics of DGU `dgu` on `[t0, t1]` with settling band `band` (V).
pub fn metrics(
    trace: &SimTrace,
    dgu: DguId,
    t0: f64,
    t1: f64,
    band: f64,
) -> crate::Result<Metrics> {
    let k = trace
        .dgu_index(dgu)
        .ok_or_else(|| invalid(format!("DGU {dgu} not in trace")))?;
    let idx: Vec<usize> = (0..trace.time.len())
        .filter(|&n| trace.time[n] >= t0 && trace.time[n] <= t1)
        .collect();
    if idx.is_empty() {
        return Err(invalid("window contains no samples"));
    }
    let v = &trace.v_pcc[k];
    let r = &trace.reference[k];
    let t_ref = trace
        .events
        .iter()
        .map(|e| e.t)
        .filter(|&t| t >= t0 && t <= t1)
        .fold(t0, f64::max);
    let mut settle_from = t_ref;
    for &n in &idx {
        if trace.time[n] >= t_ref && (v[n] - r[n]).abs() >= band {
            settle_from = idx
                .iter()
                .map(|&m| trace.time[m])
                .find(|&t| t > trace.time[n])
                .unwrap_or(t1);
        }
    }
    let peak_deviation = idx.iter().map(|&n| (v[n] - r[n]).abs()).fold(0.0, f64::max);
    let tail_start = t1 - 0.1 * (t1 - t0);
    let tail: Vec<f64> = idx
        .iter()
        .filter(|&&n| trace.time[n] >= tail_start)
        .map(|&n| v[n] - r[n])
        .collect();
    let steady_state_error = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let first = idx[0];
    let last = *idx.last().expect("non-empty");
    let step = r[last] - v[first];
    let overshoot = if step.abs() > band {
        idx.iter()
            .map(|&n| (v[n] - r[last]) / step)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(Metrics {
        settling_time: settle_from - t_ref,
        overshoot,
        steady_state_error,
        peak_deviation,
    })
}

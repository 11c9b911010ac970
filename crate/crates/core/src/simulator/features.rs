use super::{Trajectory, CHANNELS, SEARCH_CHANNEL};
use crate::error::{Error, Result};

pub const TIME_BUCKETS: usize = 4;
pub const DEVICES: usize = 4;

/// Observed vectors at one request.
///
/// `x` is `log1p` of the past-window channel counts followed by the
/// time-of-day and device one-hots; `y` is `log1p` of the future-window
/// counts. The raw search counts of both windows are kept for analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorFeatures {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s_past: u32,
    pub s_future: u32,
}

impl BehaviorFeatures {
    /// The context part of `x`.
    pub fn context(&self) -> &[f64] {
        &self.x[CHANNELS.len()..]
    }
}

/// Features at step `t`: the past window covers steps `[t − w, t)`, the
/// future window `[t, t + w)`, both truncated at the trajectory edges.
pub fn behavior_features(trajectory: &Trajectory, t: usize, window: usize) -> Result<BehaviorFeatures> {
    let n = trajectory.len();
    if t >= n {
        return Err(Error::OutOfRange { what: "step", index: t, bound: n });
    }
    let sum = |range: std::ops::Range<usize>| {
        let mut totals = [0u32; CHANNELS.len()];
        for s in &trajectory.steps[range] {
            for (acc, c) in totals.iter_mut().zip(&s.counts) {
                *acc += c;
            }
        }
        totals
    };
    let past = sum(t.saturating_sub(window)..t);
    let future = sum(t..(t + window).min(n));

    let step = &trajectory.steps[t];
    let mut x = Vec::with_capacity(CHANNELS.len() + TIME_BUCKETS + DEVICES);
    x.extend(past.iter().map(|&c| (c as f64).ln_1p()));
    x.extend((0..TIME_BUCKETS).map(|b| f64::from(u8::from(b == step.time_bucket))));
    x.extend((0..DEVICES).map(|d| f64::from(u8::from(d == step.device))));
    let y = future.iter().map(|&c| (c as f64).ln_1p()).collect();

    Ok(BehaviorFeatures { x, y, s_past: past[SEARCH_CHANNEL], s_future: future[SEARCH_CHANNEL] })
}

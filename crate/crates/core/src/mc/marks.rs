use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::model::ScalarFunction;

use super::{stream, McError, Purpose};

/// Unit-rate Poisson marks `(u, z)` on `[0, horizon) x [0, z_max)`, sorted by `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceTimeMarks {
    pub horizon: f64,
    pub z_max: f64,
    pub marks: Vec<(f64, f64)>,
    pub seed: u64,
    pub stream: usize,
}

impl SpaceTimeMarks {
    pub fn generate(horizon: f64, z_max: f64, seed: u64, stream_id: usize) -> Result<SpaceTimeMarks, McError> {
        if !(horizon > 0.0 && horizon.is_finite() && z_max > 0.0 && z_max.is_finite()) {
            return Err(McError::Settings(format!(
                "marks need a positive finite rectangle, got {horizon} x {z_max}"
            )));
        }
        let mut rng = stream(seed, stream_id, Purpose::Marks);
        let mean = horizon * z_max;
        let count = Poisson::new(mean)
            .map_err(|e| McError::Settings(format!("mark count: {e}")))?
            .sample(&mut rng) as usize;
        let mut marks: Vec<(f64, f64)> = (0..count)
            .map(|_| (rng.gen::<f64>() * horizon, rng.gen::<f64>() * z_max))
            .collect();
        marks.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(SpaceTimeMarks {
            horizon,
            z_max,
            marks,
            seed,
            stream: stream_id,
        })
    }
}

/// Event times of the Poisson process with intensity `theta(X_t)` along a
/// stored path (`path[k]` at time `k dt`), read off shared marks.
///
/// The intensity is held at its left-point value over each step. Steps
/// where the rate is infinite contribute one event at the start of the
/// step.
pub fn thin_events(path: &[f64], dt: f64, theta: &ScalarFunction, marks: &SpaceTimeMarks) -> Result<Vec<f64>, McError> {
    let steps = path.len().saturating_sub(1);
    let mut rates = Vec::with_capacity(steps);
    for (k, &x) in path.iter().take(steps).enumerate() {
        let t = theta.eval(x)?;
        if t.is_finite() && t > marks.z_max {
            return Err(McError::IntensityCapExceeded {
                path: marks.stream,
                time: k as f64 * dt,
                rate: t,
                cap: marks.z_max,
            });
        }
        rates.push(t);
    }
    let mut events = Vec::new();
    let mut next = 0;
    for (k, &rate) in rates.iter().enumerate() {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        if rate.is_infinite() {
            events.push(t0);
        }
        while next < marks.marks.len() && marks.marks[next].0 < t1 {
            let (u, z) = marks.marks[next];
            if u >= t0 && rate.is_finite() && z < rate {
                events.push(u);
            }
            next += 1;
        }
    }
    Ok(events)
}

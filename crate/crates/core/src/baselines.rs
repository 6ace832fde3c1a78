//! Collocated displacement-acceleration fusion with a kinematic Kalman filter:
//! fixed-interval RTS smoothing (DF1) and short-term-memory smoothing (DF2).
//!
//! Both operate on the two signals alone; no structural model is involved.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::model::{MapTarget, Quantity, ReferenceFrame};
use crate::simulate::{ChannelSignal, InputRecord};
use crate::timeline::{merge_timelines, DEFAULT_TIME_TOLERANCE};

/// Default DF2 memory, in displacement sample intervals.
pub const DEFAULT_MEMORY_LENGTH: usize = 2;

#[derive(Clone, Debug)]
pub struct KinematicFusionProblem {
    pub acceleration: ChannelSignal,
    pub displacement: ChannelSignal,
    /// Variance of the acceleration error driving the kinematic model.
    pub acceleration_variance: f64,
    pub displacement_variance: f64,
}

impl KinematicFusionProblem {
    /// Uses the noise variances recorded on the signals.
    pub fn new(acceleration: ChannelSignal, displacement: ChannelSignal) -> Result<Self> {
        let p = Self {
            acceleration_variance: acceleration.noise_variance,
            displacement_variance: displacement.noise_variance,
            acceleration,
            displacement,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, d) = (&self.acceleration, &self.displacement);
        if a.is_empty() || d.is_empty() {
            return Err(Error::Empty("fusion channel".into()));
        }
        if a.channel.map.quantity != Quantity::Acceleration || d.channel.map.quantity != Quantity::Displacement {
            return Err(Error::MapMismatch(format!(
                "expected acceleration and displacement, got {} and {}",
                a.channel.map.quantity.as_str(),
                d.channel.map.quantity.as_str()
            )));
        }
        match (a.channel.map.target, d.channel.map.target) {
            (MapTarget::Dof(i), MapTarget::Dof(j)) if i == j => {}
            _ => {
                return Err(Error::MapMismatch(format!(
                    "channels `{}` and `{}` are not collocated",
                    a.channel.id, d.channel.id
                )))
            }
        }
        if a.channel.map.frame != d.channel.map.frame {
            return Err(Error::MapMismatch(format!(
                "channels `{}` and `{}` use different reference frames",
                a.channel.id, d.channel.id
            )));
        }
        if a.channel.rate < d.channel.rate {
            return Err(Error::invalid(
                "acceleration.rate",
                "must not be below the displacement rate",
            ));
        }
        if !(self.acceleration_variance >= 0.0) || !(self.displacement_variance > 0.0) {
            return Err(Error::invalid(
                "variances",
                "acceleration variance must be non-negative and displacement variance positive",
            ));
        }
        Ok(())
    }
}

/// Converts an absolute acceleration record to the relative frame by
/// subtracting the known ground acceleration.
pub fn to_relative_acceleration(signal: &ChannelSignal, ground: &InputRecord) -> ChannelSignal {
    let mut out = signal.clone();
    if out.channel.map.frame == ReferenceFrame::Absolute {
        for (v, &t) in out.values.iter_mut().zip(&out.timestamps) {
            *v -= ground.value_at(t);
        }
        out.channel.map.frame = ReferenceFrame::Relative;
    }
    out
}

/// High-rate displacement and velocity at the acceleration timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionEstimate {
    pub algorithm: &'static str,
    pub times: Vec<f64>,
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl FusionEstimate {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["algorithm", "time_s", "displacement", "velocity"])?;
        for ((t, d), v) in self.times.iter().zip(&self.displacement).zip(&self.velocity) {
            csv.write_record([
                self.algorithm.to_string(),
                format!("{t:.9}"),
                format!("{d:.9e}"),
                format!("{v:.9e}"),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Subtracts a base displacement record sampled at the estimate times.
pub fn subtract_base_displacement(estimate: &FusionEstimate, base: &InputRecord) -> FusionEstimate {
    let mut out = estimate.clone();
    for (d, &t) in out.displacement.iter_mut().zip(&out.times) {
        *d -= base.value_at(t);
    }
    out
}

/// Forward pass over every acceleration or displacement time.
struct ForwardPass {
    times: Vec<f64>,
    /// Node carries an acceleration sample (an output node).
    is_output: Vec<bool>,
    /// Node carries a displacement sample.
    is_arrival: Vec<bool>,
    filtered: Vec<(Vector2<f64>, Matrix2<f64>)>,
    /// Prediction into node `k` from `k - 1`; unused at node 0.
    predicted: Vec<(Vector2<f64>, Matrix2<f64>)>,
    transitions: Vec<Matrix2<f64>>,
}

fn forward(problem: &KinematicFusionProblem) -> Result<ForwardPass> {
    problem.validate()?;
    let acc = &problem.acceleration;
    let disp = &problem.displacement;
    let timeline = merge_timelines(&[acc.clone(), disp.clone()], DEFAULT_TIME_TOLERANCE)?;
    let n = timeline.len();
    let times: Vec<f64> = timeline.events.iter().map(|e| e.time).collect();
    let mut a = vec![f64::NAN; n];
    let mut y = vec![None; n];
    for (k, e) in timeline.events.iter().enumerate() {
        for (&c, &v) in e.channels.iter().zip(&e.values) {
            if c == 0 {
                a[k] = v;
            } else {
                y[k] = Some(v);
            }
        }
    }
    let is_output: Vec<bool> = a.iter().map(|v| !v.is_nan()).collect();
    fill_acceleration(&times, &mut a);

    let r = problem.displacement_variance;
    let q = problem.acceleration_variance;
    // Diffuse prior from the noise level only, so DF2 stays causal.
    let spread = 1e3 * r.sqrt();
    let mut x = Vector2::new(y[0].unwrap_or(0.0), 0.0);
    let disp0 = if y[0].is_some() { r } else { spread * spread };
    let mut p = Matrix2::new(disp0, 0.0, 0.0, (spread * disp.channel.rate).powi(2));
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let h = times[k] - times[k - 1];
            let f = Matrix2::new(1.0, h, 0.0, 1.0);
            let g = Vector2::new(h * h / 2.0, h);
            // trapezoidal acceleration between nodes
            let drive = Vector2::new(h * h * (2.0 * a[k - 1] + a[k]) / 6.0, h * (a[k - 1] + a[k]) / 2.0);
            x = f * x + drive;
            p = f * p * f.transpose() + g * g.transpose() * q;
            transitions.push(f);
        } else {
            transitions.push(Matrix2::identity());
        }
        predicted.push((x, p));
        if let Some(yk) = y[k] {
            let s = p[(0, 0)] + r;
            let gain = p.column(0) / s;
            x += gain * (yk - x[0]);
            p -= gain * p.row(0);
            p = (p + p.transpose()) * 0.5;
        }
        filtered.push((x, p));
    }
    Ok(ForwardPass {
        times,
        is_output,
        is_arrival: y.iter().map(Option::is_some).collect(),
        filtered,
        predicted,
        transitions,
    })
}

/// Linear interpolation of missing acceleration values; ends are held.
fn fill_acceleration(times: &[f64], a: &mut [f64]) {
    let known: Vec<usize> = (0..a.len()).filter(|&k| !a[k].is_nan()).collect();
    for k in 0..a.len() {
        if !a[k].is_nan() {
            continue;
        }
        let next = known.partition_point(|&i| i < k);
        a[k] = match (next.checked_sub(1).map(|i| known[i]), known.get(next)) {
            (Some(i), Some(&j)) => {
                let w = (times[k] - times[i]) / (times[j] - times[i]);
                a[i] * (1.0 - w) + a[j] * w
            }
            (Some(i), None) => a[i],
            (None, Some(&j)) => a[j],
            (None, None) => 0.0,
        };
    }
}

/// RTS backward recursion over nodes `start..=end`, starting from the
/// filtered estimate at `end`.
fn smooth_range(pass: &ForwardPass, start: usize, end: usize, out: &mut [(Vector2<f64>, Matrix2<f64>)]) {
    out[end] = pass.filtered[end];
    for k in (start..end).rev() {
        let (xf, pf) = pass.filtered[k];
        let (xp, pp) = pass.predicted[k + 1];
        let f = pass.transitions[k + 1];
        let c = match pp.try_inverse() {
            Some(inv) => pf * f.transpose() * inv,
            None => Matrix2::zeros(),
        };
        let (xs, ps) = out[k + 1];
        let p = pf + c * (ps - pp) * c.transpose();
        out[k] = (xf + c * (xs - xp), (p + p.transpose()) * 0.5);
    }
}

fn collect(pass: &ForwardPass, states: &[(Vector2<f64>, Matrix2<f64>)], algorithm: &'static str) -> FusionEstimate {
    let mut est = FusionEstimate {
        algorithm,
        times: Vec::new(),
        displacement: Vec::new(),
        velocity: Vec::new(),
    };
    for k in (0..pass.times.len()).filter(|&k| pass.is_output[k]) {
        est.times.push(pass.times[k]);
        est.displacement.push(states[k].0[0]);
        est.velocity.push(states[k].0[1]);
    }
    est
}

/// Kinematic KF with a fixed-interval RTS smoother over the full record.
pub fn df1_rts_fusion(problem: &KinematicFusionProblem) -> Result<FusionEstimate> {
    let pass = forward(problem)?;
    let mut states = pass.filtered.clone();
    smooth_range(&pass, 0, pass.times.len() - 1, &mut states);
    Ok(collect(&pass, &states, "df1"))
}

/// `[[var u, cov], [cov, var u̇]]` at one node.
pub type Covariance = Matrix2<f64>;

/// Filtered variances of DF1's forward pass and the smoothed variances, per
/// output node.
pub fn df1_variances(problem: &KinematicFusionProblem) -> Result<(Vec<Covariance>, Vec<Covariance>)> {
    let pass = forward(problem)?;
    let mut states = pass.filtered.clone();
    smooth_range(&pass, 0, pass.times.len() - 1, &mut states);
    let pick = |v: &[(Vector2<f64>, Matrix2<f64>)]| {
        (0..pass.times.len())
            .filter(|&k| pass.is_output[k])
            .map(|k| v[k].1)
            .collect::<Vec<_>>()
    };
    Ok((pick(&pass.filtered), pick(&states)))
}

/// Causal kinematic KF that, on each displacement arrival, re-smooths the
/// trailing `memory_length` displacement intervals and overwrites them.
pub fn df2_stm_fusion(problem: &KinematicFusionProblem, memory_length: usize) -> Result<FusionEstimate> {
    if memory_length == 0 {
        return Err(Error::invalid(
            "memory_length",
            "must be at least one displacement interval",
        ));
    }
    let pass = forward(problem)?;
    let mut states = pass.filtered.clone();
    let arrivals: Vec<usize> = (0..pass.times.len()).filter(|&k| pass.is_arrival[k]).collect();
    for (i, &end) in arrivals.iter().enumerate() {
        let start = i.checked_sub(memory_length).map_or(0, |j| arrivals[j]);
        smooth_range(&pass, start, end, &mut states);
    }
    Ok(collect(&pass, &states, "df2"))
}

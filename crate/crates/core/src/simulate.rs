//! Ground-truth response generation and sensor signal synthesis.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Discretization;
use crate::model::{evaluate_compiled, ParametricSystem, ResponseMap, StructuralModel};

/// Uniformly sampled scalar input (ground acceleration in m/s² or force in N).
#[derive(Clone, Debug, PartialEq)]
pub struct InputRecord {
    pub samples: Vec<f64>,
    /// Sampling frequency, Hz.
    pub rate: f64,
}

impl InputRecord {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::invalid("input.rate", "must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input.samples", "non-finite value"));
        }
        Ok(Self { samples, rate })
    }

    pub fn zeros(len: usize, rate: f64) -> Self {
        Self {
            samples: vec![0.0; len],
            rate,
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len().saturating_sub(1) as f64 / self.rate
    }

    /// Linear interpolation; zero outside the record.
    pub fn value_at(&self, t: f64) -> f64 {
        if self.samples.is_empty() || t < 0.0 {
            return 0.0;
        }
        let x = t * self.rate;
        let i = x.floor() as usize;
        let frac = x - i as f64;
        let at = |k: usize| self.samples.get(k).copied().unwrap_or(0.0);
        if frac <= 1e-12 {
            return at(i);
        }
        if frac >= 1.0 - 1e-12 {
            return at(i + 1);
        }
        at(i) * (1.0 - frac) + at(i + 1) * frac
    }

    /// Reads `time_s,value` rows, or a `dt=<seconds>` first line followed by
    /// one value per line. Blank lines and `#` comments are skipped.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut header_dt = None;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(dt) = line.strip_prefix("dt=") {
                header_dt =
                    Some(dt.trim().parse::<f64>().map_err(|e| {
                        Error::Config(format!("{}:{}: bad dt header: {e}", path.display(), lineno + 1))
                    })?);
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let Ok(nums) = parsed else {
                if times.is_empty() && values.is_empty() {
                    continue; // column header
                }
                return Err(Error::Config(format!("{}:{}: not numeric", path.display(), lineno + 1)));
            };
            match nums.as_slice() {
                [v] => values.push(*v),
                [t, v] => {
                    times.push(*t);
                    values.push(*v);
                }
                _ => {
                    return Err(Error::Config(format!(
                        "{}:{}: expected 1 or 2 columns",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        let rate = match (header_dt, times.len()) {
            (Some(dt), _) => 1.0 / dt,
            (None, n) if n >= 2 => {
                let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
                for w in times.windows(2) {
                    if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1e-12) {
                        return Err(Error::Config(format!(
                            "{}: input record is not uniformly sampled",
                            path.display()
                        )));
                    }
                }
                1.0 / dt
            }
            _ => return Err(Error::Config(format!("{}: cannot infer sampling rate", path.display()))),
        };
        Self::new(values, rate)
    }
}

/// Synthetic earthquake-like ground acceleration: white noise shaped by a
/// Kanai–Tajimi ground filter followed by a Clough–Penzien high-pass, under a
/// trapezoidal-exponential envelope, scaled to the requested peak.
pub fn synthetic_ground_motion(duration: f64, rate: f64, peak: f64, seed: u64) -> Result<InputRecord> {
    let n = (duration * rate).round() as usize + 1;
    let (wg, zg) = (15.6_f64, 0.6_f64);
    let (wf, zf) = (1.6_f64, 0.6_f64);
    // states: [xg, vg, xf, vf]; xg driven by white noise, xf by the ground filter output
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        -wg * wg, -2.0 * zg * wg, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        wg * wg, 2.0 * zg * wg, -wf * wf, -2.0 * zf * wf,
    ]);
    let b = DMatrix::from_row_slice(4, 1, &[0.0, -1.0, 0.0, 0.0]);
    let disc = Discretization::new(&a, &b, 1.0 / rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(4);
    let mut w0 = standard_normal(&mut rng);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / rate;
        // Clough–Penzien output: ω_f² x_f + 2ζ_f ω_f v_f
        let ag = wf * wf * x[2] + 2.0 * zf * wf * x[3];
        let env = if t < 2.0 {
            (t / 2.0).powi(2)
        } else if t < 10.0 {
            1.0
        } else {
            (-0.25 * (t - 10.0)).exp()
        };
        out.push(env * ag);
        let w1 = standard_normal(&mut rng);
        x = disc.apply(&x, &DVector::from_element(1, w0), &DVector::from_element(1, w1));
        w0 = w1;
    }
    let max = out.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        for v in &mut out {
            *v *= peak / max;
        }
    }
    InputRecord::new(out, rate)
}

/// Gaussian white noise of standard deviation `std`.
pub fn white_noise(duration: f64, rate: f64, std: f64, seed: u64) -> Result<InputRecord> {
    let n = (duration * rate).round() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|_| std * standard_normal(&mut rng)).collect::<Vec<f64>>();
    InputRecord::new(samples, rate)
}

/// Half-sine pulse starting at `onset` lasting `width` seconds.
pub fn half_sine_impact(duration: f64, rate: f64, onset: f64, width: f64, peak: f64) -> Result<InputRecord> {
    let n = (duration * rate).round() as usize + 1;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 / rate - onset;
            if (0.0..=width).contains(&t) {
                peak * (std::f64::consts::PI * t / width).sin()
            } else {
                0.0
            }
        })
        .collect();
    InputRecord::new(samples, rate)
}

/// Displacement, velocity and relative acceleration at every integration step.
#[derive(Clone, Debug)]
pub struct ResponseHistory {
    pub dt: f64,
    pub disp: Vec<DVector<f64>>,
    pub vel: Vec<DVector<f64>>,
    pub acc: Vec<DVector<f64>>,
    /// Input value at each step.
    pub input: Vec<f64>,
}

impl ResponseHistory {
    pub fn len(&self) -> usize {
        self.disp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disp.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// `[u; u̇]` at step `k`.
    pub fn state(&self, k: usize) -> DVector<f64> {
        let n = self.disp[k].len();
        let mut s = DVector::zeros(2 * n);
        s.rows_mut(0, n).copy_from(&self.disp[k]);
        s.rows_mut(n, n).copy_from(&self.vel[k]);
        s
    }

    /// Linearly interpolated `[u; u̇]` at time `t`.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let x = (t / self.dt).max(0.0);
        let i = (x.floor() as usize).min(self.len() - 1);
        let frac = x - i as f64;
        if i + 1 >= self.len() || frac <= 1e-9 {
            return self.state(i);
        }
        if frac >= 1.0 - 1e-9 {
            return self.state(i + 1);
        }
        self.state(i) * (1.0 - frac) + self.state(i + 1) * frac
    }

    /// Clean response of one map at every step.
    pub fn response(&self, model: &StructuralModel, map: &ResponseMap, params: &[f64]) -> Result<Vec<f64>> {
        let compiled = model.compile(map)?;
        let system = model.system();
        Ok((0..self.len())
            .map(|k| evaluate_compiled(system, &compiled, &self.state(k), params, self.input[k], &mut None))
            .collect())
    }
}

/// Newmark average-acceleration (γ = 1/2, β = 1/4) integration of
/// `M ü + C u̇ + K u = b·input(t)` with the input interpolated at step times.
pub fn simulate_true_response(
    system: &ParametricSystem,
    params: &[f64],
    input: &InputRecord,
    dt: f64,
    duration: f64,
) -> Result<ResponseHistory> {
    let n = system.n_dof();
    simulate_from(
        system,
        params,
        input,
        dt,
        duration,
        DVector::zeros(n),
        DVector::zeros(n),
    )
}

pub fn simulate_from(
    system: &ParametricSystem,
    params: &[f64],
    input: &InputRecord,
    dt: f64,
    duration: f64,
    disp0: DVector<f64>,
    vel0: DVector<f64>,
) -> Result<ResponseHistory> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let steps = (duration / dt).round() as usize;
    let stepper = NewmarkStepper::new(system, params, dt)?;
    let mut hist = ResponseHistory {
        dt,
        disp: Vec::with_capacity(steps + 1),
        vel: Vec::with_capacity(steps + 1),
        acc: Vec::with_capacity(steps + 1),
        input: Vec::with_capacity(steps + 1),
    };
    let f0 = input.value_at(0.0);
    let a0 = system.acceleration(params, &disp0, &vel0, f0);
    hist.disp.push(disp0);
    hist.vel.push(vel0);
    hist.acc.push(a0);
    hist.input.push(f0);
    for k in 1..=steps {
        let f1 = input.value_at(k as f64 * dt);
        let (u, v, a) = stepper.step(&hist.disp[k - 1], &hist.vel[k - 1], &hist.acc[k - 1], f1);
        hist.disp.push(u);
        hist.vel.push(v);
        hist.acc.push(a);
        hist.input.push(f1);
    }
    Ok(hist)
}

/// One Newmark average-acceleration step for a fixed parameter vector.
#[derive(Clone, Debug)]
pub(crate) struct NewmarkStepper {
    dt: f64,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    load: DVector<f64>,
    eff: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

const GAMMA: f64 = 0.5;
const BETA: f64 = 0.25;

impl NewmarkStepper {
    pub(crate) fn new(system: &ParametricSystem, params: &[f64], dt: f64) -> Result<Self> {
        let m = system.matrices(params)?;
        let eff = &m.stiffness + &m.damping * (GAMMA / (BETA * dt)) + &m.mass * (1.0 / (BETA * dt * dt));
        let lu = eff.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("Newmark effective stiffness".into()));
        }
        Ok(Self {
            dt,
            mass: m.mass,
            damping: m.damping,
            load: system.load().clone(),
            eff: lu,
        })
    }

    pub(crate) fn step(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        a: &DVector<f64>,
        input_next: f64,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let h = self.dt;
        let c0 = 1.0 / (BETA * h * h);
        let c1 = 1.0 / (BETA * h);
        let c2 = 1.0 / (2.0 * BETA) - 1.0;
        let c3 = GAMMA / (BETA * h);
        let c4 = GAMMA / BETA - 1.0;
        let c5 = h * (GAMMA / (2.0 * BETA) - 1.0);
        let rhs = &self.load * input_next
            + &self.mass * (u * c0 + v * c1 + a * c2)
            + &self.damping * (u * c3 + v * c4 + a * c5);
        let u1 = self.eff.solve(&rhs).expect("checked invertible");
        let a1 = (&u1 - u) * c0 - v * c1 - a * c2;
        let v1 = v + (a * (1.0 - GAMMA) + &a1 * GAMMA) * h;
        (u1, v1, a1)
    }
}

/// A physical sensor: what it measures, where, and how often.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub id: String,
    pub map: ResponseMap,
    /// Sampling frequency, Hz.
    pub rate: f64,
}

/// A sampled channel with the noise variance attributed to it.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSignal {
    pub channel: SensorChannel,
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub noise_variance: f64,
}

impl ChannelSignal {
    /// Samples at `k / rate`, `k = 0, 1, ...`.
    pub fn uniform(channel: SensorChannel, values: Vec<f64>) -> Self {
        let rate = channel.rate;
        let timestamps = (0..values.len()).map(|k| k as f64 / rate).collect();
        Self {
            channel,
            timestamps,
            values,
            noise_variance: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# id={},quantity={},frequency_hz={},noise_variance={:e}",
            self.channel.id,
            self.channel.map.quantity.as_str(),
            self.channel.rate,
            self.noise_variance
        )?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["time_s", &self.channel.id])?;
        for (t, v) in self.timestamps.iter().zip(&self.values) {
            csv.write_record([format!("{t:.9}"), format!("{v:e}")])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// RMS of a slice.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Adds zero-mean Gaussian noise with standard deviation `rms_ratio × RMS(signal)`.
/// The variance actually used is recorded on the returned signal.
pub fn add_noise(signal: &ChannelSignal, rms_ratio: f64, seed: u64) -> Result<ChannelSignal> {
    if !(rms_ratio >= 0.0) {
        return Err(Error::invalid("rms_ratio", "must be non-negative"));
    }
    let std = rms_ratio * rms(&signal.values);
    let mut out = signal.clone();
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut out.values {
            *v += std * standard_normal(&mut rng);
        }
    }
    out.noise_variance = std * std;
    Ok(out)
}

/// Resamples to `target` Hz: every `r`-th sample for an integer ratio `r`,
/// otherwise linear interpolation at `k / target`.
pub fn downsample(signal: &ChannelSignal, target: f64) -> Result<ChannelSignal> {
    let source = signal.channel.rate;
    if !(target > 0.0) {
        return Err(Error::invalid("target_frequency", "must be positive"));
    }
    if target > source * (1.0 + 1e-12) {
        return Err(Error::Upsampling {
            target,
            source_rate: source,
        });
    }
    let mut channel = signal.channel.clone();
    channel.rate = target;
    let ratio = source / target;
    let t0 = signal.timestamps.first().copied().unwrap_or(0.0);
    if (ratio - ratio.round()).abs() < 1e-9 {
        let r = ratio.round() as usize;
        let values: Vec<f64> = signal.values.iter().step_by(r).copied().collect();
        let timestamps = signal.timestamps.iter().step_by(r).copied().collect();
        return Ok(ChannelSignal {
            channel,
            timestamps,
            values,
            noise_variance: signal.noise_variance,
        });
    }
    let last = signal.timestamps.last().copied().unwrap_or(0.0);
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut k = 0usize;
    loop {
        let t = t0 + k as f64 / target;
        if t > last + 1e-12 {
            break;
        }
        let x = (t - t0) * source;
        let i = (x.floor() as usize).min(signal.len() - 1);
        let frac = x - i as f64;
        let v = if i + 1 < signal.len() && frac > 1e-12 {
            signal.values[i] * (1.0 - frac) + signal.values[i + 1] * frac
        } else {
            signal.values[i]
        };
        timestamps.push(t);
        values.push(v);
        k += 1;
    }
    Ok(ChannelSignal {
        channel,
        timestamps,
        values,
        noise_variance: signal.noise_variance,
    })
}

/// Squared sample standard deviation over `window` (sample indices).
pub fn estimate_noise_variance(values: &[f64], window: std::ops::Range<usize>) -> Result<f64> {
    if window.end > values.len() || window.start >= window.end {
        return Err(Error::WindowOutOfRange {
            start: window.start,
            end: window.end,
            len: values.len(),
        });
    }
    if window.len() < 10 {
        return Err(Error::invalid("pre_event_window", "needs at least 10 samples"));
    }
    let seg = &values[window];
    let n = seg.len() as f64;
    let mean = seg.iter().sum::<f64>() / n;
    Ok(seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Samples one map from a truth history at `rate` Hz.
pub fn sample_channel(
    history: &ResponseHistory,
    model: &StructuralModel,
    params: &[f64],
    channel: &SensorChannel,
) -> Result<ChannelSignal> {
    let full_rate = 1.0 / history.dt;
    let values = history.response(model, &channel.map, params)?;
    let mut full_channel = channel.clone();
    full_channel.rate = full_rate;
    let full = ChannelSignal::uniform(full_channel, values);
    downsample(&full, channel.rate)
}

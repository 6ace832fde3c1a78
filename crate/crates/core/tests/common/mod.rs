#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strucfuse::linalg::FactorOrder;
use strucfuse::model::{build_shear_frame, Excitation, ReferenceFrame, ResponseMap, StructuralModel};
use strucfuse::simulate::{
    add_noise, sample_channel, simulate_true_response, synthetic_ground_motion, white_noise, ChannelSignal,
    InputRecord, SensorChannel,
};
use strucfuse::timeline::{merge_timelines, MeasurementRegistry, MeasurementTimeline, DEFAULT_TIME_TOLERANCE};
use strucfuse::ukf::{BlockValues, Filter, FilterConfig, StepContext};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max |a − b| / max(max |b|, floor)`.
pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    let scale = b.amax().max(floor);
    (a - b).amax() / scale
}

pub fn rel_diff_vec(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    let scale = b.amax().max(floor);
    (a - b).amax() / scale
}

/// Scaling-and-squaring with a plain Taylor series.
pub fn taylor_expm(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let norm = w
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let a = w / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// A shear frame and its matrices assembled by hand.
pub struct LinearFrame {
    pub model: StructuralModel,
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub load_dof: usize,
}

impl LinearFrame {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let masses: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
        let ks: Vec<f64> = (0..n).map(|_| rng.random_range(1e3..2e4)).collect();
        let cs: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..50.0)).collect();
        let load_dof = rng.random_range(0..n);
        let frame = build_shear_frame(&masses, &ks, &cs, Excitation::NodalForce { dof: load_dof }).unwrap();
        let tri = |v: &[f64]| {
            let mut t = DMatrix::zeros(n, n);
            for i in 0..n {
                t[(i, i)] += v[i];
                if i + 1 < n {
                    t[(i, i)] += v[i + 1];
                    t[(i, i + 1)] -= v[i + 1];
                    t[(i + 1, i)] -= v[i + 1];
                }
            }
            t
        };
        Self {
            model: StructuralModel::ShearFrame(frame),
            m: DMatrix::from_diagonal(&DVector::from_vec(masses)),
            k: tri(&ks),
            c: tri(&cs),
            load_dof,
        }
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    /// `(A, b)` of `ẋ = A x + b f`.
    pub fn state_space(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let minv = self.m.clone().try_inverse().unwrap();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).fill_with_identity();
        a.view_mut((n, 0), (n, n)).copy_from(&(-&minv * &self.k));
        a.view_mut((n, n), (n, n)).copy_from(&(-&minv * &self.c));
        let mut b = DVector::zeros(2 * n);
        b[n + self.load_dof] = minv[(self.load_dof, self.load_dof)];
        (a, b)
    }

    /// `Φ`, and `Γ₀`, `Γ₁` weighting the input at the two ends of a linear ramp.
    pub fn discretize(&self, dt: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (a, b) = self.state_space();
        let s = a.nrows();
        let mut w = DMatrix::zeros(s + 2, s + 2);
        w.view_mut((0, 0), (s, s)).copy_from(&(&a * dt));
        w.view_mut((0, s), (s, 1)).copy_from(&(&b * dt));
        w[(s, s + 1)] = 1.0;
        let e = taylor_expm(&w);
        let phi = e.view((0, 0), (s, s)).into_owned();
        // ∫ Φ(τ) b dτ and ∫ Φ(τ) b (dt − τ)/dt dτ
        let g = e.view((0, s), (s, 1)).column(0).into_owned();
        let h = e.view((0, s + 1), (s, 1)).column(0).into_owned();
        (phi, &g - &h, h)
    }

    /// Measurement row over the structural state and the input gain.
    pub fn row(&self, map: &ResponseMap) -> (DVector<f64>, f64) {
        let n = self.n();
        let (a, b) = self.state_space();
        let strucfuse::model::MapTarget::Dof(d) = map.target else {
            panic!()
        };
        match map.quantity {
            strucfuse::model::Quantity::Displacement => (DVector::from_fn(2 * n, |i, _| f64::from(i == d)), 0.0),
            strucfuse::model::Quantity::Velocity => (DVector::from_fn(2 * n, |i, _| f64::from(i == n + d)), 0.0),
            strucfuse::model::Quantity::Acceleration => (a.row(n + d).transpose(), b[n + d]),
            _ => panic!("not a DOF quantity"),
        }
    }
}

/// Random multi-rate channels of a simulated response of a random frame.
pub struct LinearProblem {
    pub frame: LinearFrame,
    pub signals: Vec<ChannelSignal>,
    pub input: InputRecord,
}

const RATES: [f64; 7] = [500.0, 250.0, 200.0, 100.0, 60.0, 50.0, 30.0];

impl LinearProblem {
    pub fn random(seed: u64, duration: f64) -> Self {
        let mut r = rng(seed);
        let n = r.random_range(1..=3);
        let frame = LinearFrame::random(&mut r, n);
        let n_channels = r.random_range(1..=4);
        let input = white_noise(duration + 0.01, 1000.0, 10.0, seed).unwrap();
        let params = frame.model.system().nominal_parameters().clone();
        let history = simulate_true_response(frame.model.system(), params.as_slice(), &input, 1e-4, duration).unwrap();
        let mut signals = Vec::new();
        for c in 0..n_channels {
            let dof = r.random_range(0..n);
            let map = match r.random_range(0..3) {
                0 => ResponseMap::displacement(dof),
                1 => ResponseMap::velocity(dof),
                _ => ResponseMap::acceleration(dof, ReferenceFrame::Relative),
            };
            let rate = RATES[r.random_range(0..RATES.len())];
            let clean = sample_channel(
                &history,
                &frame.model,
                params.as_slice(),
                &SensorChannel {
                    id: format!("ch{c}"),
                    map,
                    rate,
                },
            )
            .unwrap();
            let s = add_noise(&clean, r.random_range(0.02..0.1), seed.wrapping_mul(31) + c as u64).unwrap();
            signals.push(s);
        }
        Self { frame, signals, input }
    }

    pub fn registry(&self) -> MeasurementRegistry {
        MeasurementRegistry::from_signals(&self.frame.model, &self.signals).unwrap()
    }

    pub fn timeline(&self) -> MeasurementTimeline {
        merge_timelines(&self.signals, DEFAULT_TIME_TOLERANCE).unwrap()
    }

    pub fn config(&self, estimate_input: bool) -> FilterConfig {
        let sys = self.frame.model.system();
        FilterConfig::with_blocks(
            sys,
            vec![],
            sys.nominal_parameters(),
            estimate_input,
            BlockValues {
                displacement: 1e-6,
                velocity: 1e-4,
                input: 4.0,
                parameters: vec![],
            },
            BlockValues {
                displacement: 1e-10,
                velocity: 1e-8,
                input: 1.0,
                parameters: vec![],
            },
        )
        .unwrap()
    }
}

/// Textbook Kalman filter on the same event stream: propagate between
/// events with the exact discretization, then update with the active rows.
/// An estimated input is a random walk held over each step whose increment
/// is added before propagation.
pub fn kalman_oracle(
    problem: &LinearProblem,
    config: &FilterConfig,
    known_input: Option<&InputRecord>,
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let frame = &problem.frame;
    let timeline = problem.timeline();
    let s = 2 * frame.n();
    let with_input = config.layout.estimates_input();
    let dim = s + usize::from(with_input);
    let mut x = config.initial_mean.clone();
    let mut p = config.initial_covariance.clone();
    let q = &config.process_noise;
    let mut t = config.initial_time;
    let mut out = Vec::new();
    for ev in &timeline.events {
        if ev.time > t {
            let (phi, g0, g1) = frame.discretize(ev.time - t);
            let mut f = DMatrix::zeros(dim, dim);
            f.view_mut((0, 0), (s, s)).copy_from(&phi);
            if with_input {
                f.view_mut((0, s), (s, 1)).copy_from(&(&g0 + &g1));
                f[(s, s)] = 1.0;
                p[(s, s)] += q[s];
                x = &f * &x;
            } else {
                let u0 = known_input.map_or(0.0, |r| r.value_at(t));
                let u1 = known_input.map_or(0.0, |r| r.value_at(ev.time));
                x = &f * &x + &g0 * u0 + &g1 * u1;
            }
            p = &f * &p * f.transpose();
            for i in 0..s {
                p[(i, i)] += q[i];
            }
            t = ev.time;
        }
        let m = ev.channels.len();
        let mut h = DMatrix::zeros(m, dim);
        let mut offset = DVector::zeros(m);
        let mut r = DMatrix::zeros(m, m);
        for (k, &c) in ev.channels.iter().enumerate() {
            let sig = problem
                .signals
                .iter()
                .find(|sg| sg.channel.id == timeline.channel_ids[c])
                .unwrap();
            let (row, gain) = frame.row(&sig.channel.map);
            h.view_mut((k, 0), (1, s)).copy_from(&row.transpose());
            if with_input {
                h[(k, s)] = gain;
            } else {
                offset[k] = gain * known_input.map_or(0.0, |rec| rec.value_at(ev.time));
            }
            r[(k, k)] = sig.noise_variance;
        }
        let y = DVector::from_column_slice(&ev.values);
        let sm = &h * &p * h.transpose() + r;
        let k = sm.clone().lu().solve(&(&h * &p)).unwrap().transpose();
        x = &x + &k * (y - &h * &x - offset);
        p = &p - &k * sm * k.transpose();
        p = (&p + p.transpose()) * 0.5;
        out.push((x.clone(), p.clone()));
    }
    out
}

/// Events keyed by exact rational time `k / rate` for integer rates.
pub fn rational_events(signals: &[ChannelSignal]) -> Vec<(f64, Vec<(String, f64)>)> {
    let mut by_time: BTreeMap<(u64, u64), Vec<(String, f64)>> = BTreeMap::new();
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    for s in signals {
        let rate = s.channel.rate as u64;
        assert_eq!(rate as f64, s.channel.rate);
        for (k, v) in s.values.iter().enumerate() {
            let g = gcd(k as u64, rate).max(1);
            let key = ((k as u64) / g, rate / g);
            by_time.entry(key).or_default().push((s.channel.id.clone(), *v));
        }
    }
    let mut events: Vec<_> = by_time
        .into_iter()
        .map(|((num, den), mut chans)| {
            chans.sort_by(|a, b| a.0.cmp(&b.0));
            (num as f64 / den as f64, chans)
        })
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    events
}

/// Smallest eigenvalue of a symmetric matrix relative to its largest diagonal.
pub fn relative_min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let d = DVector::from_fn(p.nrows(), |i, _| p[(i, i)].max(f64::MIN_POSITIVE).sqrt().recip());
    let scaled = DMatrix::from_diagonal(&d) * p * DMatrix::from_diagonal(&d);
    scaled.symmetric_eigenvalues().min()
}

/// Two-story frame with all four parameters estimated and three channels.
pub struct NonlinearFrame {
    pub model: StructuralModel,
    pub signals: Vec<ChannelSignal>,
    pub registry: MeasurementRegistry,
    pub timeline: MeasurementTimeline,
    pub config: FilterConfig,
    pub input: InputRecord,
}

pub fn nonlinear_frame(seed: u64) -> NonlinearFrame {
    let frame = build_shear_frame(&[10.0, 10.0], &[1e4, 1e4], &[32.0, 32.0], Excitation::GroundMotion).unwrap();
    let model = StructuralModel::ShearFrame(frame);
    let sys = model.system();
    let truth = sys.nominal_parameters().clone();
    let input = synthetic_ground_motion(0.6, 1000.0, 3.0, seed).unwrap();
    let hist = simulate_true_response(sys, truth.as_slice(), &input, 1e-4, 0.5).unwrap();
    let channels = [
        ("a1", ResponseMap::acceleration(0, ReferenceFrame::Absolute), 500.0),
        ("d1", ResponseMap::displacement(0), 50.0),
        ("a2", ResponseMap::acceleration(1, ReferenceFrame::Absolute), 200.0),
    ];
    let signals: Vec<ChannelSignal> = channels
        .iter()
        .enumerate()
        .map(|(i, (id, map, rate))| {
            let clean = sample_channel(
                &hist,
                &model,
                truth.as_slice(),
                &SensorChannel {
                    id: id.to_string(),
                    map: *map,
                    rate: *rate,
                },
            )
            .unwrap();
            add_noise(&clean, 0.1, seed * 7 + i as u64).unwrap()
        })
        .collect();
    let registry = MeasurementRegistry::from_signals(&model, &signals).unwrap();
    let timeline = merge_timelines(&signals, 1e-9).unwrap();
    let guess = &truth * 1.2;
    let config = FilterConfig::with_blocks(
        sys,
        vec![0, 1, 2, 3],
        &guess,
        false,
        BlockValues {
            displacement: 1e-8,
            velocity: 1e-6,
            input: 0.0,
            parameters: guess.iter().map(|g| (0.2 * g).powi(2)).collect(),
        },
        BlockValues {
            displacement: 1e-14,
            velocity: 1e-12,
            input: 0.0,
            parameters: guess.iter().map(|g| (1e-8 * g).powi(2)).collect(),
        },
    )
    .unwrap();
    NonlinearFrame {
        model,
        signals,
        registry,
        timeline,
        config,
        input,
    }
}

pub struct BoundedFrame {
    pub model: StructuralModel,
    pub timeline: MeasurementTimeline,
    pub registry: MeasurementRegistry,
    pub input: InputRecord,
    pub config: FilterConfig,
}

/// Two-storey frame whose upper storey has no damping, so the damping
/// estimate is pushed against zero.
pub fn undamped_upper_storey(seed: u64) -> BoundedFrame {
    let frame = build_shear_frame(&[10.0, 10.0], &[1e4, 1e4], &[32.0, 0.0], Excitation::GroundMotion).unwrap();
    let model = StructuralModel::ShearFrame(frame);
    let sys = model.system();
    let truth = sys.nominal_parameters().clone();
    let input = synthetic_ground_motion(3.1, 1000.0, 3.42, seed).unwrap();
    let hist = simulate_true_response(sys, truth.as_slice(), &input, 1e-4, 3.0).unwrap();
    let channels = [
        ("acc1", ResponseMap::acceleration(0, ReferenceFrame::Absolute), 500.0),
        ("acc2", ResponseMap::acceleration(1, ReferenceFrame::Absolute), 500.0),
        ("disp1", ResponseMap::displacement(0), 50.0),
    ];
    let signals: Vec<_> = channels
        .iter()
        .enumerate()
        .map(|(i, (id, map, rate))| {
            let ch = SensorChannel {
                id: id.to_string(),
                map: *map,
                rate: *rate,
            };
            add_noise(
                &sample_channel(&hist, &model, truth.as_slice(), &ch).unwrap(),
                0.1,
                seed * 13 + i as u64,
            )
            .unwrap()
        })
        .collect();
    let guess = DVector::from_vec(vec![1.2e4, 1.2e4, 38.0, 0.5]);
    let config = FilterConfig::with_blocks(
        sys,
        vec![0, 1, 2, 3],
        &guess,
        false,
        BlockValues {
            displacement: 1e-8,
            velocity: 1e-6,
            input: 0.0,
            parameters: vec![
                (0.2f64 * 1.2e4).powi(2),
                (0.2f64 * 1.2e4).powi(2),
                7.6f64.powi(2),
                5.0f64.powi(2),
            ],
        },
        BlockValues {
            displacement: 1e-14,
            velocity: 1e-12,
            input: 0.0,
            parameters: vec![(1e-8f64 * 1.2e4).powi(2), (1e-8f64 * 1.2e4).powi(2), 1e-14, 1e-14],
        },
    )
    .unwrap();
    BoundedFrame {
        registry: MeasurementRegistry::from_signals(&model, &signals).unwrap(),
        timeline: merge_timelines(&signals, 1e-9).unwrap(),
        model,
        input,
        config,
    }
}

/// Worst relative deviation of the UKF mean and covariance from the Kalman
/// filter over every event of a random linear problem.
pub fn compare_with_oracle(seed: u64, estimate_input: bool, factor: FactorOrder) -> (f64, f64) {
    let problem = LinearProblem::random(seed, 0.2);
    let mut config = problem.config(estimate_input);
    config.factor = factor;
    let known = (!estimate_input).then_some(&problem.input);
    let sys = problem.frame.model.system();
    let timeline = problem.timeline();
    let registry = problem.registry();
    let oracle = kalman_oracle(&problem, &config, known);
    let mut filter = Filter::new(StepContext {
        system: sys,
        config: &config,
        known_input: known,
    })
    .unwrap();
    let (mut worst_mean, mut worst_cov) = (0.0f64, 0.0f64);
    for (event, (x, p)) in timeline.events.iter().zip(&oracle) {
        filter.step(&timeline, event, &registry).unwrap();
        let s = filter.state();
        worst_mean = worst_mean.max(rel_diff_vec(&s.mean, x, 1e-300));
        worst_cov = worst_cov.max(rel_diff(&s.covariance, p, 1e-300));
    }
    (worst_mean, worst_cov)
}

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::cgukf::{constrain_gain, ConstrainedGain};
use super::sigma::{deviations, weighted_mean, weighted_outer, SigmaPointSet};
use super::trace::EstimateTrace;
use super::{Algorithm, AugmentedState, FilterConfig, Integrator};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Discretization};
use crate::model::{CompiledMap, ParametricSystem};
use crate::simulate::{InputRecord, NewmarkStepper};
use crate::timeline::{active_measurement_model, MeasurementEvent, MeasurementRegistry, MeasurementTimeline};

/// Read-only inputs shared by every step of a run.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub system: &'a ParametricSystem,
    pub config: &'a FilterConfig,
    /// Used when the layout does not estimate the input; zero when absent.
    pub known_input: Option<&'a InputRecord>,
}

impl StepContext<'_> {
    fn known(&self, t: f64) -> f64 {
        self.known_input.map_or(0.0, |r| r.value_at(t))
    }
}

/// Diagnostics of one measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub time: f64,
    /// Registry rows, in registration order.
    pub rows: Vec<usize>,
    pub innovation: DVector<f64>,
    /// Diagonal of the innovation covariance.
    pub variances: DVector<f64>,
    /// Entries of the posterior mean held at a bound.
    pub active_bounds: Vec<usize>,
}

/// Key for models that share a parameter vector bit for bit.
fn parameter_key(params: &DVector<f64>) -> Vec<u64> {
    params.iter().map(|p| p.to_bits()).collect()
}

enum Propagator {
    Exact(Discretization),
    Newmark {
        stepper: NewmarkStepper,
        params: Vec<f64>,
        substeps: usize,
    },
}

impl Propagator {
    fn new(ctx: &StepContext, params: &DVector<f64>, dt: f64) -> Result<Self> {
        Ok(match ctx.config.integrator {
            Integrator::Exact => {
                let (a, b) = ctx.system.state_space(params.as_slice())?;
                Self::Exact(Discretization::new(&a, &b, dt))
            }
            Integrator::Newmark { substeps } => Self::Newmark {
                stepper: NewmarkStepper::new(ctx.system, params.as_slice(), dt / substeps as f64)?,
                params: params.as_slice().to_vec(),
                substeps,
            },
        })
    }

    fn apply(&self, system: &ParametricSystem, x: &DVector<f64>, f0: f64, f1: f64) -> DVector<f64> {
        match self {
            Self::Exact(d) => d.apply(x, &DVector::from_element(1, f0), &DVector::from_element(1, f1)),
            Self::Newmark {
                stepper,
                params,
                substeps,
            } => {
                let n = system.n_dof();
                let mut u = x.rows(0, n).into_owned();
                let mut v = x.rows(n, n).into_owned();
                let mut a = system.acceleration(params, &u, &v, f0);
                for s in 1..=*substeps {
                    let f = f0 + (f1 - f0) * s as f64 / *substeps as f64;
                    (u, v, a) = stepper.step(&u, &v, &a, f);
                }
                let mut out = DVector::zeros(2 * n);
                out.rows_mut(0, n).copy_from(&u);
                out.rows_mut(n, n).copy_from(&v);
                out
            }
        }
    }
}

/// Propagates the augmented estimate from `t0` to `t1`.
///
/// Each sigma point's structural block is integrated with the model built
/// from that point's parameters; parameters and any estimated input are held.
pub fn time_update(ctx: &StepContext, prior: &AugmentedState, t0: f64, t1: f64) -> Result<AugmentedState> {
    let dt = t1 - t0;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", format!("{dt} is not positive")));
    }
    let cfg = ctx.config;
    let layout = prior.layout;
    // The input random walk steps before propagation so the held value over
    // (t0, t1] is the one observed at t1.
    let mut start = prior.covariance.clone();
    for i in layout.input() {
        start[(i, i)] += cfg.process_noise[i];
    }
    let sigma = SigmaPointSet::generate(&prior.mean, &start, &cfg.sigma, cfg.factor)?;
    let (f0_known, f1_known) = (ctx.known(t0), ctx.known(t1));
    let mut cache: HashMap<Vec<u64>, Propagator> = HashMap::new();
    let mut points = sigma.points.clone();
    for i in 0..sigma.len() {
        let col = sigma.points.column(i);
        let params = cfg.system_parameters(&col.into_owned());
        let (f0, f1) = if layout.estimates_input() {
            let w = col[layout.input().start];
            (w, w)
        } else {
            (f0_known, f1_known)
        };
        let key = parameter_key(&params);
        if !cache.contains_key(&key) {
            cache.insert(key.clone(), Propagator::new(ctx, &params, dt)?);
        }
        let x = col.rows_range(layout.structural()).into_owned();
        let next = cache[&key].apply(ctx.system, &x, f0, f1);
        points
            .column_mut(i)
            .rows_range_mut(layout.structural())
            .copy_from(&next);
    }
    let mean = weighted_mean(&points, &sigma.mean_weights);
    let d = deviations(&points, &mean);
    let mut covariance = weighted_outer(&d, &d, &sigma.covariance_weights);
    for (i, q) in cfg.process_noise.iter().enumerate() {
        if !layout.input().contains(&i) {
            covariance[(i, i)] += q;
        }
    }
    symmetrize(&mut covariance);
    Ok(AugmentedState {
        mean,
        covariance,
        layout,
    })
}

/// Assimilates one event using only the channels active in it.
pub fn measurement_update(
    ctx: &StepContext,
    predicted: &AugmentedState,
    timeline: &MeasurementTimeline,
    event: &MeasurementEvent,
    registry: &MeasurementRegistry,
) -> Result<(AugmentedState, Innovation)> {
    let cfg = ctx.config;
    let layout = predicted.layout;
    let active = active_measurement_model(timeline, event, registry)?;
    let m = active.len();
    let sigma = SigmaPointSet::generate(&predicted.mean, &predicted.covariance, &cfg.sigma, cfg.factor)?;
    let n = layout.n_dof;
    let needs_accel = active.rows.iter().any(|&r| registry.compiled(r).is_acceleration());
    let f_known = ctx.known(event.time);

    let mut operators: HashMap<Vec<u64>, (DMatrix<f64>, DVector<f64>)> = HashMap::new();
    let mut ys = DMatrix::zeros(m, sigma.len());
    for i in 0..sigma.len() {
        let col = sigma.points.column(i);
        let x = col.rows_range(layout.structural()).into_owned();
        let f = if layout.estimates_input() {
            col[layout.input().start]
        } else {
            f_known
        };
        let accel = if needs_accel {
            let params = cfg.system_parameters(&col.into_owned());
            let key = parameter_key(&params);
            if !operators.contains_key(&key) {
                let (a, b) = ctx.system.state_space(params.as_slice())?;
                let rows = a.rows(n, n).into_owned();
                let load = b.view((n, 0), (n, 1)).column(0).into_owned();
                operators.insert(key.clone(), (rows, load));
            }
            let (rows, load) = &operators[&key];
            Some(rows * &x + load * f)
        } else {
            None
        };
        for (k, &r) in active.rows.iter().enumerate() {
            ys[(k, i)] = match registry.compiled(r) {
                CompiledMap::Linear(row) => row.dot(&x),
                CompiledMap::Acceleration { dof, ground_gain } => {
                    accel.as_ref().expect("computed when needed")[*dof] + ground_gain * f
                }
            };
        }
    }

    let y_mean = weighted_mean(&ys, &sigma.mean_weights);
    let dy = deviations(&ys, &y_mean);
    let dx = deviations(&sigma.points, &sigma.mean());
    let mut s = weighted_outer(&dy, &dy, &sigma.covariance_weights);
    for k in 0..m {
        s[(k, k)] += active.variances[k];
    }
    symmetrize(&mut s);
    let pxy = weighted_outer(&dx, &dy, &sigma.covariance_weights);
    let innovation = &active.values - &y_mean;

    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    let gain = chol.solve(&pxy.transpose()).transpose();
    let constraints = match cfg.algorithm {
        Algorithm::Ukf => &[][..],
        Algorithm::Cgukf => &cfg.constraints[..],
    };
    let ConstrainedGain { gain, active: bound } = constrain_gain(
        gain,
        &chol.solve(&innovation),
        &predicted.mean,
        &innovation,
        constraints,
    )?;

    let mut mean = &predicted.mean + &gain * &innovation;
    let ks = &gain * &s;
    let mut covariance = if bound.is_empty() {
        &predicted.covariance - &ks * gain.transpose()
    } else {
        for &(j, value) in &bound {
            mean[j] = value;
        }
        let kp = &gain * pxy.transpose();
        &predicted.covariance - &kp - kp.transpose() + &ks * gain.transpose()
    };
    symmetrize(&mut covariance);
    let record = Innovation {
        time: event.time,
        rows: active.rows,
        innovation,
        variances: s.diagonal(),
        active_bounds: bound.iter().map(|b| b.0).collect(),
    };
    Ok((
        AugmentedState {
            mean,
            covariance,
            layout,
        },
        record,
    ))
}

/// A running filter: the current estimate and the time it refers to.
pub struct Filter<'a> {
    ctx: StepContext<'a>,
    state: AugmentedState,
    time: f64,
}

impl<'a> Filter<'a> {
    pub fn new(ctx: StepContext<'a>) -> Result<Self> {
        ctx.config.validate(ctx.system)?;
        if ctx.config.layout.estimates_input() && ctx.known_input.is_some() {
            return Err(Error::Config(
                "a known input record was supplied while the input is being estimated".into(),
            ));
        }
        Ok(Self {
            state: ctx.config.initial_state()?,
            time: ctx.config.initial_time,
            ctx,
        })
    }

    pub fn state(&self) -> &AugmentedState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Time update to the event (skipped for coincident times), then the
    /// measurement update.
    pub fn step(
        &mut self,
        timeline: &MeasurementTimeline,
        event: &MeasurementEvent,
        registry: &MeasurementRegistry,
    ) -> Result<Innovation> {
        if event.time < self.time {
            return Err(Error::invalid(
                "event.time",
                format!("{} precedes the current estimate at {}", event.time, self.time),
            ));
        }
        let predicted = if event.time > self.time {
            time_update(&self.ctx, &self.state, self.time, event.time)?
        } else {
            self.state.clone()
        };
        let (posterior, innovation) = measurement_update(&self.ctx, &predicted, timeline, event, registry)?;
        if posterior.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("posterior mean is not finite".into()));
        }
        self.state = posterior;
        self.time = event.time;
        Ok(innovation)
    }
}

/// Filters every event of `timeline` in order.
pub fn run_filter(
    system: &ParametricSystem,
    timeline: &MeasurementTimeline,
    registry: &MeasurementRegistry,
    config: &FilterConfig,
    known_input: Option<&InputRecord>,
) -> Result<EstimateTrace> {
    if timeline.is_empty() {
        return Err(Error::Empty("measurement timeline".into()));
    }
    let mut filter = Filter::new(StepContext {
        system,
        config,
        known_input,
    })?;
    let mut trace = EstimateTrace::with_capacity(config, system, timeline.len());
    for (k, event) in timeline.events.iter().enumerate() {
        let innovation = filter
            .step(timeline, event, registry)
            .map_err(|e| e.at_event(k, event.time))?;
        trace.push(filter.state(), innovation);
    }
    Ok(trace)
}

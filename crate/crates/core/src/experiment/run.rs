use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{ChannelSpec, ExcitationSpec, ExperimentConfig, InputSpec, ModelSpec, VarianceSource};
use super::metrics::{estimate_strains_from_states, median, parameter_ratio_table, rms_error_percent};
use crate::baselines::{
    df1_rts_fusion, df2_stm_fusion, to_relative_acceleration, FusionEstimate, KinematicFusionProblem,
};
use crate::error::{Error, Result};
use crate::model::{
    build_beam, build_shear_frame, build_truss, evaluate_response_map, Excitation, MapTarget, ParametricSystem,
    Quantity, ReferenceFrame, ResponseMap, StructuralModel, TrussGeometry,
};
use crate::simulate::{
    add_noise, estimate_noise_variance, half_sine_impact, sample_channel, simulate_true_response,
    synthetic_ground_motion, white_noise, InputRecord, ResponseHistory, SensorChannel,
};
use crate::timeline::{merge_timelines, MeasurementRegistry, DEFAULT_TIME_TOLERANCE};
use crate::ukf::{run_filter, Algorithm, BlockValues, EstimateTrace, FilterConfig};

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub threads: Option<usize>,
}

/// Metrics of one seed, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: Vec<(String, f64)>,
    pub events: usize,
    pub wall_clock_s: f64,
}

impl SeedReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|m| m.1)
    }

    /// Metrics whose name starts with `prefix`.
    pub fn group(&self, prefix: &str) -> Vec<(&str, f64)> {
        self.metrics
            .iter()
            .filter_map(|(n, v)| n.strip_prefix(prefix).map(|s| (s, *v)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub name: String,
    pub seeds: Vec<SeedReport>,
    /// Where files were written.
    pub directory: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn metric_names(&self) -> Vec<&str> {
        self.seeds
            .first()
            .map(|s| s.metrics.iter().map(|m| m.0.as_str()).collect())
            .unwrap_or_default()
    }

    /// Median over seeds.
    pub fn median(&self, name: &str) -> f64 {
        let v: Vec<f64> = self.seeds.iter().filter_map(|s| s.get(name)).collect();
        median(&v)
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["metric".to_string(), "median".to_string()];
        header.extend(self.seeds.iter().map(|s| format!("seed_{}", s.seed)));
        csv.write_record(&header)?;
        for name in self.metric_names() {
            let mut row = vec![name.to_string(), fmt(self.median(name))];
            row.extend(self.seeds.iter().map(|s| s.get(name).map_or(String::new(), fmt)));
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_summary_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "experiment: {}", self.name)?;
        for s in &self.seeds {
            writeln!(w, "seed {}: {} events, {:.2} s", s.seed, s.events, s.wall_clock_s)?;
        }
        writeln!(w)?;
        writeln!(w, "{:<40} {:>14}", "metric", "median")?;
        for name in self.metric_names() {
            writeln!(w, "{:<40} {:>14.6}", name, self.median(name))?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.9e}")
}

/// Builds the structure described by the config.
pub fn build_model(cfg: &ExperimentConfig) -> Result<StructuralModel> {
    let excitation = resolve_excitation(cfg)?;
    Ok(match &cfg.model {
        ModelSpec::ShearFrame {
            masses,
            stiffnesses,
            dampings,
        } => StructuralModel::ShearFrame(build_shear_frame(masses, stiffnesses, dampings, excitation)?),
        ModelSpec::Truss {
            elastic_modulus,
            density,
            areas,
            bay_width,
            height,
            lumped_masses,
            damping_ratio,
            damping_modes,
        } => {
            let geometry = TrussGeometry::pratt(4, *bay_width, *height, *areas)?;
            StructuralModel::Truss(build_truss(
                &geometry,
                *elastic_modulus,
                *density,
                lumped_masses,
                *damping_ratio,
                *damping_modes,
                excitation,
            )?)
        }
        ModelSpec::Beam(spec) => StructuralModel::Beam(build_beam(spec, excitation)?),
    })
}

fn beam_translation(cfg: &ExperimentConfig, node: usize, what: &str) -> Result<usize> {
    let ModelSpec::Beam(spec) = &cfg.model else {
        return Err(Error::Config(format!("{what}: node targets apply to beams only")));
    };
    let probe = build_beam(spec, Excitation::GroundMotion)?;
    probe
        .translation_dof(node)
        .ok_or_else(|| Error::Config(format!("{what}: node {node} has no free translation")))
}

fn resolve_excitation(cfg: &ExperimentConfig) -> Result<Excitation> {
    match cfg.excitation {
        ExcitationSpec::GroundMotion => Ok(Excitation::GroundMotion),
        ExcitationSpec::NodalForce {
            dof: Some(d),
            node: None,
        } if d >= 1 => Ok(Excitation::NodalForce { dof: d - 1 }),
        ExcitationSpec::NodalForce {
            dof: None,
            node: Some(n),
        } => Ok(Excitation::NodalForce {
            dof: beam_translation(cfg, n, "excitation.node")?,
        }),
        _ => Err(Error::Config(
            "excitation: a nodal force needs exactly one of dof (from 1) or node".into(),
        )),
    }
}

/// Maps a channel spec onto the model.
pub fn resolve_channel(cfg: &ExperimentConfig, model: &StructuralModel, spec: &ChannelSpec) -> Result<SensorChannel> {
    let what = format!("channel `{}`", spec.id);
    let dof = match (spec.dof, spec.node) {
        (Some(d), None) => Some(d - 1),
        (None, Some(n)) => Some(beam_translation(cfg, n, &what)?),
        _ => None,
    };
    let map = match (spec.quantity, dof, spec.member) {
        (Quantity::Acceleration, Some(d), None) => ResponseMap::acceleration(d, spec.frame),
        (Quantity::Displacement, Some(d), None) => ResponseMap::displacement(d),
        (Quantity::Velocity, Some(d), None) => ResponseMap::velocity(d),
        (Quantity::AxialStrain, None, Some(m)) => ResponseMap::axial_strain(m - 1),
        (Quantity::BendingStrain, None, Some(m)) => ResponseMap::bending_strain(m - 1, spec.position),
        _ => {
            return Err(Error::Config(format!(
                "{what}: {} needs a {} target",
                spec.quantity.as_str(),
                if matches!(spec.quantity, Quantity::AxialStrain | Quantity::BendingStrain) {
                    "member"
                } else {
                    "dof or node"
                }
            )))
        }
    };
    model.compile(&map).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    Ok(SensorChannel {
        id: spec.id.clone(),
        map,
        rate: spec.rate,
    })
}

/// Model assembly and every check that needs it.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<StructuralModel> {
    cfg.validate()?;
    let model = build_model(cfg).map_err(|e| Error::Config(format!("model: {e}")))?;
    for c in &cfg.channels {
        resolve_channel(cfg, &model, c)?;
    }
    let names = model.system().parameter_names();
    if let Some(list) = &cfg.filter.estimate {
        for n in list {
            if !names.contains(n) {
                return Err(Error::Config(format!(
                    "filter.estimate: unknown parameter `{n}` (model has {})",
                    names.join(", ")
                )));
            }
        }
    }
    if cfg.filter.estimate_input && matches!(cfg.excitation, ExcitationSpec::GroundMotion) {
        return Err(Error::Config(
            "filter.estimate_input: only nodal forces can be estimated".into(),
        ));
    }
    Ok(model)
}

fn generate_input(cfg: &ExperimentConfig, seed: u64) -> Result<InputRecord> {
    match &cfg.input {
        InputSpec::SyntheticGroundMotion { rate, peak } => synthetic_ground_motion(cfg.duration, *rate, *peak, seed),
        InputSpec::WhiteNoise { rate, std } => white_noise(cfg.duration, *rate, *std, seed),
        InputSpec::HalfSine {
            rate,
            onset,
            width,
            peak,
        } => half_sine_impact(cfg.duration, *rate, *onset, *width, *peak),
        InputSpec::File { path } => InputRecord::read_csv(path),
    }
}

/// Noise seed tied to the channel id so shared channels see the same noise
/// across experiments.
fn channel_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn peak_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, v| m.max(v.abs()))
}

fn filter_config(
    cfg: &ExperimentConfig,
    model: &StructuralModel,
    truth: &DVector<f64>,
    history: &ResponseHistory,
    input_peak: f64,
) -> Result<FilterConfig> {
    let system = model.system();
    let f = &cfg.filter;
    let names = system.parameter_names();
    let estimated: Vec<usize> = match &f.estimate {
        None => (0..names.len()).collect(),
        Some(list) => list
            .iter()
            .map(|n| names.iter().position(|m| m == n).expect("validated"))
            .collect(),
    };
    let mut guess = truth.clone();
    for &i in &estimated {
        guess[i] *= f.initial_parameter_factor;
    }
    let d_scale = peak_abs(history.disp.iter().flat_map(|u| u.iter().copied()));
    let v_scale = peak_abs(history.vel.iter().flat_map(|u| u.iter().copied()));
    let param = |frac: f64| estimated.iter().map(|&i| (frac * guess[i]).powi(2)).collect::<Vec<_>>();
    let mut fc = FilterConfig::with_blocks(
        system,
        estimated.clone(),
        &guess,
        f.estimate_input,
        BlockValues {
            displacement: (f.initial_state_std * d_scale).powi(2),
            velocity: (f.initial_state_std * v_scale).powi(2),
            input: (f.initial_input_std * input_peak).powi(2),
            parameters: param(f.initial_parameter_std),
        },
        BlockValues {
            displacement: (f.state_process_std * d_scale).powi(2),
            velocity: (f.state_process_std * v_scale).powi(2),
            input: (f.input_process_std * input_peak).powi(2),
            parameters: param(f.parameter_process_std),
        },
    )?;
    fc.sigma = f.sigma;
    fc.integrator = f.integrator;
    fc.algorithm = f.algorithm;
    if f.algorithm == Algorithm::Cgukf && f.non_negative_parameters {
        fc.constraints = fc.non_negative_parameters();
    }
    Ok(fc)
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn target_label(map: &ResponseMap) -> String {
    match map.target {
        MapTarget::Dof(d) => format!("dof{}", d + 1),
        MapTarget::Member(m) => format!("member{}", m + 1),
        MapTarget::Element { index, .. } => format!("element{}", index + 1),
    }
}

struct Artifacts {
    trace: EstimateTrace,
    truth_states: Vec<DVector<f64>>,
    truth_input: Vec<f64>,
    baselines: Vec<FusionEstimate>,
    strains: Vec<(String, Vec<f64>, Vec<f64>)>,
    timeline_csv: Option<Vec<u8>>,
}

/// Keeps `ω_max·dt ≤ 0.05` (Newmark period error below ~0.02 %) and at least
/// ten samples per fastest-channel sample; a multiple of the fastest rate.
fn default_simulation_rate(system: &ParametricSystem, params: &[f64], fastest: f64) -> Result<f64> {
    let omega_max = system.natural_frequencies(params)?.into_iter().fold(0.0, f64::max);
    let needed = (20.0 * omega_max).max(10.0 * fastest);
    Ok((needed / fastest).ceil() * fastest)
}

/// One full pipeline run for one seed.
fn run_seed(cfg: &ExperimentConfig, model: &StructuralModel, seed: u64) -> Result<(SeedReport, Artifacts)> {
    let started = Instant::now();
    let system = model.system();
    let truth = system.nominal_parameters().clone();

    let input = stage("input", generate_input(cfg, seed))?;
    let fastest = cfg.channels.iter().map(|c| c.rate).fold(0.0, f64::max);
    let sim_rate = match cfg.simulation.rate {
        Some(r) => r,
        None => default_simulation_rate(system, truth.as_slice(), fastest)?,
    };
    let history = stage(
        "simulate",
        simulate_true_response(system, truth.as_slice(), &input, 1.0 / sim_rate, cfg.duration),
    )?;

    let mut signals = Vec::with_capacity(cfg.channels.len());
    for spec in &cfg.channels {
        let channel = stage("channels", resolve_channel(cfg, model, spec))?;
        let clean = stage("sample", sample_channel(&history, model, truth.as_slice(), &channel))?;
        let mut noisy = stage("noise", add_noise(&clean, spec.noise, channel_seed(seed, &spec.id)))?;
        if cfg.noise.variance == VarianceSource::PreEvent {
            let window = cfg.noise.pre_event_window.expect("validated");
            let n = noisy.timestamps.partition_point(|&t| t < window);
            noisy.noise_variance = stage("noise", estimate_noise_variance(&noisy.values, 0..n))?;
        }
        signals.push(noisy);
    }

    let registry = stage("merge", MeasurementRegistry::from_signals(model, &signals))?;
    let timeline = stage("merge", merge_timelines(&signals, DEFAULT_TIME_TOLERANCE))?;
    let input_peak = peak_abs(input.samples.iter().copied());
    let fcfg = stage("filter", filter_config(cfg, model, &truth, &history, input_peak))?;
    let known = (!cfg.filter.estimate_input).then_some(&input);
    let trace = stage("filter", run_filter(system, &timeline, &registry, &fcfg, known))?;

    let mut metrics = Vec::new();
    let n = system.n_dof();
    let truth_states: Vec<DVector<f64>> = trace.times.iter().map(|&t| history.state_at(t)).collect();
    for (j, label) in trace.labels.iter().take(2 * n).enumerate() {
        let est = trace.series(j);
        let tru: Vec<f64> = truth_states.iter().map(|s| s[j]).collect();
        metrics.push((
            format!("state_rms.{label}"),
            stage("report", rms_error_percent(&est, &tru))?,
        ));
    }
    let final_params = trace.final_system_parameters().expect("non-empty trace");
    let ratios = stage(
        "report",
        parameter_ratio_table(final_params.as_slice(), truth.as_slice()),
    )?;
    for &i in trace.estimated_parameters() {
        metrics.push((format!("parameter_ratio.{}", system.parameter_names()[i]), ratios[i]));
    }

    let truth_input: Vec<f64> = trace.times.iter().map(|&t| input.value_at(t)).collect();
    if trace.layout.estimates_input() {
        let est = trace.series(trace.layout.input().start);
        let true_peak = truth_input.iter().copied().fold(f64::MIN, f64::max);
        let est_peak = est.iter().copied().fold(f64::MIN, f64::max);
        metrics.push(("input.peak_ratio".into(), est_peak / true_peak));
        metrics.push((
            "input.rms".into(),
            stage("report", rms_error_percent(&est, &truth_input))?,
        ));
    }

    let mut strains = Vec::new();
    if !matches!(model, StructuralModel::ShearFrame(_)) {
        for st in stage("strains", estimate_strains_from_states(&trace, model))? {
            let tru = truth_states
                .iter()
                .map(|s| evaluate_response_map(model, &st.map, &s.rows(0, 2 * n).into_owned(), truth.as_slice(), 0.0))
                .collect::<Result<Vec<f64>>>()?;
            let label = target_label(&st.map);
            metrics.push((
                format!("strain_rms.{label}"),
                stage("report", rms_error_percent(&st.values, &tru))?,
            ));
            strains.push((label, st.values, tru));
        }
    }

    let mut baselines = Vec::new();
    if let Some(b) = &cfg.baselines {
        let find = |id: &str| signals.iter().find(|s| s.channel.id == id).expect("validated");
        let mut acc = find(&b.acceleration).clone();
        if matches!(cfg.excitation, ExcitationSpec::GroundMotion) {
            acc = to_relative_acceleration(&acc, &input);
        } else {
            acc.channel.map.frame = ReferenceFrame::Relative;
        }
        let mut problem = stage(
            "baselines",
            KinematicFusionProblem::new(acc, find(&b.displacement).clone()),
        )?;
        problem.acceleration_variance *= b.process_variance_scale;
        let MapTarget::Dof(dof) = problem.displacement.channel.map.target else {
            unreachable!("validated by the problem")
        };
        let mut runs = Vec::new();
        if b.df1 {
            runs.push(stage("baselines", df1_rts_fusion(&problem))?);
        }
        if b.df2 {
            runs.push(stage("baselines", df2_stm_fusion(&problem, b.memory_length))?);
        }
        if let Some(first) = runs.first() {
            let idx: Vec<usize> = first
                .times
                .iter()
                .map(|t| trace.times.partition_point(|x| x < t))
                .collect();
            let tu: Vec<f64> = first.times.iter().map(|&t| history.state_at(t)[dof]).collect();
            let tv: Vec<f64> = first.times.iter().map(|&t| history.state_at(t)[n + dof]).collect();
            let fu: Vec<f64> = idx.iter().map(|&k| trace.means[k][dof]).collect();
            let fv: Vec<f64> = idx.iter().map(|&k| trace.means[k][n + dof]).collect();
            metrics.push((
                "baseline_dof.filter.displacement_rms".into(),
                rms_error_percent(&fu, &tu)?,
            ));
            metrics.push(("baseline_dof.filter.velocity_rms".into(), rms_error_percent(&fv, &tv)?));
            for r in &runs {
                metrics.push((
                    format!("baseline_dof.{}.displacement_rms", r.algorithm),
                    rms_error_percent(&r.displacement, &tu)?,
                ));
                metrics.push((
                    format!("baseline_dof.{}.velocity_rms", r.algorithm),
                    rms_error_percent(&r.velocity, &tv)?,
                ));
            }
        }
        baselines = runs;
    }

    let timeline_csv = if cfg.report.timeline {
        let mut buf = Vec::new();
        timeline.write_csv(&mut buf)?;
        Some(buf)
    } else {
        None
    };
    let report = SeedReport {
        seed,
        metrics,
        events: trace.len(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok((
        report,
        Artifacts {
            trace,
            truth_states,
            truth_input,
            baselines,
            strains,
            timeline_csv,
        },
    ))
}

fn write_seed(dir: &Path, report: &SeedReport, art: &Artifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    art.trace
        .write_csv(BufWriter::new(File::create(dir.join("trace.csv"))?))?;

    let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("truth.csv"))?));
    let n2 = art.trace.layout.structural().len();
    let mut header = vec!["time_s".to_string()];
    header.extend(art.trace.labels.iter().take(n2).cloned());
    header.push("input".into());
    csv.write_record(&header)?;
    for ((t, s), f) in art.trace.times.iter().zip(&art.truth_states).zip(&art.truth_input) {
        let mut row = vec![format!("{t:.9}")];
        row.extend(s.iter().map(|x| fmt(*x)));
        row.push(fmt(*f));
        csv.write_record(&row)?;
    }
    csv.flush()?;

    let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("metrics.csv"))?));
    csv.write_record(["metric", "value"])?;
    for (name, v) in &report.metrics {
        csv.write_record([name.as_str(), &fmt(*v)])?;
    }
    csv.flush()?;

    for b in &art.baselines {
        b.write_csv(BufWriter::new(File::create(dir.join(format!("{}.csv", b.algorithm)))?))?;
    }
    if !art.strains.is_empty() {
        let mut csv = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("strains.csv"))?));
        let mut header = vec!["time_s".to_string()];
        for (label, _, _) in &art.strains {
            header.push(format!("est_{label}"));
            header.push(format!("true_{label}"));
        }
        csv.write_record(&header)?;
        for (k, t) in art.trace.times.iter().enumerate() {
            let mut row = vec![format!("{t:.9}")];
            for (_, est, tru) in &art.strains {
                row.push(fmt(est[k]));
                row.push(fmt(tru[k]));
            }
            csv.write_record(&row)?;
        }
        csv.flush()?;
    }
    if let Some(tl) = &art.timeline_csv {
        fs::write(dir.join("timeline.csv"), tl)?;
    }
    Ok(())
}

/// Runs every seed (in parallel), writes per-seed and summary files when an
/// output directory is configured, and returns the collected metrics.
pub fn run_experiment(cfg: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    if let Some(seeds) = &options.seeds {
        cfg.seeds = seeds.clone();
    }
    let model = validate_config(&cfg)?;
    let directory = options
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .map(|d| d.join(&cfg.name));

    let work = || {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let (report, art) = run_seed(&cfg, &model, seed)?;
                if let Some(dir) = &directory {
                    write_seed(&dir.join(format!("seed_{seed}")), &report, &art).map_err(|e| e.in_stage("write"))?;
                }
                Ok(report)
            })
            .collect::<Result<Vec<_>>>()
    };
    let seeds = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let report = ExperimentReport {
        name: cfg.name.clone(),
        seeds,
        directory: directory.clone(),
    };
    if let Some(dir) = &directory {
        fs::create_dir_all(dir)?;
        report.write_summary_csv(BufWriter::new(File::create(dir.join("summary.csv"))?))?;
        report.write_summary_text(BufWriter::new(File::create(dir.join("summary.txt"))?))?;
        fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    }
    Ok(report)
}

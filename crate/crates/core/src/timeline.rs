//! Merging multi-rate channels into one chronological event stream.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{CompiledMap, ResponseMap, StructuralModel};
use crate::simulate::ChannelSignal;

/// Default coincidence tolerance, seconds.
pub const DEFAULT_TIME_TOLERANCE: f64 = 1e-9;

/// Measurements that arrive together.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementEvent {
    pub time: f64,
    /// Indices into [`MeasurementTimeline::channel_ids`], ascending.
    pub channels: Vec<usize>,
    /// One value per entry of `channels`, same order.
    pub values: Vec<f64>,
    /// Zero for the first event.
    pub dt_from_previous: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementTimeline {
    pub channel_ids: Vec<String>,
    pub events: Vec<MeasurementEvent>,
}

impl MeasurementTimeline {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn channel_ids_of(&self, event: &MeasurementEvent) -> Vec<&str> {
        event.channels.iter().map(|&c| self.channel_ids[c].as_str()).collect()
    }

    /// Debug dump: `time_s,channels,dt_s` with channel ids joined by `;`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["time_s", "channels", "dt_s"])?;
        for e in &self.events {
            csv.write_record([
                format!("{:.9}", e.time),
                self.channel_ids_of(e).join(";"),
                format!("{:.9e}", e.dt_from_previous),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Merges channels into events; samples closer than `time_tolerance` to the
/// first sample of an event join that event. Channel order inside an event
/// follows the order of `channels`.
pub fn merge_timelines(channels: &[ChannelSignal], time_tolerance: f64) -> Result<MeasurementTimeline> {
    if channels.is_empty() {
        return Err(Error::Empty("no channels to merge".into()));
    }
    if !(time_tolerance >= 0.0) {
        return Err(Error::invalid("time_tolerance", "must be non-negative"));
    }
    let mut samples = Vec::with_capacity(channels.iter().map(|c| c.len()).sum());
    for (ci, c) in channels.iter().enumerate() {
        if c.timestamps.len() != c.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "channel `{}` has {} timestamps and {} values",
                c.channel.id,
                c.timestamps.len(),
                c.values.len()
            )));
        }
        if c.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                format!("channel `{}`", c.channel.id),
                "timestamps are not strictly increasing",
            ));
        }
        samples.extend(c.timestamps.iter().zip(&c.values).map(|(&t, &v)| (t, ci, v)));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut events: Vec<MeasurementEvent> = Vec::new();
    for (t, ci, v) in samples {
        match events.last_mut() {
            Some(e) if t - e.time <= time_tolerance => {
                if e.channels.contains(&ci) {
                    return Err(Error::invalid(
                        format!("channel `{}`", channels[ci].channel.id),
                        format!("two samples within {time_tolerance} s near t = {t}"),
                    ));
                }
                let pos = e.channels.partition_point(|&c| c < ci);
                e.channels.insert(pos, ci);
                e.values.insert(pos, v);
            }
            last => {
                let dt = last.map_or(0.0, |e| t - e.time);
                events.push(MeasurementEvent {
                    time: t,
                    channels: vec![ci],
                    values: vec![v],
                    dt_from_previous: dt,
                });
            }
        }
    }
    Ok(MeasurementTimeline {
        channel_ids: channels.iter().map(|c| c.channel.id.clone()).collect(),
        events,
    })
}

/// Response maps and noise variances of every registered sensor, in
/// registration order.
#[derive(Clone, Debug)]
pub struct MeasurementRegistry {
    ids: Vec<String>,
    maps: Vec<ResponseMap>,
    compiled: Vec<CompiledMap>,
    variances: Vec<f64>,
    index: HashMap<String, usize>,
}

impl MeasurementRegistry {
    pub fn new(model: &StructuralModel, entries: &[(String, ResponseMap, f64)]) -> Result<Self> {
        let mut reg = Self {
            ids: Vec::new(),
            maps: Vec::new(),
            compiled: Vec::new(),
            variances: Vec::new(),
            index: HashMap::new(),
        };
        for (id, map, var) in entries {
            if !(*var >= 0.0) {
                return Err(Error::invalid(
                    format!("channel `{id}` variance"),
                    "must be non-negative",
                ));
            }
            if reg.index.insert(id.clone(), reg.ids.len()).is_some() {
                return Err(Error::invalid(format!("channel `{id}`"), "registered twice"));
            }
            reg.ids.push(id.clone());
            reg.maps.push(*map);
            reg.compiled.push(model.compile(map)?);
            reg.variances.push(*var);
        }
        Ok(reg)
    }

    /// Registers every channel of a signal set with its recorded variance.
    pub fn from_signals(model: &StructuralModel, signals: &[ChannelSignal]) -> Result<Self> {
        let entries: Vec<_> = signals
            .iter()
            .map(|s| (s.channel.id.clone(), s.channel.map, s.noise_variance))
            .collect();
        Self::new(model, &entries)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn compiled(&self, row: usize) -> &CompiledMap {
        &self.compiled[row]
    }

    pub fn map(&self, row: usize) -> &ResponseMap {
        &self.maps[row]
    }

    pub fn variance(&self, row: usize) -> f64 {
        self.variances[row]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// The event-specific measurement function and noise covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveMeasurement {
    /// Registry rows, in registration order.
    pub rows: Vec<usize>,
    /// Stacked measurement, same order as `rows`.
    pub values: DVector<f64>,
    /// Diagonal of `P_R`.
    pub variances: DVector<f64>,
}

impl ActiveMeasurement {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn noise_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.variances)
    }
}

/// Stacks only the channels active in `event`, ordered by registration.
pub fn active_measurement_model(
    timeline: &MeasurementTimeline,
    event: &MeasurementEvent,
    registry: &MeasurementRegistry,
) -> Result<ActiveMeasurement> {
    let mut rows: Vec<(usize, f64)> = Vec::with_capacity(event.channels.len());
    for (&c, &v) in event.channels.iter().zip(&event.values) {
        let id = &timeline.channel_ids[c];
        let row = registry
            .position(id)
            .ok_or_else(|| Error::UnregisteredChannel(id.clone()))?;
        rows.push((row, v));
    }
    rows.sort_by_key(|r| r.0);
    Ok(ActiveMeasurement {
        values: DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
        variances: DVector::from_iterator(rows.len(), rows.iter().map(|r| registry.variance(r.0))),
        rows: rows.into_iter().map(|r| r.0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_shear_frame, Excitation, ReferenceFrame};
    use crate::simulate::{downsample, SensorChannel};

    fn signal(id: &str, rate: f64, len: usize, map: ResponseMap) -> ChannelSignal {
        ChannelSignal::uniform(
            SensorChannel {
                id: id.into(),
                map,
                rate,
            },
            (0..len).map(|k| k as f64).collect(),
        )
    }

    fn acc(len: usize) -> ChannelSignal {
        signal(
            "acc1",
            500.0,
            len,
            ResponseMap::acceleration(0, ReferenceFrame::Absolute),
        )
    }

    #[test]
    fn commensurate_rates_coalesce() {
        let a = acc(1001);
        let d = downsample(&signal("disp1", 500.0, 1001, ResponseMap::displacement(0)), 50.0).unwrap();
        let tl = merge_timelines(&[a, d], DEFAULT_TIME_TOLERANCE).unwrap();
        assert_eq!(tl.len(), 1001);
        for (k, e) in tl.events.iter().enumerate() {
            assert_eq!(e.channels.len(), if k % 10 == 0 { 2 } else { 1 });
        }
        let e = &tl.events[200];
        assert_eq!(e.time, 0.4);
        assert_eq!(tl.channel_ids_of(e), ["acc1", "disp1"]);
        assert_eq!(tl.channel_ids_of(&tl.events[199]), ["acc1"]);
    }

    #[test]
    fn non_commensurate_rates_interleave() {
        let a = acc(1001);
        let d = downsample(&signal("disp1", 500.0, 1001, ResponseMap::displacement(0)), 30.0).unwrap();
        let tl = merge_timelines(&[a, d], DEFAULT_TIME_TOLERANCE).unwrap();
        let k = tl.events.iter().position(|e| e.time == 1.032).unwrap();
        let (e0, e1, e2) = (&tl.events[k], &tl.events[k + 1], &tl.events[k + 2]);
        assert_eq!(tl.channel_ids_of(e0), ["acc1"]);
        assert_eq!(tl.channel_ids_of(e1), ["disp1"]);
        assert_eq!(tl.channel_ids_of(e2), ["acc1"]);
        assert!((e1.dt_from_previous - 0.004 / 3.0).abs() < 1e-12);
        assert!((e2.dt_from_previous - 0.002 / 3.0).abs() < 1e-12);
        assert_eq!(tl.events[0].dt_from_previous, 0.0);
    }

    #[test]
    fn single_channel_timeline() {
        let a = acc(50);
        let tl = merge_timelines(std::slice::from_ref(&a), 0.0).unwrap();
        assert_eq!(tl.events.iter().map(|e| e.time).collect::<Vec<_>>(), a.timestamps);
        assert!(tl.events.iter().all(|e| e.channels.len() == 1));
        assert!(merge_timelines(&[], 0.0).is_err());
    }

    fn registry(order: &[usize]) -> (StructuralModel, MeasurementRegistry) {
        let m = StructuralModel::ShearFrame(
            build_shear_frame(&[1.0; 8], &[1.0; 8], &[0.0; 8], Excitation::GroundMotion).unwrap(),
        );
        let entries: Vec<_> = order
            .iter()
            .map(|&i| {
                (
                    format!("S{}", i + 1),
                    ResponseMap::acceleration(i, ReferenceFrame::Absolute),
                    (i + 1) as f64,
                )
            })
            .collect();
        let reg = MeasurementRegistry::new(&m, &entries).unwrap();
        (m, reg)
    }

    #[test]
    fn active_model_stacks_active_rows() {
        let (_, reg) = registry(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let tl = MeasurementTimeline {
            channel_ids: vec!["S7".into(), "S1".into(), "S4".into()],
            events: vec![MeasurementEvent {
                time: 0.0,
                channels: vec![0, 1, 2],
                values: vec![70.0, 10.0, 40.0],
                dt_from_previous: 0.0,
            }],
        };
        let am = active_measurement_model(&tl, &tl.events[0], &reg).unwrap();
        assert_eq!(am.rows, vec![0, 3, 6]);
        assert_eq!(am.values.as_slice(), &[10.0, 40.0, 70.0]);
        assert_eq!(
            am.noise_covariance(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 7.0]))
        );

        let one = MeasurementEvent {
            time: 0.0,
            channels: vec![2],
            values: vec![1.0],
            dt_from_previous: 0.0,
        };
        let am = active_measurement_model(&tl, &one, &reg).unwrap();
        assert_eq!(am.noise_covariance(), DMatrix::from_element(1, 1, 4.0));
    }

    #[test]
    fn unregistered_channel_is_reported() {
        let (_, reg) = registry(&[0]);
        let tl = MeasurementTimeline {
            channel_ids: vec!["S9".into()],
            events: vec![MeasurementEvent {
                time: 0.0,
                channels: vec![0],
                values: vec![1.0],
                dt_from_previous: 0.0,
            }],
        };
        assert!(matches!(
            active_measurement_model(&tl, &tl.events[0], &reg),
            Err(Error::UnregisteredChannel(id)) if id == "S9"
        ));
    }
}

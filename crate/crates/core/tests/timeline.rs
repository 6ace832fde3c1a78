mod common;

use common::{rational_events, rng};
use proptest::prelude::*;
use rand::Rng;
use strucfuse::experiment::{build_model, preset, resolve_channel};
use strucfuse::model::ResponseMap;
use strucfuse::simulate::{ChannelSignal, SensorChannel};
use strucfuse::timeline::{active_measurement_model, merge_timelines, MeasurementRegistry, DEFAULT_TIME_TOLERANCE};

const RATES: [f64; 9] = [1000.0, 500.0, 250.0, 200.0, 120.0, 100.0, 60.0, 50.0, 30.0];

fn random_signals(seed: u64) -> Vec<ChannelSignal> {
    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    (0..n)
        .map(|c| {
            let rate = RATES[r.random_range(0..RATES.len())];
            let len = r.random_range(1..=100);
            let values = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut s = ChannelSignal::uniform(
                SensorChannel {
                    id: format!("c{c}"),
                    map: ResponseMap::displacement(0),
                    rate,
                },
                values,
            );
            s.noise_variance = 1e-3;
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn timeline_equals_exhaustive_grouping(seed in any::<u64>()) {
        let signals = random_signals(seed);
        let timeline = merge_timelines(&signals, DEFAULT_TIME_TOLERANCE).unwrap();
        let oracle = rational_events(&signals);
        prop_assert_eq!(timeline.len(), oracle.len());
        let total: usize = timeline.events.iter().map(|e| e.channels.len()).sum();
        prop_assert_eq!(total, signals.iter().map(|s| s.len()).sum::<usize>());
        let mut previous: Option<f64> = None;
        for (ev, (t, chans)) in timeline.events.iter().zip(&oracle) {
            prop_assert!((ev.time - t).abs() < 1e-12);
            let got: Vec<(String, f64)> = ev
                .channels
                .iter()
                .zip(&ev.values)
                .map(|(&c, &v)| (timeline.channel_ids[c].clone(), v))
                .collect();
            prop_assert_eq!(&got, chans);
            prop_assert!(ev.channels.windows(2).all(|w| w[0] < w[1]));
            match previous {
                None => prop_assert_eq!(ev.dt_from_previous, 0.0),
                Some(p) => prop_assert!((ev.dt_from_previous - (ev.time - p)).abs() < 1e-12 && ev.dt_from_previous > 0.0),
            }
            previous = Some(ev.time);
        }
    }

    #[test]
    fn stacking_follows_registration_order(seed in any::<u64>()) {
        let signals = random_signals(seed);
        let frame = build_model(&preset("frame_500_50").unwrap()).unwrap();
        let timeline = merge_timelines(&signals, DEFAULT_TIME_TOLERANCE).unwrap();
        let mut order: Vec<usize> = (0..signals.len()).collect();
        order.reverse();
        let reversed: Vec<ChannelSignal> = order.iter().map(|&i| signals[i].clone()).collect();
        let forward = MeasurementRegistry::from_signals(&frame, &signals).unwrap();
        let backward = MeasurementRegistry::from_signals(&frame, &reversed).unwrap();
        for ev in &timeline.events {
            let a = active_measurement_model(&timeline, ev, &forward).unwrap();
            let b = active_measurement_model(&timeline, ev, &backward).unwrap();
            prop_assert!(a.rows.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(b.rows.windows(2).all(|w| w[0] < w[1]));
            let mut av: Vec<f64> = a.values.iter().copied().collect();
            let mut bv: Vec<f64> = b.values.iter().copied().collect();
            bv.reverse();
            prop_assert_eq!(&av, &bv);
            av.sort_by(f64::total_cmp);
            bv.sort_by(f64::total_cmp);
            prop_assert_eq!(av, bv);
        }
    }
}

#[test]
fn truss_event_with_all_channels_stacks_thirteen_rows() {
    let cfg = preset("truss_fused").unwrap();
    let model = build_model(&cfg).unwrap();
    let signals: Vec<ChannelSignal> = cfg
        .channels
        .iter()
        .map(|c| {
            let mut s = ChannelSignal::uniform(resolve_channel(&cfg, &model, c).unwrap(), vec![0.5; 9]);
            s.noise_variance = 0.01;
            s
        })
        .collect();
    assert_eq!(signals.len(), 13);
    let registry = MeasurementRegistry::from_signals(&model, &signals).unwrap();
    let timeline = merge_timelines(&signals, DEFAULT_TIME_TOLERANCE).unwrap();
    let full: Vec<_> = timeline.events.iter().filter(|e| e.channels.len() == 13).collect();
    assert_eq!(full.len(), 3);
    let active = active_measurement_model(&timeline, full[0], &registry).unwrap();
    assert_eq!(active.len(), 13);
    assert_eq!(active.rows, (0..13).collect::<Vec<_>>());
    assert_eq!(active.noise_covariance().shape(), (13, 13));
}

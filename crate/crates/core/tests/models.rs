mod common;

use common::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use strucfuse::experiment::{build_model, preset};
use strucfuse::model::{evaluate_response_map, ReferenceFrame, ResponseMap, StructuralModel};
use strucfuse::simulate::{simulate_true_response, white_noise};

fn preset_models() -> Vec<StructuralModel> {
    ["frame_500_50", "truss_fused", "beam_input_estimation"]
        .iter()
        .map(|n| build_model(&preset(n).unwrap()).unwrap())
        .collect()
}

fn scaled_parameters(model: &StructuralModel, r: &mut impl Rng) -> Vec<f64> {
    model
        .system()
        .nominal_parameters()
        .iter()
        .map(|&p| p * r.random_range(0.5..1.5))
        .collect()
}

fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax() / a.amax()
}

fn all_maps(model: &StructuralModel) -> Vec<ResponseMap> {
    let n = model.n_dof();
    let mut maps: Vec<ResponseMap> = (0..n)
        .flat_map(|d| {
            [
                ResponseMap::displacement(d),
                ResponseMap::velocity(d),
                ResponseMap::acceleration(d, ReferenceFrame::Relative),
                ResponseMap::acceleration(d, ReferenceFrame::Absolute),
            ]
        })
        .collect();
    if let Ok(strains) = model.strain_maps() {
        maps.extend(strains);
    }
    maps
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn assembled_matrices_are_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        for model in preset_models() {
            let params = scaled_parameters(&model, &mut r);
            let m = model.system().matrices(&params).unwrap();
            prop_assert!(asymmetry(&m.mass) <= 1e-12, "{} mass", model.kind());
            prop_assert!(asymmetry(&m.stiffness) <= 1e-12, "{} stiffness", model.kind());
            prop_assert!(asymmetry(&m.damping) <= 1e-12, "{} damping", model.kind());
        }
    }

    #[test]
    fn response_maps_are_linear(seed in any::<u64>()) {
        let mut r = rng(seed);
        for model in preset_models() {
            let params = scaled_parameters(&model, &mut r);
            let s = 2 * model.n_dof();
            let s1 = DVector::from_fn(s, |_, _| r.random_range(-1.0..1.0));
            let s2 = DVector::from_fn(s, |_, _| r.random_range(-1.0..1.0));
            let (f1, f2): (f64, f64) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let (a, b): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            for map in all_maps(&model) {
                let eval = |x: &DVector<f64>, f: f64| evaluate_response_map(&model, &map, x, &params, f).unwrap();
                let e1 = eval(&s1, f1);
                let e2 = eval(&s2, f2);
                let combined = eval(&(&s1 * a + &s2 * b), a * f1 + b * f2);
                let scale = e1.abs().max(e2.abs()).max(f64::MIN_POSITIVE);
                prop_assert!(
                    (combined - (a * e1 + b * e2)).abs() <= 1e-11 * scale * (a.abs() + b.abs() + 1.0),
                    "{} {:?}", model.kind(), map
                );
            }
        }
    }
}

#[test]
fn acceleration_map_reproduces_simulated_acceleration() {
    for model in preset_models() {
        let system = model.system();
        let params = system.nominal_parameters().as_slice();
        let input = white_noise(0.11, 1000.0, 1.0, 3).unwrap();
        let hist = simulate_true_response(system, params, &input, 1e-4, 0.1).unwrap();
        let peak = hist.acc.iter().map(|a| a.amax()).fold(0.0, f64::max);
        assert!(peak > 0.0);
        for k in (0..hist.len()).step_by(97) {
            for d in 0..model.n_dof() {
                let map = ResponseMap::acceleration(d, ReferenceFrame::Relative);
                let a = evaluate_response_map(&model, &map, &hist.state(k), params, hist.input[k]).unwrap();
                assert!(
                    (a - hist.acc[k][d]).abs() <= 1e-9 * peak,
                    "{} step {k} dof {d}: {a} vs {}",
                    model.kind(),
                    hist.acc[k][d]
                );
            }
        }
    }
}

#[test]
fn ground_motion_absolute_acceleration_adds_the_ground() {
    let model = build_model(&preset("frame_500_50").unwrap()).unwrap();
    let params = model.system().nominal_parameters().as_slice();
    let state = DVector::from_vec(vec![1e-3, -2e-3, 0.01, 0.02]);
    for d in 0..2 {
        let rel = evaluate_response_map(
            &model,
            &ResponseMap::acceleration(d, ReferenceFrame::Relative),
            &state,
            params,
            0.7,
        )
        .unwrap();
        let abs = evaluate_response_map(
            &model,
            &ResponseMap::acceleration(d, ReferenceFrame::Absolute),
            &state,
            params,
            0.7,
        )
        .unwrap();
        assert!((abs - rel - 0.7).abs() < 1e-12);
    }
}

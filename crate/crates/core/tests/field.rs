mod common;

use common::*;
use omg_core::field::{
    decode, distill_fit, export_decoded, positional_encoding, DistillConfig, DistillProblem, DistillState, FieldArch,
    FieldWeights, LossWeights, FIELD_BUDGET_BYTES,
};
use omg_core::model::{sigmoid, SH_REST};
use omg_core::synth::{synth_scene, SynthSpec};
use omg_core::{Aabb, OmgGaussianSet};
use proptest::prelude::*;
use rand::Rng;

fn unit_box() -> Aabb {
    Aabb { min: [-1.0; 3], max: [1.0; 3] }
}

// Per-Gaussian loss through the explicit forward oracle.
fn loss_oracle(problem_src: &omg_core::SourceGaussianSet, state: &DistillState, lw: LossWeights) -> f64 {
    let w = &state.weights;
    let n = problem_src.len();
    let mut total = 0.0;
    for i in 0..n {
        let p = w.aabb.normalize(problem_src.positions[i]);
        let f = mlp_oracle(&w.space, &pe_oracle(p, w.arch.pe_frequencies));
        let mut input: Vec<f64> = state.static_features[i].to_vec();
        input.extend(&f);
        let dc = mlp_oracle(&w.static_color, &input);
        let o = sigmoid(mlp_oracle(&w.opacity, &input)[0]);
        input[..3].copy_from_slice(&state.view_features[i]);
        let rest = mlp_oracle(&w.view, &input);
        for c in 0..3 {
            total += lw.sh_dc * (dc[c] - problem_src.sh_dc[i][c] as f64).powi(2);
        }
        total += lw.opacity * (o - problem_src.opacities[i]).powi(2);
        for k in 0..SH_REST {
            total += lw.sh_rest * (rest[k] - problem_src.sh_rest[i][k] as f64).powi(2);
        }
    }
    total / n as f64
}

#[test]
fn default_architecture_fits_budget() {
    let arch = FieldArch::default();
    assert_eq!(arch.param_count(), 5345);
    assert!(2 * arch.param_count() <= FIELD_BUDGET_BYTES);
    let w = FieldWeights::random(arch, unit_box(), 1);
    assert_eq!(w.to_half_bytes().len(), 2 * 5345);
}

proptest! {
    #[test]
    fn encoding_matches_term_by_term_oracle(p in prop::array::uniform3(-1.0f64..1.0), f in 0usize..10) {
        let got = positional_encoding(p, f);
        let want = pe_oracle(p, f);
        prop_assert_eq!(got.len(), 3 + 6 * f);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn decode_matches_forward_oracle(seed in any::<u64>(), p in prop::array::uniform3(-1.0f32..1.0)) {
        let w = FieldWeights::random(FieldArch::default(), unit_box(), seed);
        let mut r = rng(seed);
        let t: [f32; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let v: [f32; 3] = std::array::from_fn(|_| r.random_range(-2.0..2.0));
        let got = w.decode_point(p, t, v);

        let f = mlp_oracle(&w.space, &pe_oracle(p.map(|x| x as f64), 6));
        let mut input: Vec<f64> = t.iter().map(|x| *x as f64).collect();
        input.extend(&f);
        let dc = mlp_oracle(&w.static_color, &input);
        let o = sigmoid(mlp_oracle(&w.opacity, &input)[0]);
        input[..3].iter_mut().zip(v).for_each(|(d, x)| *d = x as f64);
        let rest = mlp_oracle(&w.view, &input);
        for c in 0..3 {
            prop_assert!((got.sh_dc[c] - dc[c]).abs() < 1e-12);
        }
        prop_assert!((got.opacity - o).abs() < 1e-12);
        prop_assert!(got.opacity > 0.0 && got.opacity < 1.0);
        for k in 0..SH_REST {
            prop_assert!((got.sh_rest[k] - rest[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn half_serialization_round_trips(seed in any::<u64>()) {
        let mut w = FieldWeights::random(FieldArch::default(), unit_box(), seed);
        w.round_to_half();
        let back = FieldWeights::from_half_bytes(w.arch, w.aabb, &w.to_half_bytes()).unwrap();
        prop_assert_eq!(back, w);
    }
}

#[test]
fn loss_matches_oracle_and_decoding_is_deterministic() {
    let src = random_source(300, &mut rng(3));
    let lw = LossWeights::default();
    let problem = DistillProblem::new(&src, FieldArch::default(), lw);
    let state = problem.initial_state(7);
    let got = problem.loss(&state);
    let want = loss_oracle(&src, &state, lw);
    assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");

    let set: OmgGaussianSet = state.into_set(&src);
    let a = export_decoded(&set);
    let b = export_decoded(&set);
    assert_eq!(a, b);
    for n in [0, 17, 299] {
        assert_eq!(a.opacities[n], decode(&set, n).opacity);
    }
}

#[test]
fn gradient_check_on_deeper_field() {
    let arch = FieldArch { pe_frequencies: 3, space_dim: 5, hidden_width: 7, hidden_layers: 2 };
    let src = random_source(25, &mut rng(12));
    let lw = LossWeights { sh_dc: 0.7, opacity: 2.0, sh_rest: 0.3 };
    let problem = DistillProblem::new(&src, arch, lw);
    let mut state = problem.initial_state(4);
    // Move away from the initialization so every term has a gradient.
    let mut r = rng(99);
    let mut params = state.params();
    params.iter_mut().for_each(|p| *p += r.random_range(-0.2..0.2));
    state.set_params(&params);
    let (_, grad) = problem.full_gradient(&state);
    let h = 1e-6;
    let mut checked = 0;
    for _ in 0..60 {
        let k = r.random_range(0..params.len());
        let mut plus = params.clone();
        plus[k] += h;
        let mut minus = params.clone();
        minus[k] -= h;
        state.set_params(&plus);
        let lp = problem.loss(&state);
        state.set_params(&minus);
        let lm = problem.loss(&state);
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(grad[k].abs());
        if denom < 1e-9 {
            continue;
        }
        assert!((fd - grad[k]).abs() / denom < 1e-3, "coordinate {k}: analytic {} vs numeric {fd}", grad[k]);
        checked += 1;
    }
    assert!(checked > 30);
}

#[test]
fn distillation_is_deterministic_per_seed() {
    let src = synth_scene(&SynthSpec { gaussians: 400, seed: 2, ..SynthSpec::default() }).unwrap();
    let cfg = DistillConfig { iterations: 60, batch_size: 128, checkpoint_interval: 20, seed: 5, ..DistillConfig::default() };
    let a = distill_fit(&src, &cfg).unwrap();
    let b = distill_fit(&src, &cfg).unwrap();
    assert_eq!(a.set, b.set);
    assert_eq!(a.trace, b.trace);
    assert!(a.final_loss < a.initial_loss);
}

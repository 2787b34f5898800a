use chunktd::env::{generate_acyclic_mdp, EnvSpec, KeyToDoor, KeyToDoorParams};
use chunktd::mdp::{rollout_with, Action, Episode, State, UniformPolicy};
use chunktd::model::count::preset_conditions;
use chunktd::model::{FactoredCountModel, LambdaSource, TabularCountModel};
use chunktd::rng;

/// Count estimates approach the generator's transition probabilities,
/// each within five binomial standard errors.
#[test]
fn tabular_counts_converge_to_true_probabilities() {
    let mut env = generate_acyclic_mdp(5, 5, 3, 2, 1.0).unwrap();
    let mut model = TabularCountModel::new();
    let mut r = rng::stream(6, &[]);
    for _ in 0..5000 {
        let ep: Episode<f64> = rollout_with(&mut env, &UniformPolicy, &mut r).unwrap();
        for t in 0..ep.len() {
            LambdaSource::<f64>::observe(&mut model, ep.state(t), ep.actions[t], ep.state(t + 1)).unwrap();
        }
    }
    let mut checked = 0;
    for l in 0..4 {
        for i in 0..3 {
            let x = State::new(&[l, i]);
            for a in 0..2 {
                let n = model.visits(&x, Action(a));
                if n < 200 {
                    continue;
                }
                for (next, p) in env.successors(&x, Action(a)) {
                    let est = LambdaSource::<f64>::next_percept_prob(&model, &x, Action(a), &next).unwrap();
                    let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
                    assert!((est - p).abs() <= 5.0 * se, "{x:?} {a} -> {next:?}: {est} vs {p}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 10);
}

/// The preset factored counts learn a fair coin for each distractor and
/// certainty for the deterministic components.
#[test]
fn factored_counts_on_key_to_door() {
    let params = KeyToDoorParams { horizon: 10, distractors: 2, ..Default::default() };
    let spec = EnvSpec::KeyToDoor(params.clone());
    let mut env = KeyToDoor::new(params).unwrap();
    let mut model = FactoredCountModel::new(preset_conditions(&spec).unwrap());
    let mut r = rng::stream(9, &[]);
    let n = 4000;
    for _ in 0..n {
        let ep: Episode<f64> = rollout_with(&mut env, &UniformPolicy, &mut r).unwrap();
        for t in 0..ep.len() {
            LambdaSource::<f64>::observe(&mut model, ep.state(t), ep.actions[t], ep.state(t + 1)).unwrap();
        }
    }
    // key held, not at the door, t = 3
    let x = State::new(&[1, 0, 0, 0, 0, 3]);
    let next = State::new(&[1, 0, 1, 0, 0, 4]);
    let out = LambdaSource::<f64>::predict(&model, &x, Action(0), &next).unwrap();
    assert_eq!(out.components[0], 1.0);
    assert_eq!(out.components[1], 1.0);
    assert_eq!(out.components[4], 1.0);
    assert_eq!(out.components[5], 1.0);
    // half the episodes hold the key, half of those pick action 0
    let se = (0.25 / (n as f64 / 4.0)).sqrt();
    for i in [2, 3] {
        assert!((out.components[i] - 0.5).abs() < 5.0 * se, "distractor {i}: {}", out.components[i]);
    }
    let product: f64 = out.components.iter().product();
    assert!((out.joint - product).abs() < 1e-15);
}

use std::collections::HashMap;

use chunktd::env::{generate_acyclic_mdp, KeyToDoor, KeyToDoorParams, RandomAcyclicMdp};
use chunktd::learn::{Bootstrap, FactoredQLearner, QStep, TabularQLearner, TdOneOverN, Tdc};
use chunktd::mdp::{rollout_with, Action, ActionDist, Discount, Episode, Percept, State, UniformPolicy};
use chunktd::oracle::{
    lambda_return_q_ledger, offline_expected_lambda_returns, offline_sarsa_lambda_returns, LambdaSchedule, Sa, UpdateLedger,
};
use chunktd::rng;
use proptest::prelude::*;

fn uniform_dists(ep: &Episode<f64>, env: &RandomAcyclicMdp) -> Vec<ActionDist<f64>> {
    let n = env.params().actions;
    (0..ep.len()).map(|_| ActionDist::uniform(n).unwrap()).collect()
}

fn step<'a>(ep: &'a Episode<f64>, dists: &'a [ActionDist<f64>], t: usize, rv: Option<&'a [f64]>) -> QStep<'a, f64> {
    let done = t + 1 == ep.len();
    QStep {
        state: ep.state(t),
        action: ep.actions[t],
        reward: ep.reward_after(t),
        reward_vector: rv,
        next: ep.state(t + 1),
        done,
        next_action: (!done).then(|| ep.actions[t + 1]),
        next_dist: (!done).then(|| &dists[t + 1]),
    }
}

fn q_ledger(before: &HashMap<(State, Action), f64>, after: &HashMap<(State, Action), f64>) -> UpdateLedger<Sa, f64> {
    UpdateLedger(after.iter().map(|((s, a), v)| (Sa(s.clone(), *a), v - before.get(&(s.clone(), *a)).copied().unwrap_or(0.0))).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Constant-λ SARSA totals equal the offline λ-return updates when
    /// the table starts from arbitrary values.
    #[test]
    fn sarsa_lambda_matches_offline_returns(
        seed in 0u64..10_000,
        layers in 2usize..8,
        width in 1usize..5,
        lambda in 0.0f64..=1.0,
        alpha in 0.01f64..1.0,
        gamma in 0.5f64..=1.0,
        init in -1.0f64..1.0,
    ) {
        let mut env = generate_acyclic_mdp(seed, layers, width, 2, 1.0).unwrap();
        let mut r = rng::stream(seed, &[1]);
        let ep: Episode<f64> = rollout_with(&mut env, &UniformPolicy, &mut r).unwrap();
        let dists = uniform_dists(&ep, &env);
        let q0 = |s: &State, a: Action| init * (1.0 + s.component(1) as f64) - 0.1 * a.0 as f64;
        for boot in [Bootstrap::Sarsa, Bootstrap::Expected] {
            let mut l = TabularQLearner::new(2, boot, alpha, Discount::new(gamma).unwrap()).unwrap();
            for t in 0..ep.len() {
                for a in 0..2 {
                    l.table.set(ep.state(t), Action(a), q0(ep.state(t), Action(a)));
                }
            }
            let before = l.table.snapshot();
            for t in 0..ep.len() {
                l.step(&step(&ep, &dists, t, None), lambda).unwrap();
            }
            let online = q_ledger(&before, &l.table.snapshot());
            let sched = LambdaSchedule::constant(ep.len(), lambda);
            let g = match boot {
                Bootstrap::Sarsa => offline_sarsa_lambda_returns(&ep, q0, &sched, gamma).unwrap(),
                Bootstrap::Expected => offline_expected_lambda_returns(&ep, q0, &dists, &sched, gamma).unwrap(),
            };
            let offline = lambda_return_q_ledger(&ep, q0, &g, alpha).unwrap();
            prop_assert!(online.max_abs_diff(&offline) < 1e-12);
        }
    }
}

/// Each component of the factored learner is an Expected-SARSA learner on
/// its own reward stream with its own trace decay.
#[test]
fn factored_components_follow_their_own_returns() {
    let mut env = KeyToDoor::new(KeyToDoorParams { horizon: 12, distractors: 2, ..Default::default() }).unwrap();
    let d = env.components();
    let mut r = rng::stream(8, &[]);
    for trial in 0..20 {
        let ep: Episode<f64> = rollout_with(&mut env, &UniformPolicy, &mut r).unwrap();
        let dists: Vec<ActionDist<f64>> = (0..ep.len()).map(|_| ActionDist::uniform(2).unwrap()).collect();
        let lambdas: Vec<Vec<f64>> = (0..ep.len())
            .map(|t| (0..d).map(|i| ((t * 7 + i * 3 + trial) % 11) as f64 / 10.0).collect())
            .collect();
        let alpha = 0.3;
        let mut l = FactoredQLearner::new(d, 2, Bootstrap::Expected, alpha, Discount::undiscounted()).unwrap();
        let mut before = vec![HashMap::new(); d];
        for t in 0..ep.len() {
            for a in 0..2 {
                for (i, b) in before.iter_mut().enumerate() {
                    b.insert((ep.state(t).clone(), Action(a)), l.tables.component_value(i, ep.state(t), Action(a)));
                }
            }
        }
        for t in 0..ep.len() {
            let rv = ep.percepts[t + 1].reward_vector.clone().unwrap();
            l.step(&step(&ep, &dists, t, Some(&rv)), &lambdas[t]).unwrap();
        }
        for i in 0..d {
            // the same trajectory with component i's rewards
            let percepts = ep
                .percepts
                .iter()
                .map(|p| Percept::new(p.reward_vector.as_ref().map_or(0.0, |v| v[i]), p.state.clone()))
                .collect();
            let epi = Episode::new(percepts, ep.actions.clone(), true).unwrap();
            let sched = LambdaSchedule((0..ep.len()).map(|t| lambdas[t][i]).collect());
            let g = offline_expected_lambda_returns(&epi, |_: &State, _| 0.0, &dists, &sched, 1.0).unwrap();
            let offline = lambda_return_q_ledger(&epi, |_: &State, _| 0.0, &g, alpha).unwrap();
            for t in 0..ep.len() {
                let (s, a) = (ep.state(t), ep.actions[t]);
                let online = l.tables.component_value(i, s, a) - before[i][&(s.clone(), a)];
                assert!((online - offline.get(&Sa(s.clone(), a))).abs() < 1e-12, "component {i}, t {t}");
            }
        }
    }
}

/// Both Sutton–Singh learners converge to the true state values of a
/// small layered MDP under the uniform policy.
#[test]
fn sutton_singh_learners_converge_to_policy_values() {
    let mut env = generate_acyclic_mdp(21, 4, 3, 2, 1.0).unwrap();
    let truth = env.policy_values(|_| vec![0.5, 0.5]);
    let mut td1n = TdOneOverN::<f64>::new();
    let mut tdc = Tdc::<f64>::new();
    let mut r = rng::stream(22, &[]);
    for _ in 0..20_000 {
        let ep: Episode<f64> = rollout_with(&mut env, &UniformPolicy, &mut r).unwrap();
        td1n.begin_episode();
        tdc.begin_episode();
        for t in 0..ep.len() {
            let done = t + 1 == ep.len();
            td1n.step(ep.state(t), ep.reward_after(t), ep.state(t + 1), done).unwrap();
            tdc.step(ep.state(t), ep.reward_after(t), ep.state(t + 1), done).unwrap();
        }
    }
    for (s, v) in &truth {
        if env.is_terminal(s) || td1n.state.visits_of(s) < 2000 {
            continue;
        }
        assert!((td1n.value(s) - v).abs() < 0.05, "TD(1/n) at {s:?}: {} vs {v}", td1n.value(s));
        assert!((tdc.value(s) - v).abs() < 0.05, "TDC at {s:?}: {} vs {v}", tdc.value(s));
    }
}

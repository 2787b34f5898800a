//! Per-episode metrics and analytic reference values.

use super::config::Exploration;
use crate::mdp::Action;

/// `ΔQ = Q(start, a1) - max_{a != a1} Q(start, a)` from the start-state row.
pub fn metric_delta_q(start_row: &[f64]) -> f64 {
    let best_other = start_row[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    start_row[0] - best_other
}

/// Episodes whose first action was not the optimal one (`a1`).
pub fn metric_regretful_choices(first_actions: &[Action]) -> usize {
    first_actions.iter().filter(|&&a| a != Action(0)).count()
}

/// Episodes that ended without the treasure.
pub fn metric_treasure_missed(collected: &[bool]) -> usize {
    collected.iter().filter(|&&c| !c).count()
}

/// Expected regretful choices of an agent that always ranks `a1` first but
/// explores ε-greedily over `actions` first actions.
pub fn regretful_floor(exploration: &Exploration, episodes: usize, actions: usize) -> f64 {
    let miss = (actions as f64 - 1.0) / actions as f64;
    (0..episodes).map(|e| exploration.epsilon(e) * miss).sum()
}

/// Expected missed treasures of an agent that always prefers "pick key" at
/// the start and "unlock door" at the door, under ε-greedy over two actions.
pub fn treasure_missed_floor(exploration: &Exploration, episodes: usize) -> f64 {
    (0..episodes)
        .map(|e| {
            let hit = 1.0 - exploration.epsilon(e) / 2.0;
            1.0 - hit * hit
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Phase;

    #[test]
    fn delta_q_examples() {
        let mut row = vec![0.0; 10];
        row[0] = 0.01;
        assert_eq!(metric_delta_q(&row), 0.01);
        assert_eq!(metric_delta_q(&[0.3; 4]), 0.0);
        let mut row = vec![0.0; 10];
        row[4] = 0.2;
        assert_eq!(metric_delta_q(&row), -0.2);
    }

    #[test]
    fn counting_metrics() {
        assert_eq!(metric_regretful_choices(&[Action(0), Action(1), Action(0)]), 1);
        assert_eq!(metric_regretful_choices(&[Action(0); 5]), 0);
        assert_eq!(metric_treasure_missed(&[true; 5000]), 0);
        assert_eq!(metric_treasure_missed(&[false; 5000]), 5000);
    }

    #[test]
    fn floors_from_schedules() {
        let e = Exploration::Phased { phases: vec![Phase { episodes: 1000, epsilon: 1.0 }], epsilon: 0.1 };
        assert!((regretful_floor(&e, 10_000, 2) - 950.0).abs() < 1e-9);
        let l = Exploration::Linear { start: 1.0, end: 0.1, episodes: 500 };
        let f = treasure_missed_floor(&l, 5000);
        // 4500 episodes at ε = 0.1 miss with probability 1 - 0.95^2.
        assert!(f > 4500.0 * 0.0975 && f < 4500.0 * 0.0975 + 500.0 * 0.75);
    }
}

//! Hedged predictions: the input-independent response distribution that
//! minimizes aggregate loss (or maximizes aggregate reward) over a set of
//! examples, plus a brute-force simplex-grid oracle used to audit the
//! closed forms.
//!
//! For summed cross-entropy the unique minimizer over the simplex is the
//! mean of the target distributions (the empirical answer marginal when
//! targets are hard labels). For expected reward the objective is linear
//! in the distribution, so an optimum sits on the vertex set of best
//! actions; ties are resolved uniformly and reported explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-slot target for long-form responses: claim a value or abstain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotTarget {
    Value(u16),
    Abstain,
}

/// Target-response supervision for supervised finetuning.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetResponse {
    /// A single answer token (multiple choice).
    Token(usize),
    /// A mixture target over answer tokens (used e.g. to initialize RL
    /// policies at "half abstain, half correct answer").
    Soft(Vec<f64>),
    /// A full fact list, one claim per slot.
    Facts(Vec<SlotTarget>),
}

/// Names a reward specification owned by the RL module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardHandle(pub String);

/// Supervision attached to an example: a target response for SFT, or a
/// reward-spec handle for RL finetuning.
#[derive(Clone, Debug, PartialEq)]
pub enum SupervisionSignal {
    Target(TargetResponse),
    Reward(RewardHandle),
}

/// An aggregate-optimal prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HedgedPrediction {
    pub dist: Vec<f64>,
    /// Aggregate loss (SFT) or mean expected reward (RL) at the optimum.
    pub objective_value: f64,
    /// Action indices achieving the optimum. Populated for reward hedges,
    /// where the optimum is a tie among vertices; empty for SFT hedges.
    pub tie_set: Vec<usize>,
}

/// Tolerance for detecting exact reward ties through float summation.
const TIE_EPS: f64 = 1e-9;
/// Guard on the brute-force simplex grid size.
const MAX_GRID_POINTS: u64 = 10_000_000;

fn entropy(p: &[f64]) -> f64 {
    p.iter().map(|&x| if x > 0.0 { -x * x.ln() } else { 0.0 }).sum()
}

/// Turn a target response into a distribution over `k` answer tokens.
/// Fact-list targets are rejected here; use [`hedge_sft_per_slot`].
fn target_dist(target: &TargetResponse, k: usize) -> Result<Vec<f64>> {
    match target {
        TargetResponse::Token(t) => {
            if *t >= k {
                return Err(Error::Mismatch(format!("target token {t} out of range for k={k}")));
            }
            let mut d = vec![0.0; k];
            d[*t] = 1.0;
            Ok(d)
        }
        TargetResponse::Soft(d) => {
            if d.len() != k {
                return Err(Error::Mismatch(format!(
                    "soft target has {} entries, head has {k}",
                    d.len()
                )));
            }
            Ok(d.clone())
        }
        TargetResponse::Facts(_) => Err(Error::Mismatch(
            "fact-list target in a token hedge; use hedge_sft_per_slot".into(),
        )),
    }
}

/// Aggregate cross-entropy minimizer over token targets: the mean of the
/// target distributions. `objective_value` is the summed loss at the
/// optimum, N times the entropy of the marginal for hard targets.
pub fn hedge_sft(targets: &[TargetResponse], k: usize) -> Result<HedgedPrediction> {
    if targets.is_empty() {
        return Err(Error::Empty("hedge_sft needs at least one example".into()));
    }
    let mut dist = vec![0.0; k];
    for t in targets {
        for (acc, x) in dist.iter_mut().zip(target_dist(t, k)?) {
            *acc += x;
        }
    }
    let n = targets.len() as f64;
    for x in &mut dist {
        *x /= n;
    }
    let objective_value = n * entropy(&dist);
    Ok(HedgedPrediction { dist, objective_value, tie_set: Vec::new() })
}

/// Per-slot hedge for fact-list targets. The factored per-slot policy makes
/// the aggregate loss separable, so each slot's hedge is computed
/// independently over `values_per_slot + 1` actions (abstain last).
pub fn hedge_sft_per_slot(
    targets: &[Vec<SlotTarget>],
    num_slots: usize,
    values_per_slot: usize,
) -> Result<Vec<HedgedPrediction>> {
    if targets.is_empty() {
        return Err(Error::Empty("hedge_sft_per_slot needs at least one example".into()));
    }
    let k = values_per_slot + 1;
    (0..num_slots)
        .map(|slot| {
            let tokens: Result<Vec<TargetResponse>> = targets
                .iter()
                .map(|facts| {
                    let st = facts.get(slot).ok_or_else(|| {
                        Error::Mismatch(format!("fact list shorter than slot {slot}"))
                    })?;
                    Ok(TargetResponse::Token(match st {
                        SlotTarget::Value(v) => *v as usize,
                        SlotTarget::Abstain => values_per_slot,
                    }))
                })
                .collect();
            hedge_sft(&tokens?, k)
        })
        .collect()
}

/// Aggregate reward maximizer. `rewards[i][a]` is the reward of action `a`
/// on example `i`; the hedge is uniform over the tie set of actions with
/// maximal mean reward.
pub fn hedge_rl(rewards: &[Vec<f64>]) -> Result<HedgedPrediction> {
    if rewards.is_empty() {
        return Err(Error::Empty("hedge_rl needs at least one example".into()));
    }
    let k = rewards[0].len();
    if rewards.iter().any(|r| r.len() != k) {
        return Err(Error::Mismatch("ragged reward matrix".into()));
    }
    let n = rewards.len() as f64;
    let mean: Vec<f64> = (0..k).map(|a| rewards.iter().map(|r| r[a]).sum::<f64>() / n).collect();
    let best = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tie_set: Vec<usize> =
        (0..k).filter(|&a| mean[a] >= best - TIE_EPS * (1.0 + best.abs())).collect();
    let mut dist = vec![0.0; k];
    for &a in &tie_set {
        dist[a] = 1.0 / tie_set.len() as f64;
    }
    let objective_value = dist.iter().zip(&mean).map(|(p, v)| p * v).sum();
    Ok(HedgedPrediction { dist, objective_value, tie_set })
}

/// Mean over examples of the expected reward of playing `dist`.
pub fn expected_reward(dist: &[f64], rewards: &[Vec<f64>]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("expected_reward needs at least one example".into()));
    }
    let mut total = 0.0;
    for r in rewards {
        if r.len() != dist.len() {
            return Err(Error::Mismatch(format!(
                "reward row has {} entries, dist has {}",
                r.len(),
                dist.len()
            )));
        }
        total += dist.iter().zip(r).map(|(p, x)| p * x).sum::<f64>();
    }
    Ok(total / rewards.len() as f64)
}

/// Objective handed to the brute-force oracle.
pub enum HedgeObjective<'a> {
    /// Minimize summed cross-entropy against token targets.
    SftCrossEntropy { targets: &'a [TargetResponse], k: usize },
    /// Maximize mean expected reward.
    RlReward { rewards: &'a [Vec<f64>] },
}

fn simplex_grid_points(steps: u64, k: usize) -> u64 {
    // C(steps + k - 1, k - 1), computed in u128 to survive the guard check
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..(k as u128 - 1) {
        num *= steps as u128 + i + 1;
        den *= i + 1;
    }
    (num / den).min(u64::MAX as u128) as u64
}

/// Exhaustive search over the simplex grid with spacing `grid_step`.
/// Independent of the closed forms above by construction; used to audit
/// them. Ties between grid points break toward the lexicographically
/// earlier point, so the result is deterministic under sharding.
pub fn brute_force_hedge(objective: &HedgeObjective, grid_step: f64) -> Result<HedgedPrediction> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::Config {
            field: "grid_step",
            reason: format!("must lie in (0, 0.5], got {grid_step}"),
        });
    }
    let (k, minimize) = match objective {
        HedgeObjective::SftCrossEntropy { targets, k } => {
            if targets.is_empty() {
                return Err(Error::Empty("brute_force_hedge needs examples".into()));
            }
            (*k, true)
        }
        HedgeObjective::RlReward { rewards } => {
            if rewards.is_empty() {
                return Err(Error::Empty("brute_force_hedge needs examples".into()));
            }
            (rewards[0].len(), false)
        }
    };
    let steps = (1.0 / grid_step).round() as u64;
    let points = simplex_grid_points(steps, k);
    if points > MAX_GRID_POINTS {
        return Err(Error::GridTooLarge { points, limit: MAX_GRID_POINTS });
    }

    // Soft counts for the CE objective: loss(P) = -sum_k c_k ln P_k.
    let soft_counts: Option<Vec<f64>> = match objective {
        HedgeObjective::SftCrossEntropy { targets, k } => {
            let mut c = vec![0.0; *k];
            for t in *targets {
                for (acc, x) in c.iter_mut().zip(target_dist(t, *k)?) {
                    *acc += x;
                }
            }
            Some(c)
        }
        HedgeObjective::RlReward { .. } => None,
    };

    let score = |p: &[f64]| -> Result<f64> {
        match objective {
            HedgeObjective::SftCrossEntropy { .. } => {
                let c = soft_counts.as_ref().unwrap();
                let mut loss = 0.0;
                for (ck, pk) in c.iter().zip(p) {
                    if *ck > 0.0 {
                        if *pk <= 0.0 {
                            return Ok(f64::INFINITY);
                        }
                        loss -= ck * pk.ln();
                    }
                }
                Ok(loss)
            }
            HedgeObjective::RlReward { rewards } => expected_reward(p, rewards),
        }
    };

    // Enumerate compositions of `steps` into k nonnegative parts in
    // lexicographic order; the first strictly better point wins, so ties
    // break toward the lexicographically earlier grid point.
    fn visit_compositions<E>(
        counts: &mut [u64],
        idx: usize,
        remaining: u64,
        visit: &mut impl FnMut(&[u64]) -> std::result::Result<(), E>,
    ) -> std::result::Result<(), E> {
        if idx == counts.len() - 1 {
            counts[idx] = remaining;
            return visit(counts);
        }
        for c in 0..=remaining {
            counts[idx] = c;
            visit_compositions(counts, idx + 1, remaining - c, visit)?;
        }
        Ok(())
    }

    let mut counts = vec![0u64; k];
    let mut best_point: Option<Vec<f64>> = None;
    let mut best_score = if minimize { f64::INFINITY } else { f64::NEG_INFINITY };
    visit_compositions(&mut counts, 0, steps, &mut |cs: &[u64]| -> Result<()> {
        let p: Vec<f64> = cs.iter().map(|&c| c as f64 / steps as f64).collect();
        let s = score(&p)?;
        let better = if minimize { s < best_score } else { s > best_score };
        if better {
            best_score = s;
            best_point = Some(p);
        }
        Ok(())
    })?;
    Ok(HedgedPrediction {
        dist: best_point.expect("grid enumerated at least one point"),
        objective_value: best_score,
        tie_set: Vec::new(),
    })
}

/// Total variation distance, ½·L1. Errors on length mismatch.
pub fn hedge_distance(dist_a: &[f64], dist_b: &[f64]) -> Result<f64> {
    if dist_a.len() != dist_b.len() {
        return Err(Error::Mismatch(format!(
            "distributions have lengths {} and {}",
            dist_a.len(),
            dist_b.len()
        )));
    }
    Ok(0.5 * dist_a.iter().zip(dist_b).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(ts: &[usize]) -> Vec<TargetResponse> {
        ts.iter().map(|&t| TargetResponse::Token(t)).collect()
    }

    /// Reward rows for a multiple-choice table over `k` tokens.
    fn mc_rewards(correct: &[usize], k: usize, r: (f64, f64, f64)) -> Vec<Vec<f64>> {
        correct
            .iter()
            .map(|&c| {
                (0..k)
                    .map(|a| {
                        if k == 5 && a == 4 {
                            r.2
                        } else if a == c {
                            r.0
                        } else {
                            r.1
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn sft_hedge_uniform_targets() {
        let h = hedge_sft(&tokens(&[0, 1, 2, 3]), 4).unwrap();
        for p in &h.dist {
            assert!((p - 0.25).abs() < 1e-12);
        }
        // aggregate loss at the optimum: N · H(uniform) = 4 ln 4
        assert!((h.objective_value - 4.0 * 4.0_f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn sft_hedge_half_b_half_c() {
        let h = hedge_sft(&tokens(&[1, 2, 1, 2]), 4).unwrap();
        assert_eq!(h.dist, vec![0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn sft_hedge_two_a_one_b() {
        let h = hedge_sft(&tokens(&[0, 0, 1]), 4).unwrap();
        assert!((h.dist[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((h.dist[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.dist[2], 0.0);
        // independent oracle: simplex grid search with step 0.01
        let oracle = brute_force_hedge(
            &HedgeObjective::SftCrossEntropy { targets: &tokens(&[0, 0, 1]), k: 4 },
            0.01,
        )
        .unwrap();
        assert!(hedge_distance(&h.dist, &oracle.dist).unwrap() <= 0.02);
    }

    #[test]
    fn sft_hedge_soft_targets_average() {
        let ts = vec![
            TargetResponse::Soft(vec![0.5, 0.5, 0.0, 0.0]),
            TargetResponse::Soft(vec![0.0, 0.0, 0.5, 0.5]),
        ];
        let h = hedge_sft(&ts, 4).unwrap();
        for p in &h.dist {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sft_hedge_rejects_empty_and_mixed() {
        assert!(matches!(hedge_sft(&[], 4), Err(Error::Empty(_))));
        let mixed = vec![
            TargetResponse::Token(0),
            TargetResponse::Facts(vec![SlotTarget::Abstain]),
        ];
        assert!(matches!(hedge_sft(&mixed, 4), Err(Error::Mismatch(_))));
    }

    #[test]
    fn sft_hedge_order_and_duplication_invariant() {
        let a = hedge_sft(&tokens(&[0, 1, 1, 3]), 4).unwrap();
        let b = hedge_sft(&tokens(&[3, 1, 0, 1]), 4).unwrap();
        assert_eq!(a.dist, b.dist);
        let doubled = hedge_sft(&tokens(&[0, 1, 1, 3, 0, 1, 1, 3]), 4).unwrap();
        for (x, y) in a.dist.iter().zip(&doubled.dist) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn per_slot_hedge_factors() {
        let targets = vec![
            vec![SlotTarget::Value(0), SlotTarget::Abstain],
            vec![SlotTarget::Value(0), SlotTarget::Value(3)],
        ];
        let hs = hedge_sft_per_slot(&targets, 2, 4).unwrap();
        assert_eq!(hs.len(), 2);
        assert_eq!(hs[0].dist[0], 1.0);
        assert!((hs[1].dist[4] - 0.5).abs() < 1e-12); // abstain index = 4
        assert!((hs[1].dist[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rl_hedge_rf1_guess_tie() {
        // +2 correct / −3 incorrect / −3 abstain, correct answers uniform:
        // every letter averages 0.25·2 + 0.75·(−3) = −1.75, abstain −3.
        let rewards = mc_rewards(&[0, 1, 2, 3], 5, (2.0, -3.0, -3.0));
        let h = hedge_rl(&rewards).unwrap();
        assert_eq!(h.tie_set, vec![0, 1, 2, 3]);
        assert!((h.objective_value + 1.75).abs() < 1e-12);
        let abstain = expected_reward(&[0.0, 0.0, 0.0, 0.0, 1.0], &rewards).unwrap();
        assert!((abstain + 3.0).abs() < 1e-12);
    }

    #[test]
    fn rl_hedge_rf2_abstains() {
        // +2 / −3 / 0: abstaining at 0 beats guessing at −1.75.
        let rewards = mc_rewards(&[0, 1, 2, 3], 5, (2.0, -3.0, 0.0));
        let h = hedge_rl(&rewards).unwrap();
        assert_eq!(h.tie_set, vec![4]);
        assert_eq!(h.dist, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((h.objective_value - 0.0).abs() < 1e-12);
    }

    #[test]
    fn rl_hedge_dominant_vertex() {
        let rewards = mc_rewards(&[1, 1, 1], 5, (2.0, -3.0, -3.0));
        let h = hedge_rl(&rewards).unwrap();
        assert_eq!(h.tie_set, vec![1]);
        assert!((h.objective_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rl_hedge_tie_set_affine_invariant() {
        let rewards = mc_rewards(&[0, 1, 2, 2], 5, (2.0, -3.0, -1.0));
        let base = hedge_rl(&rewards).unwrap();
        let scaled: Vec<Vec<f64>> = rewards
            .iter()
            .map(|r| r.iter().map(|x| 2.5 * x + 7.0).collect())
            .collect();
        let shifted = hedge_rl(&scaled).unwrap();
        assert_eq!(base.tie_set, shifted.tie_set);
    }

    #[test]
    fn expected_reward_matches_hand_values() {
        let rewards = mc_rewards(&[0, 1, 2, 3], 5, (2.0, -3.0, -3.0));
        let correct0 = expected_reward(&[1.0, 0.0, 0.0, 0.0, 0.0], &mc_rewards(&[0], 5, (2.0, -3.0, -3.0))).unwrap();
        assert!((correct0 - 2.0).abs() < 1e-12);
        let uniform = expected_reward(&[0.25, 0.25, 0.25, 0.25, 0.0], &rewards).unwrap();
        assert!((uniform + 1.75).abs() < 1e-12);
        let rf2 = mc_rewards(&[2], 5, (2.0, -3.0, 0.0));
        assert_eq!(expected_reward(&[0.0, 0.0, 0.0, 0.0, 1.0], &rf2).unwrap(), 0.0);
    }

    #[test]
    fn expected_reward_is_linear_in_dist() {
        let rewards = mc_rewards(&[0, 2, 3, 1, 1], 5, (2.0, -3.0, 0.0));
        let p = [0.1, 0.2, 0.3, 0.2, 0.2];
        let q = [0.4, 0.1, 0.1, 0.1, 0.3];
        for &alpha in &[0.0, 0.25, 0.5, 0.9, 1.0] {
            let mix: Vec<f64> =
                p.iter().zip(&q).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            let lhs = expected_reward(&mix, &rewards).unwrap();
            let rhs = alpha * expected_reward(&p, &rewards).unwrap()
                + (1.0 - alpha) * expected_reward(&q, &rewards).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_one_hot_target() {
        let h = brute_force_hedge(
            &HedgeObjective::SftCrossEntropy { targets: &tokens(&[2]), k: 4 },
            0.05,
        )
        .unwrap();
        assert_eq!(h.dist, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn brute_force_matches_rl_closed_form() {
        let rewards = mc_rewards(&[0, 1, 2, 3], 5, (2.0, -3.0, 0.0));
        let exact = hedge_rl(&rewards).unwrap();
        let grid =
            brute_force_hedge(&HedgeObjective::RlReward { rewards: &rewards }, 0.01).unwrap();
        assert!((grid.objective_value - exact.objective_value).abs() <= 0.01 * 3.0);
    }

    #[test]
    fn brute_force_grid_guard() {
        let rewards = mc_rewards(&[0], 5, (2.0, -3.0, 0.0));
        let err =
            brute_force_hedge(&HedgeObjective::RlReward { rewards: &rewards }, 0.001).unwrap_err();
        assert!(matches!(err, Error::GridTooLarge { .. }));
    }

    #[test]
    fn hedge_distance_hand_values() {
        assert_eq!(hedge_distance(&[0.25; 4], &[0.25; 4]).unwrap(), 0.0);
        assert_eq!(
            hedge_distance(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(),
            1.0
        );
        // ½(0.25+0.25+0.25+0.25) = 0.5
        let d = hedge_distance(&[0.5, 0.5, 0.0, 0.0], &[0.25; 4]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert!(hedge_distance(&[0.5, 0.5], &[1.0]).is_err());
    }
}

//! Synthetic multi-reward gridworld: ground truth for end-to-end checks.
//!
//! A small deterministic MDP with one reward field per signal, an exact
//! value-iteration solver for any weight vector, and trajectory generation
//! from the weighted-optimal policy with an ε-random noise rate. Generated
//! sets use the canonical trajectory model, so the rest of the pipeline is
//! oblivious to their synthetic origin.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::collections::{BTreeMap, BTreeSet};

use crate::schema::{CategoricalFeature, FeatureSchema, StateKey, StateKeySpec, StateVector};
use crate::trajectory::{FeasibleActionMap, Transition, TrajectorySet};

pub const N_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "down", "left", "right", "stay"];

/// Relative tolerance for calling two action values tied.
const TIE_EPS: f64 = 1e-9;

/// A rectangular block of rewarding cells for one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    /// Per-step reward inside the region.
    pub reward: f64,
    /// Per-step cost everywhere else (stored non-negative, applied negated).
    pub background_cost: f64,
}

impl RegionSpec {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// One stretch of the regime schedule: from `t_start` (inclusive) onward,
/// behavior follows `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub t_start: i64,
    pub weights: Vec<f64>,
}

/// The gridworld definition: geometry, discount, horizon, and one reward
/// field per signal, indexed `[cell][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub gamma: f64,
    pub episode_length: usize,
    pub fields: Vec<Vec<[f64; N_ACTIONS]>>,
}

impl GridSpec {
    /// Builds a grid where each signal rewards a rectangular region and
    /// costs a small constant everywhere else, uniformly over actions.
    pub fn with_regions(
        width: usize,
        height: usize,
        gamma: f64,
        episode_length: usize,
        regions: &[RegionSpec],
    ) -> Self {
        let n_cells = width * height;
        let fields = regions
            .iter()
            .map(|region| {
                (0..n_cells)
                    .map(|cell| {
                        let (x, y) = (cell % width, cell / width);
                        let value = if region.contains(x, y) {
                            region.reward
                        } else {
                            -region.background_cost
                        };
                        [value; N_ACTIONS]
                    })
                    .collect()
            })
            .collect();
        Self {
            width,
            height,
            gamma,
            episode_length,
            fields,
        }
    }

    /// The 8x8, three-signal verification grid: disjoint rewarding corners,
    /// gamma 0.95, 40-step episodes.
    pub fn default_verification() -> Self {
        Self::with_regions(8, 8, 0.95, 40, &Self::default_regions())
    }

    pub fn default_regions() -> Vec<RegionSpec> {
        vec![
            RegionSpec { x0: 0, y0: 0, x1: 1, y1: 1, reward: 1.0, background_cost: 0.05 },
            RegionSpec { x0: 6, y0: 0, x1: 7, y1: 1, reward: 1.0, background_cost: 0.05 },
            RegionSpec { x0: 0, y0: 6, x1: 1, y1: 7, reward: 1.0, background_cost: 0.05 },
        ]
    }

    pub fn n_signals(&self) -> usize {
        self.fields.len()
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_at(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    /// Border-masked moves plus stay.
    pub fn feasible(&self, cell: usize) -> Vec<usize> {
        let (x, y) = self.coords(cell);
        let mut actions = Vec::with_capacity(N_ACTIONS);
        if y > 0 {
            actions.push(0);
        }
        if y + 1 < self.height {
            actions.push(1);
        }
        if x > 0 {
            actions.push(2);
        }
        if x + 1 < self.width {
            actions.push(3);
        }
        actions.push(4);
        actions
    }

    /// Deterministic successor cell.
    pub fn step(&self, cell: usize, action: usize) -> usize {
        let (x, y) = self.coords(cell);
        let (nx, ny) = match action {
            0 => (x, y.saturating_sub(1)),
            1 => (x, (y + 1).min(self.height - 1)),
            2 => (x.saturating_sub(1), y),
            3 => ((x + 1).min(self.width - 1), y),
            4 => (x, y),
            _ => unreachable!("action id out of range"),
        };
        self.cell_at(nx, ny)
    }

    pub fn reward(&self, signal: usize, cell: usize, action: usize) -> f64 {
        self.fields[signal][cell][action]
    }

    pub fn combined_reward(&self, weights: &[f64], cell: usize, action: usize) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.reward(i, cell, action))
            .sum()
    }

    /// Feature schema for generated sets: the cell as a categorical feature
    /// plus raw x/y coordinates as numeric features.
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(
            vec![CategoricalFeature {
                name: "cell".into(),
                vocab: (0..self.n_cells()).map(|c| format!("c{c}")).collect(),
            }],
            vec!["x".into(), "y".into()],
            ACTION_NAMES.iter().map(|s| s.to_string()).collect(),
            (0..self.n_signals()).map(|i| format!("signal{i}")).collect(),
        )
    }

    /// State-key spec matching [`Self::schema`]: the full state (the cell).
    pub fn state_key_spec(&self) -> StateKeySpec {
        StateKeySpec {
            categorical: vec!["cell".into()],
            numeric_brackets: vec![],
        }
    }

    /// The declared feasible-action map for this geometry.
    pub fn feasible_action_map(&self) -> FeasibleActionMap {
        let mut map: BTreeMap<StateKey, BTreeSet<u32>> = BTreeMap::new();
        for cell in 0..self.n_cells() {
            map.insert(
                StateKey(vec![cell as i64]),
                self.feasible(cell).into_iter().map(|a| a as u32).collect(),
            );
        }
        FeasibleActionMap::from_map(map)
    }

    fn state_vector(&self, cell: usize, timestamp: i64) -> StateVector {
        let (x, y) = self.coords(cell);
        StateVector::new(vec![cell as u32], vec![x as f64, y as f64], timestamp)
    }
}

/// Exact solution for one weight vector: optimal combined values, per-signal
/// values under the combined-optimal behavior, the greedy policy, and which
/// cells have a non-unique argmax.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub weights: Vec<f64>,
    /// `[cell][action]`; infeasible entries are -inf.
    pub q_combined: Vec<[f64; N_ACTIONS]>,
    /// `[signal][cell][action]` under the uniform-over-argmax behavior policy.
    pub q_per_signal: Vec<Vec<[f64; N_ACTIONS]>>,
    /// Lowest-id optimal action per cell.
    pub policy: Vec<usize>,
    pub tie_mask: Vec<bool>,
}

impl OracleSolution {
    /// Actions within tie tolerance of the best, sorted by id.
    pub fn argmax_set(&self, cell: usize) -> Vec<usize> {
        argmax_set(&self.q_combined[cell])
    }

    /// Sup-norm Bellman optimality residual of `q_combined` over feasible
    /// pairs; the solver drives this below 1e-9.
    pub fn bellman_residual(&self, grid: &GridSpec) -> f64 {
        let mut worst = 0.0f64;
        for cell in 0..grid.n_cells() {
            for &action in &grid.feasible(cell) {
                let next = grid.step(cell, action);
                let target = grid.combined_reward(&self.weights, cell, action)
                    + grid.gamma * max_feasible(&self.q_combined[next]);
                worst = worst.max((self.q_combined[cell][action] - target).abs());
            }
        }
        worst
    }
}

fn max_feasible(values: &[f64; N_ACTIONS]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn argmax_set(values: &[f64; N_ACTIONS]) -> Vec<usize> {
    let best = max_feasible(values);
    let tol = TIE_EPS * best.abs().max(1.0);
    (0..N_ACTIONS)
        .filter(|&a| values[a].is_finite() && (best - values[a]) <= tol)
        .collect()
}

/// Solves the grid exactly for one weight vector.
///
/// Value iteration runs to a sup-norm change below 1e-13, then per-signal
/// tables are computed by policy evaluation of each field under the
/// uniform-over-argmax behavior policy.
pub fn value_iteration(grid: &GridSpec, weights: &[f64]) -> OracleSolution {
    assert_eq!(weights.len(), grid.n_signals(), "weight/signal count mismatch");
    assert!(grid.gamma < 1.0, "discount must be < 1");

    let n_cells = grid.n_cells();
    let feasible: Vec<Vec<usize>> = (0..n_cells).map(|c| grid.feasible(c)).collect();

    let mut values = vec![0.0f64; n_cells];
    loop {
        let mut delta = 0.0f64;
        let mut next_values = vec![0.0f64; n_cells];
        for cell in 0..n_cells {
            let mut best = f64::NEG_INFINITY;
            for &action in &feasible[cell] {
                let q = grid.combined_reward(weights, cell, action)
                    + grid.gamma * values[grid.step(cell, action)];
                best = best.max(q);
            }
            next_values[cell] = best;
            delta = delta.max((best - values[cell]).abs());
        }
        values = next_values;
        if delta < 1e-13 {
            break;
        }
    }

    let mut q_combined = vec![[f64::NEG_INFINITY; N_ACTIONS]; n_cells];
    for cell in 0..n_cells {
        for &action in &feasible[cell] {
            q_combined[cell][action] = grid.combined_reward(weights, cell, action)
                + grid.gamma * values[grid.step(cell, action)];
        }
    }

    let mut policy = vec![0usize; n_cells];
    let mut tie_mask = vec![false; n_cells];
    let mut behavior: Vec<Vec<usize>> = Vec::with_capacity(n_cells);
    for cell in 0..n_cells {
        let set = argmax_set(&q_combined[cell]);
        policy[cell] = set[0];
        tie_mask[cell] = set.len() > 1;
        behavior.push(set);
    }

    let q_per_signal = (0..grid.n_signals())
        .map(|signal| evaluate_uniform_policy(grid, &behavior, signal))
        .collect();

    OracleSolution {
        weights: weights.to_vec(),
        q_combined,
        q_per_signal,
        policy,
        tie_mask,
    }
}

/// Q-values of one signal's field under a stochastic policy that mixes
/// uniformly over the given action sets.
fn evaluate_uniform_policy(
    grid: &GridSpec,
    behavior: &[Vec<usize>],
    signal: usize,
) -> Vec<[f64; N_ACTIONS]> {
    let n_cells = grid.n_cells();
    let mut values = vec![0.0f64; n_cells];
    loop {
        let mut delta = 0.0f64;
        let mut next_values = vec![0.0f64; n_cells];
        for cell in 0..n_cells {
            let actions = &behavior[cell];
            let mut value = 0.0;
            for &action in actions {
                value += grid.reward(signal, cell, action)
                    + grid.gamma * values[grid.step(cell, action)];
            }
            value /= actions.len() as f64;
            next_values[cell] = value;
            delta = delta.max((value - values[cell]).abs());
        }
        values = next_values;
        if delta < 1e-13 {
            break;
        }
    }
    let feasible: Vec<Vec<usize>> = (0..n_cells).map(|c| grid.feasible(c)).collect();
    let mut table = vec![[f64::NEG_INFINITY; N_ACTIONS]; n_cells];
    for cell in 0..n_cells {
        for &action in &feasible[cell] {
            table[cell][action] = grid.reward(signal, cell, action)
                + grid.gamma * values[grid.step(cell, action)];
        }
    }
    table
}

/// Q-values of a reward (one signal or a weighted combination) under a fixed
/// deterministic policy. The testable core of linear scalarization.
pub fn policy_evaluation(
    grid: &GridSpec,
    policy: &[usize],
    weights: &[f64],
) -> Vec<[f64; N_ACTIONS]> {
    assert_eq!(policy.len(), grid.n_cells());
    let n_cells = grid.n_cells();
    let mut values = vec![0.0f64; n_cells];
    loop {
        let mut delta = 0.0f64;
        let mut next_values = vec![0.0f64; n_cells];
        for cell in 0..n_cells {
            let action = policy[cell];
            let value = grid.combined_reward(weights, cell, action)
                + grid.gamma * values[grid.step(cell, action)];
            next_values[cell] = value;
            delta = delta.max((value - values[cell]).abs());
        }
        values = next_values;
        if delta < 1e-13 {
            break;
        }
    }
    let mut table = vec![[f64::NEG_INFINITY; N_ACTIONS]; n_cells];
    for cell in 0..n_cells {
        for &action in &grid.feasible(cell) {
            table[cell][action] = grid.combined_reward(weights, cell, action)
                + grid.gamma * values[grid.step(cell, action)];
        }
    }
    table
}

/// Rolls out episodes under the schedule's weighted-optimal policies.
///
/// Each step deviates to a uniformly random feasible action with probability
/// `noise`; otherwise it samples uniformly from the optimal-action set of the
/// regime active at that step. Signal columns carry the true per-signal
/// rewards. Timestamps are global step indices, so the regime schedule is
/// visible to windowed analyses. One agent per episode; episode seeds derive
/// from `seed + episode index`.
pub fn generate_trajectories(
    grid: &GridSpec,
    schedule: &[Regime],
    episodes: usize,
    noise: f64,
    seed: u64,
) -> TrajectorySet {
    assert!(!schedule.is_empty(), "schedule needs at least one regime");
    assert!((0.0..=1.0).contains(&noise), "noise must be in [0, 1]");
    for regime in schedule {
        assert_eq!(regime.weights.len(), grid.n_signals());
    }

    let oracles: Vec<OracleSolution> = schedule
        .iter()
        .map(|r| value_iteration(grid, &r.weights))
        .collect();
    let regime_at = |t: i64| -> usize {
        let mut active = 0;
        for (i, regime) in schedule.iter().enumerate() {
            if regime.t_start <= t {
                active = i;
            }
        }
        active
    };

    let episode_length = grid.episode_length;
    let mut transitions = Vec::with_capacity(episodes * episode_length);
    for episode in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(episode as u64));
        let mut cell = rng.gen_range(0..grid.n_cells());
        let agent = format!("ep-{episode:05}");
        for step in 0..episode_length {
            let t = (episode * episode_length + step) as i64;
            let oracle = &oracles[regime_at(t)];
            let feasible = grid.feasible(cell);
            let action = if rng.gen_bool(noise) {
                feasible[rng.gen_range(0..feasible.len())]
            } else {
                let set = oracle.argmax_set(cell);
                set[rng.gen_range(0..set.len())]
            };
            let next = grid.step(cell, action);
            let signals = (0..grid.n_signals())
                .map(|i| grid.reward(i, cell, action))
                .collect();
            transitions.push(Transition {
                agent: agent.clone(),
                state: grid.state_vector(cell, t),
                action: action as u32,
                next_state: Some(grid.state_vector(next, t + 1)),
                signals,
            });
            cell = next;
        }
    }

    TrajectorySet::new(grid.schema(), transitions).expect("generated set validates")
}

/// Outcome of the randomized-spec generator: the accepted spec plus how many
/// candidates the identifiability guard rejected.
#[derive(Debug, Clone)]
pub struct RandomSpecOutcome {
    pub grid: GridSpec,
    pub rejected: usize,
}

/// Draws a random verification grid: three disjoint rewarding rectangles
/// with jittered rewards and costs. Candidates where two signals induce
/// near-identical single-signal optimal policies are rejected (the weights
/// between such signals would be unidentifiable).
pub fn random_spec(seed: u64) -> RandomSpecOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    loop {
        let corners = [(0usize, 0usize), (6, 0), (0, 6), (6, 6)];
        let mut picks: Vec<(usize, usize)> = Vec::new();
        while picks.len() < 3 {
            let c = corners[rng.gen_range(0..corners.len())];
            if !picks.contains(&c) {
                picks.push(c);
            }
        }
        let regions: Vec<RegionSpec> = picks
            .iter()
            .map(|&(x0, y0)| RegionSpec {
                x0,
                y0,
                x1: x0 + 1,
                y1: y0 + 1,
                reward: rng.gen_range(0.8..1.2),
                background_cost: rng.gen_range(0.03..0.08),
            })
            .collect();
        let grid = GridSpec::with_regions(8, 8, 0.95, 40, &regions);
        if distinct_single_signal_policies(&grid) {
            return RandomSpecOutcome { grid, rejected };
        }
        rejected += 1;
    }
}

/// True when every pair of signals disagrees on the greedy action for a
/// meaningful fraction of unambiguous cells.
fn distinct_single_signal_policies(grid: &GridSpec) -> bool {
    let n = grid.n_signals();
    let oracles: Vec<OracleSolution> = (0..n)
        .map(|i| {
            let mut weights = vec![0.0; n];
            weights[i] = 1.0;
            value_iteration(grid, &weights)
        })
        .collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut compared = 0usize;
            let mut differing = 0usize;
            for cell in 0..grid.n_cells() {
                if oracles[i].tie_mask[cell] || oracles[j].tie_mask[cell] {
                    continue;
                }
                compared += 1;
                if oracles[i].policy[cell] != oracles[j].policy[cell] {
                    differing += 1;
                }
            }
            if compared == 0 || (differing as f64) < 0.1 * (compared as f64) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_rewards_give_zero_q_and_full_tie_mask() {
        let grid = GridSpec {
            width: 3,
            height: 3,
            gamma: 0.9,
            episode_length: 5,
            fields: vec![vec![[0.0; N_ACTIONS]; 9]],
        };
        let oracle = value_iteration(&grid, &[1.0]);
        for cell in 0..9 {
            assert!(oracle.tie_mask[cell]);
            for &action in &grid.feasible(cell) {
                assert!(oracle.q_combined[cell][action].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_absorbing_reward_decays_geometrically_with_distance() {
        // 3x3 grid, reward 1 for staying put in the corner cell (0,0),
        // nothing anywhere else. V(s) = gamma^d / (1 - gamma) at distance d.
        let mut fields = vec![vec![[0.0; N_ACTIONS]; 9]];
        fields[0][0][4] = 1.0;
        let grid = GridSpec {
            width: 3,
            height: 3,
            gamma: 0.9,
            episode_length: 5,
            fields,
        };
        let oracle = value_iteration(&grid, &[1.0]);
        let expect = |d: i32| 0.9f64.powi(d) / (1.0 - 0.9);
        for cell in 0..9 {
            let (x, y) = grid.coords(cell);
            let d = (x + y) as i32;
            let v = max_feasible(&oracle.q_combined[cell]);
            assert!(
                (v - expect(d)).abs() < 1e-9,
                "cell ({x},{y}): v = {v}, expected {}",
                expect(d)
            );
        }
        assert!(oracle.bellman_residual(&grid) < 1e-9);
    }

    #[test]
    fn degenerate_weights_reduce_to_single_signal() {
        let grid = GridSpec::default_verification();
        let oracle = value_iteration(&grid, &[1.0, 0.0, 0.0]);
        let single = value_iteration(
            &GridSpec {
                fields: vec![grid.fields[0].clone()],
                ..grid.clone()
            },
            &[1.0],
        );
        for cell in 0..grid.n_cells() {
            for action in 0..N_ACTIONS {
                let a = oracle.q_combined[cell][action];
                let b = single.q_combined[cell][action];
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_zero_actions_are_always_oracle_optimal() {
        let grid = GridSpec::default_verification();
        let weights = vec![0.5, 0.3, 0.2];
        let oracle = value_iteration(&grid, &weights);
        let ts = generate_trajectories(
            &grid,
            &[Regime { t_start: 0, weights }],
            20,
            0.0,
            7,
        );
        for t in ts.transitions() {
            let cell = t.state.categorical[0] as usize;
            assert!(oracle.argmax_set(cell).contains(&(t.action as usize)));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let grid = GridSpec::default_verification();
        let schedule = [Regime {
            t_start: 0,
            weights: vec![0.4, 0.35, 0.25],
        }];
        let a = generate_trajectories(&grid, &schedule, 10, 0.2, 99);
        let b = generate_trajectories(&grid, &schedule, 10, 0.2, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn full_noise_is_uniform_over_feasible() {
        // Chi-square per cell against the uniform distribution over its
        // feasible set; fixed seed, generous critical value.
        let grid = GridSpec::default_verification();
        let ts = generate_trajectories(
            &grid,
            &[Regime {
                t_start: 0,
                weights: vec![1.0 / 3.0; 3],
            }],
            400,
            1.0,
            3,
        );
        let mut counts: BTreeMap<usize, [u64; N_ACTIONS]> = BTreeMap::new();
        for t in ts.transitions() {
            counts.entry(t.state.categorical[0] as usize).or_default()
                [t.action as usize] += 1;
        }
        for (cell, histogram) in counts {
            let feasible = grid.feasible(cell);
            let total: u64 = histogram.iter().sum();
            if total < 100 {
                continue;
            }
            let expected = total as f64 / feasible.len() as f64;
            let mut stat = 0.0;
            for &action in &feasible {
                let observed = histogram[action] as f64;
                stat += (observed - expected).powi(2) / expected;
            }
            // chi-square 0.9999 quantile, df = 4, is 23.5; df = 2 is 18.4.
            assert!(stat < 23.5, "cell {cell}: chi-square {stat} too large");
            for action in 0..N_ACTIONS {
                if !feasible.contains(&action) {
                    assert_eq!(histogram[action], 0);
                }
            }
        }
    }

    #[test]
    fn regime_switch_changes_behavior_mid_horizon() {
        let grid = GridSpec::default_verification();
        let phi_a = vec![0.8, 0.1, 0.1];
        let phi_b = vec![0.1, 0.1, 0.8];
        let episodes = 100;
        let switch = (episodes * grid.episode_length / 2) as i64;
        let ts = generate_trajectories(
            &grid,
            &[
                Regime { t_start: 0, weights: phi_a.clone() },
                Regime { t_start: switch, weights: phi_b.clone() },
            ],
            episodes,
            0.0,
            11,
        );
        let oracle_a = value_iteration(&grid, &phi_a);
        let oracle_b = value_iteration(&grid, &phi_b);
        let (mut first_ok, mut first_n, mut second_ok, mut second_n) = (0, 0, 0, 0);
        for t in ts.transitions() {
            let cell = t.state.categorical[0] as usize;
            let action = t.action as usize;
            if t.timestamp() < switch {
                first_n += 1;
                first_ok += oracle_a.argmax_set(cell).contains(&action) as u64;
            } else {
                second_n += 1;
                second_ok += oracle_b.argmax_set(cell).contains(&action) as u64;
            }
        }
        assert_eq!(first_ok, first_n);
        assert_eq!(second_ok, second_n);
    }

    #[test]
    fn random_specs_pass_identifiability_guard() {
        for seed in 0..5 {
            let outcome = random_spec(seed);
            assert!(distinct_single_signal_policies(&outcome.grid));
        }
    }
}

//! Generation training: independent learners, each optimising its own
//! composed reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{legal_macro_actions, AgentId, DEFAULT_MAX_STEPS, NUM_AGENTS};
use crate::episode::{run_episode, EpisodeOptions, EpisodeOutcome};
use crate::learner::Learner;
use crate::pool::RewardPool;
use crate::rollout::EnvSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub iterations: u32,
    pub episodes: u32,
    pub max_steps: u32,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Iterations, counted across generations, over which ε decays linearly.
    pub epsilon_decay_iterations: u64,
}

impl Default for GenerationConfig {
    fn default() -> GenerationConfig {
        GenerationConfig {
            iterations: 200,
            episodes: 25,
            max_steps: DEFAULT_MAX_STEPS,
            gamma: 0.99,
            epsilon_start: 0.3,
            epsilon_end: 0.05,
            epsilon_decay_iterations: 1000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("gamma {0} outside [0, 1)")]
    Gamma(f64),
    #[error("epsilon {0} outside [0, 1]")]
    Epsilon(f64),
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 {
            return Err(ConfigError::NotPositive("iterations"));
        }
        if self.episodes == 0 {
            return Err(ConfigError::NotPositive("episodes"));
        }
        if self.max_steps == 0 || self.max_steps > DEFAULT_MAX_STEPS {
            return Err(ConfigError::NotPositive("max_steps (at most 200)"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ConfigError::Gamma(self.gamma));
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return Err(ConfigError::Epsilon(e));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, global_iteration: u64) -> f64 {
        if self.epsilon_decay_iterations == 0 {
            return self.epsilon_end;
        }
        if global_iteration >= self.epsilon_decay_iterations {
            return self.epsilon_end;
        }
        let f = global_iteration as f64 / self.epsilon_decay_iterations as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Policies of all agents after some number of generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot<P> {
    pub generation: u32,
    pub iterations: u64,
    pub policies: Vec<P>,
}

impl<P> PolicySnapshot<P> {
    pub fn initial<L: Learner<Policy = P>>(learner: &L, env: &EnvSpec) -> PolicySnapshot<P> {
        let legal = legal_macro_actions(env.layout.id);
        PolicySnapshot {
            generation: 0,
            iterations: 0,
            policies: AgentId::all().map(|a| learner.init(a, &legal)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub generation: u32,
    pub iteration: u32,
    pub epsilon: f64,
    pub mean_composed_return: f64,
    pub mean_original_return: f64,
    pub mean_length: f64,
    pub mean_chops: f64,
    pub deliveries: u32,
    /// Pool weights of agents 1..=3 during the iteration.
    pub weights: Vec<Vec<f64>>,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str = "generation,iteration,epsilon,mean_composed_return,mean_original_return,mean_length,mean_chops,deliveries,weights_agent1,weights_agent2,weights_agent3";

    pub fn csv_row(&self) -> String {
        let w: Vec<String> = self
            .weights
            .iter()
            .map(|ws| ws.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";"))
            .collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.generation,
            self.iteration,
            self.epsilon,
            self.mean_composed_return,
            self.mean_original_return,
            self.mean_length,
            self.mean_chops,
            self.deliveries,
            w.join(",")
        )
    }
}

/// SplitMix64 over the parts, so per-episode streams are independent of
/// scheduling order.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Train one generation and return the next snapshot with its metrics.
/// `on_iteration` sees each iteration's metrics as they are produced.
pub fn train_generation<L: Learner>(
    learner: &L,
    snapshot: &PolicySnapshot<L::Policy>,
    pools: &[RewardPool],
    cfg: &GenerationConfig,
    env: &EnvSpec,
    seed: u64,
    on_iteration: &mut dyn FnMut(&IterationMetrics),
) -> (PolicySnapshot<L::Policy>, Vec<IterationMetrics>) {
    assert_eq!(pools.len(), NUM_AGENTS);
    let k = snapshot.generation;
    let weights: Vec<Vec<f64>> = pools.iter().map(RewardPool::weights).collect();
    let mut policies = snapshot.policies.clone();
    let mut metrics = Vec::with_capacity(cfg.iterations as usize);
    for it in 0..cfg.iterations {
        let global = snapshot.iterations + u64::from(it);
        let eps = cfg.epsilon(global);
        let outcomes: Vec<EpisodeOutcome> = (0..cfg.episodes)
            .into_par_iter()
            .map(|ep| {
                let s = derive_seed(&[seed, u64::from(k), u64::from(it), u64::from(ep)]);
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut kitchen = env.kitchen(s).with_max_steps(cfg.max_steps.min(env.max_steps));
                run_episode(
                    learner,
                    &policies,
                    &mut kitchen,
                    Some(pools),
                    &mut rng,
                    EpisodeOptions { explore: Some(eps), gamma: cfg.gamma, record: false, learn: true },
                )
            })
            .collect();
        let update_seed = derive_seed(&[seed, u64::from(k), u64::from(it), u64::MAX]);
        policies = (0..NUM_AGENTS)
            .into_par_iter()
            .map(|i| {
                let batch: Vec<_> = outcomes.iter().flat_map(|o| o.transitions[i].iter().cloned()).collect();
                learner.improve(&policies[i], &batch, derive_seed(&[update_seed, i as u64]))
            })
            .collect();
        let n = outcomes.len() as f64;
        let m = IterationMetrics {
            generation: k,
            iteration: it,
            epsilon: eps,
            mean_composed_return: outcomes.iter().map(|o| o.composed_return.iter().sum::<f64>()).sum::<f64>()
                / (n * NUM_AGENTS as f64),
            mean_original_return: outcomes.iter().map(|o| o.original_return).sum::<f64>() / n,
            mean_length: outcomes.iter().map(|o| f64::from(o.length)).sum::<f64>() / n,
            mean_chops: outcomes.iter().map(|o| f64::from(o.chops)).sum::<f64>() / n,
            deliveries: outcomes.iter().map(|o| o.correct).sum(),
            weights: weights.clone(),
        };
        on_iteration(&m);
        metrics.push(m);
    }
    let next = PolicySnapshot {
        generation: k + 1,
        iterations: snapshot.iterations + u64::from(cfg.iterations),
        policies,
    };
    (next, metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule() {
        let c = GenerationConfig { epsilon_start: 0.5, epsilon_end: 0.1, epsilon_decay_iterations: 4, ..Default::default() };
        assert_eq!(c.epsilon(0), 0.5);
        assert!((c.epsilon(2) - 0.3).abs() < 1e-15);
        assert_eq!(c.epsilon(4), 0.1);
        assert_eq!(c.epsilon(40), 0.1);
    }

    #[test]
    fn seeds_differ_by_part() {
        let a = derive_seed(&[1, 0, 0, 0]);
        assert_ne!(a, derive_seed(&[1, 0, 0, 1]));
        assert_ne!(a, derive_seed(&[2, 0, 0, 0]));
        assert_eq!(a, derive_seed(&[1, 0, 0, 0]));
    }

    #[test]
    fn validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        assert!(GenerationConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(GenerationConfig { episodes: 0, ..Default::default() }.validate().is_err());
    }
}

//! Independent per-agent learners.
//!
//! The default learner is a linear softmax actor with a linear action-value
//! critic, trained on macro-action transitions: each transition carries the
//! discounted reward accumulated while the macro ran and the discount
//! `γ^k` for its duration `k`. The critic is fitted by semi-gradient TD(0)
//! with normalised steps; the actor follows the all-actions policy gradient
//! of the fitted critic.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, MacroAction, Observation, GRID_SIZE, OBS_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: MacroAction,
    /// Discounted reward summed over the macro's ticks.
    pub reward: f64,
    /// `γ^k` where `k` is the macro's duration in ticks.
    pub discount: f64,
    pub next_obs: Observation,
    pub terminal: bool,
}

pub trait Learner: Send + Sync {
    type Policy: Clone + std::fmt::Debug + PartialEq + Send + Sync + Serialize + DeserializeOwned;

    fn init(&self, agent: AgentId, legal: &[MacroAction]) -> Self::Policy;

    /// Sample an action; `explore = Some(ε)` mixes in uniform exploration,
    /// `None` picks the highest-scoring action.
    fn act(&self, policy: &Self::Policy, obs: &Observation, explore: Option<f64>, rng: &mut dyn RngCore) -> MacroAction;

    fn improve(&self, policy: &Self::Policy, batch: &[Transition], seed: u64) -> Self::Policy;
}

/// Which observation features the linear models see.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// The 32 observation entries plus a bias.
    Raw,
    /// `Raw` plus agent-relative distances and contact indicators computed
    /// from the same observation.
    #[default]
    Relational,
}

const ENTITY_POS: [usize; 11] = [0, 3, 6, 9, 11, 13, 15, 17, 19, 21, 23];
const VEG: [usize; 3] = [0, 3, 6];
const PLATES: [usize; 2] = [9, 11];
const BOARDS: [usize; 2] = [13, 15];
const DELIVERY: usize = 17;

impl FeatureSet {
    pub fn len(self) -> usize {
        match self {
            FeatureSet::Raw => OBS_LEN + 1,
            FeatureSet::Relational => OBS_LEN + 1 + 10 + 5 + 3 + 3 + 3 + 3 + 2 + 2 + 2,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn compute(self, agent: AgentId, obs: &Observation, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(obs.as_slice());
        out.push(1.0);
        if self == FeatureSet::Raw {
            return;
        }
        let me = 19 + 2 * agent.index();
        let d = |a: usize, b: usize| {
            let dr = obs[a] - obs[b];
            let dc = obs[a + 1] - obs[b + 1];
            (dr * dr + dc * dc).sqrt()
        };
        let at = |a: usize, b: usize| d(a, b) < 1e-9;
        let ind = |x: bool| f64::from(u8::from(x));
        for &e in ENTITY_POS.iter().filter(|&&e| e != me) {
            out.push(d(me, e));
        }
        for &i in VEG.iter().chain(&PLATES) {
            out.push(ind(at(me, i)));
        }
        for &v in &VEG {
            out.push(ind(BOARDS.iter().any(|&b| at(v, b))));
        }
        for &v in &VEG {
            out.push(ind(PLATES.iter().any(|&p| at(v, p))));
        }
        for &v in &VEG {
            out.push(f64::from(u8::from(obs[v + 2] >= 1.0 - 1e-9)));
        }
        for &v in &VEG {
            out.push(d(v, DELIVERY));
        }
        let step = 1.0 / (GRID_SIZE - 1) as f64;
        let unchopped = |v: usize| obs[v + 2] < 1.0 - 1e-9;
        for &b in &BOARDS {
            let adjacent = (d(me, b) - step).abs() < 1e-9;
            out.push(ind(adjacent));
            let load = VEG.iter().any(|&v| at(v, b) && unchopped(v));
            out.push(ind(adjacent && load));
        }
        let held: Vec<usize> = VEG.iter().copied().filter(|&v| at(me, v)).collect();
        out.push(ind(held.iter().any(|&v| unchopped(v))));
        out.push(ind(held.iter().any(|&v| !unchopped(v))));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearActorCritic {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy: f64,
    /// Passes over each batch.
    pub actor_epochs: u32,
    pub critic_epochs: u32,
    pub features: FeatureSet,
}

impl Default for LinearActorCritic {
    fn default() -> LinearActorCritic {
        LinearActorCritic {
            actor_lr: 1.0,
            critic_lr: 0.1,
            entropy: 0.1,
            actor_epochs: 1,
            critic_epochs: 2,
            features: FeatureSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub agent: AgentId,
    pub features: FeatureSet,
    pub legal: Vec<MacroAction>,
    /// Actor scores and critic action values, each row-major
    /// `legal.len() × features.len()`.
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
}

impl LinearPolicy {
    fn n_feat(&self) -> usize {
        self.features.len()
    }

    fn phi(&self, obs: &Observation) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_feat());
        self.features.compute(self.agent, obs, &mut v);
        v
    }

    pub fn scores(&self, obs: &Observation) -> Vec<f64> {
        let phi = self.phi(obs);
        self.scores_phi(&phi)
    }

    fn scores_phi(&self, phi: &[f64]) -> Vec<f64> {
        self.actor.chunks(self.n_feat()).map(|row| dot(row, phi)).collect()
    }

    /// Action probabilities over `legal`.
    pub fn probabilities(&self, obs: &Observation) -> Vec<f64> {
        softmax(&self.scores(obs))
    }

    /// Critic estimate of each legal action's value.
    pub fn q_values(&self, obs: &Observation) -> Vec<f64> {
        self.q_phi(&self.phi(obs))
    }

    fn q_phi(&self, phi: &[f64]) -> Vec<f64> {
        self.critic.chunks(self.n_feat()).map(|row| dot(row, phi)).collect()
    }

    /// Expected critic value under the actor's softmax.
    pub fn value(&self, obs: &Observation) -> f64 {
        let phi = self.phi(obs);
        let pi = softmax(&self.scores_phi(&phi));
        pi.iter().zip(self.q_phi(&phi)).map(|(a, b)| a * b).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl Learner for LinearActorCritic {
    type Policy = LinearPolicy;

    fn init(&self, agent: AgentId, legal: &[MacroAction]) -> LinearPolicy {
        let f = self.features.len();
        LinearPolicy {
            agent,
            features: self.features,
            legal: legal.to_vec(),
            actor: vec![0.0; legal.len() * f],
            critic: vec![0.0; legal.len() * f],
        }
    }

    fn act(&self, p: &LinearPolicy, obs: &Observation, explore: Option<f64>, rng: &mut dyn RngCore) -> MacroAction {
        let scores = p.scores(obs);
        match explore {
            None => {
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                p.legal[best]
            }
            Some(eps) => {
                if rng.gen::<f64>() < eps {
                    return p.legal[rng.gen_range(0..p.legal.len())];
                }
                let probs = softmax(&scores);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, q) in probs.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        return p.legal[i];
                    }
                }
                *p.legal.last().expect("non-empty action set")
            }
        }
    }

    fn improve(&self, p: &LinearPolicy, batch: &[Transition], seed: u64) -> LinearPolicy {
        let mut next = p.clone();
        if batch.is_empty() {
            return next;
        }
        let f = p.n_feat();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phis: Vec<Vec<f64>> = batch.iter().map(|t| p.phi(&t.obs)).collect();
        let next_phis: Vec<Vec<f64>> = batch.iter().map(|t| p.phi(&t.next_obs)).collect();
        let norms: Vec<f64> = phis.iter().map(|x| 1.0 + dot(x, x)).collect();
        let mut order: Vec<usize> = (0..batch.len()).collect();

        for _ in 0..self.critic_epochs {
            order.shuffle(&mut rng);
            for &j in &order {
                let t = &batch[j];
                let Some(a) = p.legal.iter().position(|x| *x == t.action) else { continue };
                let v_next = if t.terminal {
                    0.0
                } else {
                    let pi = softmax(&next.scores_phi(&next_phis[j]));
                    pi.iter().zip(next.q_phi(&next_phis[j])).map(|(a, b)| a * b).sum()
                };
                let row = &mut next.critic[a * f..(a + 1) * f];
                let delta = t.reward + t.discount * v_next - dot(row, &phis[j]);
                let step = self.critic_lr * delta / norms[j];
                for (w, x) in row.iter_mut().zip(&phis[j]) {
                    *w += step * x;
                }
            }
        }

        // All-actions policy gradient against the fitted critic.
        let advs: Vec<Vec<f64>> = phis
            .iter()
            .map(|phi| {
                let q = next.q_phi(phi);
                let pi = softmax(&next.scores_phi(phi));
                let v: f64 = pi.iter().zip(&q).map(|(a, b)| a * b).sum();
                q.into_iter().map(|x| x - v).collect()
            })
            .collect();
        let n = advs.len() as f64 * p.legal.len() as f64;
        let scale = (advs.iter().flatten().map(|a| a * a).sum::<f64>() / n).sqrt().max(1e-8);
        for _ in 0..self.actor_epochs {
            let mut grad = vec![0.0; next.actor.len()];
            for (phi, adv) in phis.iter().zip(&advs) {
                let probs = softmax(&next.scores_phi(phi));
                let entropy: f64 = -probs.iter().map(|q| if *q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>();
                for (b, q) in probs.iter().enumerate() {
                    let ent_grad = if *q > 0.0 { -q * (q.ln() + entropy) } else { 0.0 };
                    let coef = q * adv[b] / scale + self.entropy * ent_grad;
                    for (g, x) in grad[b * f..(b + 1) * f].iter_mut().zip(phi) {
                        *g += coef * x;
                    }
                }
            }
            let step = self.actor_lr / phis.len() as f64;
            for (w, g) in next.actor.iter_mut().zip(&grad) {
                *w += step * g;
            }
        }
        next
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a1() -> AgentId {
        AgentId::new(1).unwrap()
    }

    #[test]
    fn feature_lengths() {
        let o = Observation::zeros();
        for fs in [FeatureSet::Raw, FeatureSet::Relational] {
            let mut v = Vec::new();
            fs.compute(a1(), &o, &mut v);
            assert_eq!(v.len(), fs.len());
        }
    }

    #[test]
    fn greedy_is_argmax_and_deterministic() {
        let l = LinearActorCritic::default();
        let legal = [MacroAction::Up, MacroAction::Down, MacroAction::Left];
        let mut p = l.init(a1(), &legal);
        let f = p.features.len();
        p.actor[f + OBS_LEN] = 1.0;
        let o = Observation::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(l.act(&p, &o, None, &mut rng), MacroAction::Down);
        }
    }

    #[test]
    fn zero_step_size_keeps_parameters() {
        let l = LinearActorCritic { actor_lr: 0.0, critic_lr: 0.0, ..Default::default() };
        let legal = [MacroAction::Up, MacroAction::Down];
        let p = l.init(a1(), &legal);
        let o = Observation::zeros();
        let batch: Vec<Transition> = (0..8)
            .map(|i| Transition {
                obs: o,
                action: legal[i % 2],
                reward: i as f64,
                discount: 0.9,
                next_obs: o,
                terminal: i % 3 == 0,
            })
            .collect();
        assert_eq!(l.improve(&p, &batch, 0), p);
    }
}

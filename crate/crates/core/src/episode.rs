//! Runs one episode with every agent choosing a new macro-action whenever its
//! previous one terminates.

use rand::RngCore;

use crate::env::{Kitchen, MacroAction, Observation, NUM_AGENTS};
use crate::expr::EvalContext;
use crate::learner::{Learner, Transition};
use crate::pool::RewardPool;
use crate::rollout::{Frame, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EpisodeOptions {
    pub explore: Option<f64>,
    pub gamma: f64,
    pub record: bool,
    pub learn: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeOutcome {
    pub transitions: [Vec<Transition>; NUM_AGENTS],
    pub original_return: f64,
    pub composed_return: [f64; NUM_AGENTS],
    pub length: u32,
    pub chops: u32,
    pub correct: u32,
    pub wrong: u32,
    pub steps: Vec<StepRecord>,
    /// Per-tick learning signal of each agent, kept when recording.
    pub tick_rewards: Vec<[f64; NUM_AGENTS]>,
}

struct Pending {
    obs: Observation,
    action: MacroAction,
    reward: f64,
    discount: f64,
}

/// With `pools = None` every agent's signal is the environment reward.
pub(crate) fn run_episode<L: Learner>(
    learner: &L,
    policies: &[L::Policy],
    kitchen: &mut Kitchen,
    pools: Option<&[RewardPool]>,
    rng: &mut dyn RngCore,
    opts: EpisodeOptions,
) -> EpisodeOutcome {
    assert_eq!(policies.len(), NUM_AGENTS);
    let mut out = EpisodeOutcome::default();
    let mut obs = kitchen.observe_all();
    let mut pending: [Option<Pending>; NUM_AGENTS] = [None, None, None];
    let mut done = kitchen.state().done;
    while !done {
        for i in 0..NUM_AGENTS {
            if pending[i].is_none() {
                let action = learner.act(&policies[i], &obs[i], opts.explore, rng);
                pending[i] = Some(Pending { obs: obs[i], action, reward: 0.0, discount: 1.0 });
            }
        }
        let actions = [0, 1, 2].map(|i| pending[i].as_ref().expect("filled above").action);
        let t = kitchen.state().timestep;
        let frame = opts.record.then(|| Frame::of(kitchen.state()));
        let step = kitchen.step(&actions);
        let next = kitchen.observe_all();
        done = step.done;
        out.original_return += step.reward;
        out.length += 1;
        out.chops += step.chops;
        out.correct += step.correct_deliveries;
        out.wrong += step.wrong_deliveries;

        let mut ticks = [0.0; NUM_AGENTS];
        for i in 0..NUM_AGENTS {
            let r = match pools {
                Some(p) => p[i].compose_eval(&EvalContext {
                    obs: &next[i],
                    action: actions[i],
                    t,
                    env_reward: step.reward,
                    delivered: step.correct_deliveries > 0,
                }),
                None => step.reward,
            };
            ticks[i] = r;
            out.composed_return[i] += r;
            let p = pending[i].as_mut().expect("filled above");
            p.reward += p.discount * r;
            p.discount *= opts.gamma;
            if step.macro_done[i] || done {
                let p = pending[i].take().expect("filled above");
                if opts.learn {
                    out.transitions[i].push(Transition {
                        obs: p.obs,
                        action: p.action,
                        reward: p.reward,
                        discount: p.discount,
                        next_obs: next[i],
                        terminal: done,
                    });
                }
            }
        }
        if let Some(frame) = frame {
            out.steps.push(StepRecord { t, frame, actions, reward: step.reward, events: step.events });
            out.tick_rewards.push(ticks);
        }
        obs = next;
    }
    out
}

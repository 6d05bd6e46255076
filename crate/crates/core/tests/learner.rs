use fbmarl::env::{AgentId, MacroAction, Observation};
use fbmarl::learner::{Learner, LinearActorCritic, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three-armed bandit with one state: the middle arm pays 1, the others pay
/// a noisy 0.3. Default hyper-parameters should find it within 5000 pulls.
#[test]
fn bandit_prefers_best_arm() {
    let legal = [MacroAction::Up, MacroAction::Chop, MacroAction::Stay];
    let l = LinearActorCritic::default();
    let o = Observation::zeros();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = l.init(AgentId::new(2).unwrap(), &legal);
        for round in 0..100u64 {
            let batch: Vec<Transition> = (0..50)
                .map(|_| {
                    let a = l.act(&p, &o, Some(0.1), &mut rng);
                    let reward = if a == MacroAction::Chop { 1.0 } else { 0.3 + rng.gen_range(-0.2..0.2) };
                    Transition { obs: o, action: a, reward, discount: 0.99, next_obs: o, terminal: true }
                })
                .collect();
            p = l.improve(&p, &batch, seed * 1000 + round);
        }
        let probs = p.probabilities(&o);
        let best = legal.iter().position(|&a| a == MacroAction::Chop).unwrap();
        assert!(probs[best] >= 0.9, "seed {seed}: {probs:?}");
    }
}

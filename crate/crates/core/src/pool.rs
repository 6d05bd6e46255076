//! Per-agent reward pools with decaying, performance-adjusted weights.
//!
//! Entry `m = 1` is always the original environment reward. Each feedback
//! phase runs `insert → decay_and_normalize`, and once the next generation
//! has been evaluated, `performance_adjust` nudges the newest weight.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalContext, RewardExpr};

pub const DEFAULT_ALPHA: f64 = 0.9;
pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("all pool weights are zero; normalisation is undefined")]
    AllZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub expr: RewardExpr,
    pub weight: f64,
    /// Generation whose feedback produced the entry; `None` for the original reward.
    pub generation: Option<u32>,
}

/// Change in original-reward performance between two generations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceDelta {
    pub r_prev: f64,
    pub r_next: f64,
}

impl PerformanceDelta {
    pub fn improved(self) -> bool {
        self.r_next - self.r_prev > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PoolEvent {
    Insert { generation: Option<u32>, weight: f64 },
    Decay { weights: Vec<f64> },
    Adjust { delta: PerformanceDelta, before: f64, after: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardPool {
    entries: Vec<PoolEntry>,
    alpha: f64,
    beta: f64,
    history: Vec<PoolEvent>,
}

impl Default for RewardPool {
    fn default() -> RewardPool {
        RewardPool::new(DEFAULT_ALPHA, DEFAULT_BETA)
    }
}

impl RewardPool {
    /// A pool holding only the original reward at weight 1.
    pub fn new(alpha: f64, beta: f64) -> RewardPool {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
        assert!(beta >= 0.0, "beta must be non-negative");
        RewardPool {
            entries: vec![PoolEntry { expr: RewardExpr::original(), weight: 1.0, generation: None }],
            alpha,
            beta,
            history: Vec::new(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn history(&self) -> &[PoolEvent] {
        &self.history
    }

    /// Append `expr` with weight `1 / (|P| + 1)`. No renormalisation.
    pub fn insert(&mut self, expr: RewardExpr, generation: Option<u32>) -> f64 {
        let weight = 1.0 / (self.entries.len() as f64 + 1.0);
        self.entries.push(PoolEntry { expr, weight, generation });
        self.history.push(PoolEvent::Insert { generation, weight });
        weight
    }

    /// `w_m ← w_m · α^(M−m)` for every entry but the newest, then divide by the sum.
    pub fn decay_and_normalize(&mut self) -> Result<(), PoolError> {
        let m_total = self.entries.len();
        let decayed: Vec<f64> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| e.weight * self.alpha.powi((m_total - 1 - i) as i32))
            .collect();
        let sum: f64 = decayed.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(PoolError::AllZero);
        }
        for (e, w) in self.entries.iter_mut().zip(&decayed) {
            e.weight = w / sum;
        }
        self.history.push(PoolEvent::Decay { weights: self.weights() });
        Ok(())
    }

    /// Raise the newest weight by β on improvement, otherwise lower it by β
    /// (never below zero). Returns `false` when the pool has no feedback entry.
    pub fn performance_adjust(&mut self, delta: PerformanceDelta) -> bool {
        if self.entries.len() < 2 {
            log::warn!("performance adjustment skipped: pool holds only the original reward");
            return false;
        }
        let beta = self.beta;
        let newest = self.entries.last_mut().expect("len >= 2");
        let before = newest.weight;
        newest.weight = if delta.improved() { before + beta } else { (before - beta).max(0.0) };
        let after = newest.weight;
        self.history.push(PoolEvent::Adjust { delta, before, after });
        true
    }

    /// `Σ_m w_m · R_m(obs, act)`.
    pub fn compose_eval(&self, ctx: &EvalContext) -> f64 {
        self.entries.iter().map(|e| e.weight * e.expr.eval(ctx)).sum()
    }

    /// One line per entry: index, weight, generation and expression.
    pub fn dump(&self) -> String {
        let mut out = format!("alpha={} beta={}\n", self.alpha, self.beta);
        for (i, e) in self.entries.iter().enumerate() {
            let g = e.generation.map_or("-".to_string(), |g| g.to_string());
            out.push_str(&format!(
                "{:>2}  w={:<10.6} gen={:<2} {}  ; {}\n",
                i + 1,
                e.weight,
                g,
                e.expr.root,
                e.expr.description
            ));
        }
        out
    }
}

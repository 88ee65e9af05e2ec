//! Promise-problem solvers on top of path sampling.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::sample::{
    max_log_ratio, sample_path_cfg, sample_path_with, t_max_for_ratio, CpjRun, PathStats,
    ProductWalker, SideWalker, Walker,
};
use super::{path_divergence, CpjInstance};
use crate::engine::Role;
use crate::error::{Error, Result};
use crate::onesamp::SamplerConfig;
use crate::sharedrand::SharedSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRun {
    pub answer_a: Option<i64>,
    pub answer_b: Option<i64>,
    pub run: CpjRun,
}

/// Outputs the sampled leaf's value. Each node samples with `ε / k` so the
/// sampler adds at most `ε` to the promise's `ε`.
pub fn solve_cpj(f: &CpjInstance, seed: &SharedSeed, eps: f64) -> Result<SolveRun> {
    let cfg = SamplerConfig::new((eps / f.rounds() as f64).min(0.5))?
        .with_t_max(t_max_for_ratio(max_log_ratio(f)));
    let run = sample_path_cfg(&Arc::new(f.clone()), seed, cfg)?;
    Ok(SolveRun {
        answer_a: run.a.output,
        answer_b: run.b.output,
        run,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRunN {
    pub answers_a: Vec<Option<i64>>,
    pub answers_b: Vec<Option<i64>>,
    pub replicas: usize,
    pub stats: PathStats,
    /// Divergence cost of A's product path.
    pub divergence_cost: f64,
}

/// Number of replicas per instance: `max(1, ⌈log₂ n⌉)`.
pub fn replicas_for(n: usize) -> usize {
    (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize
}

fn majority(values: &[Option<i64>]) -> Option<i64> {
    let mut best: Option<(i64, usize)> = None;
    for v in values.iter().flatten() {
        let count = values.iter().filter(|w| **w == Some(*v)).count();
        // strict comparison keeps the earliest replica on ties
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((*v, count));
        }
    }
    best.map(|(v, _)| v)
}

/// Solves `n` instances at once on one path of the product of
/// `n·⌈log₂ n⌉` copies and answers each by majority over its replicas.
pub fn solve_cpj_n(instances: &[CpjInstance], seed: &SharedSeed, eps: f64) -> Result<SolveRunN> {
    let n = instances.len();
    let first = instances
        .first()
        .ok_or_else(|| Error::InvalidParameter("no instances".into()))?;
    for f in instances {
        if f.rounds() != first.rounds()
            || !f.is_uniform_depth()
            || f.first_owner() != first.first_owner()
        {
            return Err(Error::InvalidInstance(
                "instances must share depth and ownership".into(),
            ));
        }
    }
    let r = replicas_for(n);
    let shared: Vec<Arc<CpjInstance>> = instances.iter().cloned().map(Arc::new).collect();
    let copies = |side: Role| -> Vec<SideWalker> {
        shared
            .iter()
            .flat_map(|f| std::iter::repeat_n(SideWalker::new(f.clone(), side), r))
            .collect()
    };
    let ratio: f64 = instances.iter().map(max_log_ratio).sum::<f64>() * r as f64;
    let cfg = SamplerConfig::new((eps / (2.0 * first.rounds() as f64)).min(0.5))?
        .with_t_max(t_max_for_ratio(ratio));
    let (a, b, stats) = sample_path_with(
        ProductWalker::new(copies(Role::A))?,
        ProductWalker::new(copies(Role::B))?,
        seed,
        cfg,
    )?;

    let answers = |parts: &[SideWalker], done: bool| -> Vec<Option<i64>> {
        parts
            .chunks(r)
            .map(|reps| {
                let outs: Vec<Option<i64>> = reps
                    .iter()
                    .map(|w| if done { w.output() } else { None })
                    .collect();
                majority(&outs)
            })
            .collect()
    };
    let mut divergence_cost = 0.0;
    let component_paths = a
        .path()
        .iter()
        .scan(ProductWalker::new(copies(Role::A))?, |w, &c| {
            let idx = w.split(c).ok();
            w.descend(c).ok()?;
            idx
        })
        .collect::<Vec<_>>();
    for (j, f) in shared
        .iter()
        .enumerate()
        .flat_map(|(i, f)| (0..r).map(move |k| (i * r + k, f)))
    {
        let p: Vec<usize> = component_paths.iter().map(|idx| idx[j]).collect();
        divergence_cost += path_divergence(f, &p)?;
    }
    Ok(SolveRunN {
        answers_a: answers(a.walker().parts(), a.reached_leaf()),
        answers_b: answers(b.walker().parts(), b.reached_leaf()),
        replicas: r,
        stats,
        divergence_cost,
    })
}

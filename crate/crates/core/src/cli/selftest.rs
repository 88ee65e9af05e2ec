//! Exact-identity suite, hard-bound checks and mutation checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::campaign::{cpj_campaign, sample_campaign, CampaignParams};
use super::gen::{gen_rng, uniform_subset};
use crate::cpj::{
    instance_divergence, product_instance, random_instance, CpjInstance, CpjNode, InstanceParams,
};
use crate::engine::Role;
use crate::error::Result;
use crate::info::{Dist, JointDist};
use crate::onesamp::{comm_bound, run_sampler, SamplerConfig};
use crate::prototree::{
    build_cpj, comm_complexity, external_info_cost, internal_from, internal_info_cost,
    parallel_protocol, product_prior, random_prior, random_protocol, transcript_distribution,
    ProtocolParams, ProtocolTree,
};
use crate::sharedrand::SharedSeed;

pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

fn residual_check(name: &str, residuals: impl IntoIterator<Item = f64>) -> Check {
    let worst = residuals.into_iter().fold(0.0, f64::max);
    Check {
        name: name.into(),
        passed: worst < IDENTITY_TOL,
        detail: format!("max residual {worst:.3e}"),
    }
}

/// Seeded protocols with priors for the identity suite.
pub fn identity_corpus(seed: &SharedSeed, count: usize) -> Result<Vec<(ProtocolTree, JointDist)>> {
    let mut rng = gen_rng(&seed.derive(0x51, 0));
    (0..count)
        .map(|_| {
            let params = ProtocolParams {
                depth: rng.random_range(1..=4),
                x_size: rng.random_range(1..=8),
                y_size: rng.random_range(1..=8),
                branches: rng.random_range(1..=4),
                leaf_prob: 0.15,
            };
            let pi = random_protocol(&params, &mut rng)?;
            let mu = random_prior(params.x_size, params.y_size, &mut rng);
            Ok((pi, mu))
        })
        .collect()
}

/// `E_{μ,R}[D(F_π(x, y, r))]` summed instance by instance, with `edit`
/// applied to each built instance.
pub fn summed_divergence(
    pi: &ProtocolTree,
    mu: &JointDist,
    mut edit: impl FnMut(usize, usize, usize, CpjInstance) -> CpjInstance,
) -> Result<f64> {
    let mut total = 0.0;
    for (r, b) in pi.branches().iter().enumerate() {
        for x in 0..mu.rows() {
            for y in 0..mu.cols() {
                let w = b.weight * mu.get(x, y);
                if w > 0.0 {
                    total += w * instance_divergence(&edit(r, x, y, build_cpj(pi, x, y, r, mu)?));
                }
            }
        }
    }
    Ok(total)
}

/// Mixes the root's `distA` halfway toward uniform.
pub fn perturb_root_dist_a(f: &CpjInstance) -> Result<CpjInstance> {
    match f.root() {
        CpjNode::Leaf { .. } => Ok(f.clone()),
        CpjNode::Internal {
            owner,
            labels,
            children,
            dist_a,
            dist_b,
        } => {
            let n = dist_a.len() as f64;
            let mixed = Dist::new(dist_a.probs().iter().map(|p| 0.5 * p + 0.5 / n).collect())?;
            let root = CpjNode::Internal {
                owner: *owner,
                labels: labels.clone(),
                children: children.clone(),
                dist_a: mixed,
                dist_b: dist_b.clone(),
            };
            CpjInstance::new(root, Some(f.rounds()))
        }
    }
}

/// Per-run sampler bound with a configurable square-root constant.
pub fn sampler_bound(log_ratio: f64, eps: f64, sqrt_constant: f64) -> f64 {
    let r = log_ratio.max(0.0);
    let l = (1.0 / eps).log2();
    r + l + l.log2() + sqrt_constant * r.sqrt() + 9.0
}

/// Two-symbol pair with `log₂ P(0)/Q(0)` just above 16, where the
/// sampler's bound has the least slack.
pub fn near_square_pair() -> (Dist, Dist) {
    let q0 = 2f64.powf(-16.2);
    (
        Dist::point(2, 0).expect("two symbols"),
        Dist::new(vec![q0, 1.0 - q0]).expect("normalized"),
    )
}

pub fn selftest(seed: &SharedSeed) -> Result<SelftestReport> {
    let mut checks = Vec::new();
    let corpus = identity_corpus(seed, 30)?;

    let mut chain = Vec::new();
    let mut identity = Vec::new();
    let mut ic_cc = Vec::new();
    for (pi, mu) in &corpus {
        let t = transcript_distribution(pi, mu)?;
        let j = &t.table;
        // I(T; XY) = I(T; X) + I(T; Y | X)
        chain.push(
            (j.mutual_information(&[2], &[0, 1])?
                - j.mutual_information(&[2], &[0])?
                - j.conditional_mutual_information(&[2], &[1], &[0])?)
            .abs(),
        );
        let ic = internal_from(&t)?;
        identity.push((summed_divergence(pi, mu, |_, _, _, f| f)? - ic).abs());
        ic_cc.push((ic - comm_complexity(pi) as f64).max(0.0));
        ic_cc.push((ic - external_info_cost(pi, mu)?).max(0.0));
    }
    checks.push(residual_check("chain rule", chain));
    checks.push(residual_check(
        "expected divergence equals internal information",
        identity,
    ));
    checks.push(residual_check("internal ≤ external ≤ communication", ic_cc));

    let mut rng = gen_rng(&seed.derive(0x52, 0));
    let mut additivity = Vec::new();
    for _ in 0..5 {
        let params = ProtocolParams {
            depth: 2,
            x_size: 2,
            y_size: 2,
            branches: 1,
            leaf_prob: 0.0,
        };
        let pi = random_protocol(&params, &mut rng)?;
        let mu = random_prior(2, 2, &mut rng);
        let pi2 = parallel_protocol(&pi, 2)?;
        additivity.push(
            (internal_info_cost(&pi2, &product_prior(&mu, 2)?)?
                - 2.0 * internal_info_cost(&pi, &mu)?)
            .abs(),
        );
    }
    for m in [2, 3] {
        let params = InstanceParams {
            depth: 2,
            branching: 2,
            first_owner: Role::A,
        };
        let parts: Vec<CpjInstance> = (0..m)
            .map(|_| random_instance(params, &mut rng))
            .collect::<Result<_>>()?;
        let sum: f64 = parts.iter().map(instance_divergence).sum();
        additivity.push((instance_divergence(&product_instance(&parts)?) - sum).abs());
    }
    checks.push(residual_check("additivity over copies", additivity));

    let params = CampaignParams::new(0.01, 2000, seed.derive(0x53, 0))?;
    let mut violations = 0;
    for (q_size, p_size) in [(16, 16), (64, 4), (1024, 4)] {
        let pair = uniform_subset(q_size, q_size, p_size, &seed.derive(0x54, q_size as u64))?;
        violations += sample_campaign(&pair.p, &pair.q, &params)?
            .1
            .bound_violations;
    }
    let (p, q) = near_square_pair();
    violations += sample_campaign(&p, &q, &params)?.1.bound_violations;
    checks.push(Check {
        name: "sampler hard bound".into(),
        passed: violations == 0,
        detail: format!("{violations} violations in {} runs", 4 * params.trials),
    });

    let mut violations = 0;
    for i in 0..5 {
        let f = random_instance(InstanceParams::default(), &mut rng)?;
        let p = CampaignParams::new(0.01, 500, seed.derive(0x55, i))?;
        violations += cpj_campaign(&f, &p)?.1.bound_violations;
    }
    checks.push(Check {
        name: "path hard bound".into(),
        passed: violations == 0,
        detail: format!("{violations} violations in 2500 runs"),
    });

    // Mutation: a perturbed distA table must break the divergence identity.
    let (pi, mu) = corpus
        .iter()
        .find(|(pi, _)| pi.branches()[0].root.owner().is_some())
        .cloned()
        .expect("corpus has an internal root");
    let ic = internal_info_cost(&pi, &mu)?;
    let target = (0..mu.rows())
        .flat_map(|x| (0..mu.cols()).map(move |y| (x, y)))
        .find(|&(x, y)| mu.get(x, y) > 0.0);
    let mutated = summed_divergence(&pi, &mu, |r, x, y, f| {
        if r == 0 && Some((x, y)) == target {
            perturb_root_dist_a(&f).unwrap_or(f)
        } else {
            f
        }
    })?;
    let residual = (mutated - ic).abs();
    checks.push(Check {
        name: "mutation: perturbed distA detected".into(),
        passed: residual > IDENTITY_TOL,
        detail: format!("residual {residual:.3e}"),
    });

    // Mutation: the bound with 4 in place of 5 must be violated.
    let cfg = SamplerConfig::for_pair(&p, &q, 0.01)?;
    let log_ratio = (p.get(0) / q.get(0)).log2();
    let mut flagged = 0;
    let mut consistent = true;
    for i in 0..2000 {
        let run = run_sampler(&p, &q, &seed.derive(0x56, i), cfg)?;
        consistent &=
            (sampler_bound(log_ratio, 0.01, 5.0) - comm_bound(&p, &q, run.a, 0.01)).abs() < 1e-12;
        if run.stats.total_bits() as f64 > sampler_bound(log_ratio, 0.01, 4.0) {
            flagged += 1;
        }
    }
    checks.push(Check {
        name: "mutation: weakened bound constant detected".into(),
        passed: consistent && flagged > 0,
        detail: format!("{flagged} of 2000 runs exceed the weakened bound"),
    });

    Ok(SelftestReport { checks })
}

//! Instance generators behind `infocomp gen`.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpj::{label_mass, promise_instance, random_instance, CpjInstance, InstanceParams};
use crate::error::{Error, Result};
use crate::info::{kl_divergence, Dist, JointDist};
use crate::prototree::{random_prior, random_protocol, ProtocolParams, ProtocolTree};
use crate::sharedrand::SharedSeed;

const TAG_GEN: u64 = 0x41;

pub fn gen_rng(seed: &SharedSeed) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(seed.derive(TAG_GEN, 0).rng_seed())
}

/// A pair `(P, Q)` for the one-shot sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePair {
    pub p: Dist,
    pub q: Dist,
    /// `D(P‖Q)`, informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
}

/// `Q` uniform on a random `S_Q` of `q_size` symbols out of `universe`,
/// `P` uniform on a random `S_P ⊆ S_Q` of `p_size` symbols, so that
/// `D(P‖Q) = log₂(q_size / p_size)`.
pub fn uniform_subset(
    universe: usize,
    q_size: usize,
    p_size: usize,
    seed: &SharedSeed,
) -> Result<SamplePair> {
    if p_size == 0 || p_size > q_size || q_size > universe {
        return Err(Error::InvalidParameter(format!(
            "need 1 ≤ |S_P| ≤ |S_Q| ≤ |U|, got {p_size}, {q_size}, {universe}"
        )));
    }
    let mut rng = gen_rng(seed);
    let sq = sample_indices(&mut rng, universe, q_size).into_vec();
    let sp: Vec<usize> = sample_indices(&mut rng, q_size, p_size)
        .into_iter()
        .map(|i| sq[i])
        .collect();
    let p = Dist::uniform_on(universe, &sp)?;
    let q = Dist::uniform_on(universe, &sq)?;
    let divergence = Some(kl_divergence(&p, &q)?);
    Ok(SamplePair { p, q, divergence })
}

pub fn random_cpj(params: InstanceParams, seed: &SharedSeed) -> Result<CpjInstance> {
    random_instance(params, &mut gen_rng(seed))
}

/// Random instance relabelled so one value holds at least `margin` of the
/// correct distribution; checked by enumeration.
pub fn promise_cpj(params: InstanceParams, margin: f64, seed: &SharedSeed) -> Result<CpjInstance> {
    let f = promise_instance(params, margin, &mut gen_rng(seed))?;
    let mass = label_mass(&f, 1);
    if mass + 1e-12 < margin {
        return Err(Error::InvalidInstance(format!(
            "majority mass {mass} below margin {margin}"
        )));
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolBundle {
    pub protocol: ProtocolTree,
    pub mu: JointDist,
}

pub fn random_protocol_with_prior(
    params: &ProtocolParams,
    seed: &SharedSeed,
) -> Result<ProtocolBundle> {
    let mut rng = gen_rng(seed);
    let protocol = random_protocol(params, &mut rng)?;
    let mu = random_prior(params.x_size, params.y_size, &mut rng);
    Ok(ProtocolBundle { protocol, mu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_subset_divergence() {
        let s = SharedSeed::from_u128(3);
        let pair = uniform_subset(16, 16, 1, &s).unwrap();
        assert_abs_diff_eq!(
            kl_divergence(&pair.p, &pair.q).unwrap(),
            4.0,
            epsilon = 1e-12
        );
        let pair = uniform_subset(40, 32, 4, &s).unwrap();
        assert_abs_diff_eq!(pair.divergence.unwrap(), 3.0, epsilon = 1e-12);
        assert!(uniform_subset(16, 4, 8, &s).is_err());
        assert_eq!(uniform_subset(40, 32, 4, &s).unwrap(), pair);
    }

    #[test]
    fn promise_margin_holds() {
        let f = promise_cpj(InstanceParams::default(), 0.95, &SharedSeed::from_u128(8)).unwrap();
        assert!(label_mass(&f, 1).max(label_mass(&f, -1)) >= 0.95);
    }
}

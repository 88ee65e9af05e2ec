//! One-shot correlated sampling.
//!
//! Player A holds `P`, player B holds `Q`. A reads the first shared tape
//! element under the histogram of `P` and outputs its symbol; B narrows its
//! own candidates (tape elements of the same block under a growing multiple
//! of `Q`'s histogram) using hash bits streamed by A.
//!
//! Message schedule, bit-exact:
//! 1. A sends `k_bits` bits: `k - 1` big-endian, where `k` is the 1-based
//!    block of `|U|` tape elements holding A's element. If `k - 1` does not
//!    fit, A sends all ones and the run is flagged as a `k` overflow.
//! 2. For `t = 0, 1, ...`: A sends `h_j(x)` for `s_{t-1} < j ≤ s_t`, where
//!    `s_t = 1 + ⌈log₂ 1/ε⌉ + (t+1)²` and `s_{-1} = 0`; B answers one bit,
//!    `1` if some block element in `2^{t²}·Q` agrees on all `s_t` hashes
//!    (B then outputs the first such element) and `0` otherwise.
//! 3. After a `0` at `t = t_max` both sides stop and the run is aborted.

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::engine::{run_local, Party, Step};
use crate::error::{Error, Result};
use crate::info::Dist;
use crate::sharedrand::{HashFamily, SharedSeed, Tape, TapeElement};

/// Cap on `t` when some `P(x) > 0` has `Q(x) = 0`.
pub const DEFAULT_T_MAX_CAP: u32 = 64;

/// A gives up after this many elements per universe symbol.
pub const SCAN_CAP_PER_SYMBOL: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub eps: f64,
    pub t_max: u32,
    pub k_bits: u32,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "eps must lie in (0, 1/2], got {eps}"
        )));
    }
    Ok(())
}

/// `1 + ⌈log₂ log₂ 1/ε⌉`.
pub fn default_k_bits(eps: f64) -> u32 {
    1 + (1.0 / eps).log2().log2().ceil().max(0.0) as u32
}

/// `⌈√(max log₂ P(x)/Q(x))⌉ + 2` over the support of `P`, or the cap when
/// some ratio is infinite.
pub fn default_t_max(p: &Dist, q: &Dist) -> u32 {
    let mut worst: f64 = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return DEFAULT_T_MAX_CAP;
        }
        worst = worst.max((a / b).log2());
    }
    (worst.sqrt().ceil() as u32 + 2).min(DEFAULT_T_MAX_CAP)
}

impl SamplerConfig {
    /// Default `k_bits`, `t_max` at the cap.
    pub fn new(eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            eps,
            t_max: DEFAULT_T_MAX_CAP,
            k_bits: default_k_bits(eps),
        })
    }

    /// Default `k_bits`, `t_max` from the pair.
    pub fn for_pair(p: &Dist, q: &Dist, eps: f64) -> Result<Self> {
        Ok(Self {
            t_max: default_t_max(p, q),
            ..Self::new(eps)?
        })
    }

    pub fn with_t_max(self, t_max: u32) -> Self {
        Self { t_max, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check_eps(self.eps)?;
        if self.k_bits == 0 || self.k_bits > 63 {
            return Err(Error::InvalidParameter(format!("k_bits = {}", self.k_bits)));
        }
        if self.t_max > 1024 {
            return Err(Error::InvalidParameter(format!(
                "t_max = {} is unreasonably large",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Cumulative hash bits sent by the end of iteration `t`.
    pub fn hashes_through(&self, t: u32) -> u64 {
        1 + (1.0 / self.eps).log2().ceil() as u64 + (t as u64 + 1).pow(2)
    }

    fn hashes_before(&self, t: u32) -> u64 {
        if t == 0 {
            0
        } else {
            self.hashes_through(t - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Match,
    Mismatch,
    AbortKOverflow,
    AbortTMax,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Match => "match",
            Outcome::Mismatch => "mismatch",
            Outcome::AbortKOverflow => "abort_k_overflow",
            Outcome::AbortTMax => "abort_t_max",
        }
    }

    pub fn is_abort(self) -> bool {
        matches!(self, Outcome::AbortKOverflow | Outcome::AbortTMax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub bits_a: u64,
    pub bits_b: u64,
    /// Last iteration index executed.
    pub rounds_t: u32,
    /// 1-based tape block of A's element.
    pub k: u64,
    pub outcome: Outcome,
}

impl RunStats {
    pub fn total_bits(&self) -> u64 {
        self.bits_a + self.bits_b
    }
}

/// Tape membership in the histogram of `d`: `d(x) > p`.
pub fn in_p(e: &TapeElement, d: &Dist) -> bool {
    d.get(e.x) > e.p
}

/// Membership in `C·Q`: `p < C·d(x)`, never for `d(x) = 0`.
pub fn in_scaled_q(e: &TapeElement, d: &Dist, c: f64) -> bool {
    let q = d.get(e.x);
    q > 0.0 && e.p < c * q
}

/// First tape index (1-based) whose element lies under the histogram of `p`.
pub fn pick_a_element(p: &Dist, seed: &SharedSeed) -> Result<(u64, TapeElement)> {
    let tape = Tape::new(seed, p.len());
    let probs = p.probs();
    let cap = SCAN_CAP_PER_SYMBOL.saturating_mul(p.len() as u64);
    for i in 1..=cap {
        let x = tape.symbol(i);
        let px = probs[x];
        if px > 0.0 {
            let h = tape.height(i);
            if h < px {
                return Ok((i, TapeElement { x, p: h }));
            }
        }
    }
    Err(Error::ScanCapExceeded(cap))
}

/// Evaluates the per-run communication bound
/// `r + log₂(1/ε) + log₂log₂(1/ε) + 5√r + 9` with `r = max(0, log₂ P(a)/Q(a))`.
pub fn comm_bound(p: &Dist, q: &Dist, a: usize, eps: f64) -> f64 {
    let (pa, qa) = (p.get(a), q.get(a));
    if qa <= 0.0 {
        return f64::INFINITY;
    }
    bound_from_ratio((pa / qa).log2(), eps)
}

pub(crate) fn bound_from_ratio(log_ratio: f64, eps: f64) -> f64 {
    let r = log_ratio.max(0.0);
    let l = (1.0 / eps).log2();
    r + l + l.log2() + 5.0 * r.sqrt() + 9.0
}

/// Leading terms of the expected-communication form: `D(P‖Q) + 2 log₂(1/ε)`.
pub fn expected_leading_terms(divergence: f64, eps: f64) -> f64 {
    divergence + 2.0 * (1.0 / eps).log2()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AState {
    SendK,
    SendHashes(u32),
    AwaitVerdict(u32),
    Done,
}

/// Player A's side of one sampling run.
#[derive(Debug, Clone)]
pub struct Sender {
    cfg: SamplerConfig,
    hashes: HashFamily,
    index: u64,
    element: TapeElement,
    k: u64,
    overflow: bool,
    state: AState,
    final_t: u32,
    accepted: Option<bool>,
}

impl Sender {
    pub fn new(p: &Dist, seed: &SharedSeed, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let (index, element) = pick_a_element(p, seed)?;
        let k = index.div_ceil(p.len() as u64);
        let overflow = k > 1u64 << cfg.k_bits;
        Ok(Self {
            cfg,
            hashes: HashFamily::new(seed),
            index,
            element,
            k,
            overflow,
            state: AState::SendK,
            final_t: 0,
            accepted: None,
        })
    }

    /// A's output symbol.
    pub fn output(&self) -> usize {
        self.element.x
    }

    pub fn tape_index(&self) -> u64 {
        self.index
    }

    pub fn block(&self) -> u64 {
        self.k
    }

    pub fn k_overflow(&self) -> bool {
        self.overflow
    }

    pub fn is_done(&self) -> bool {
        self.state == AState::Done
    }

    /// `Some(true)` once B reported success, `Some(false)` after the
    /// `t_max` abort.
    pub fn accepted(&self) -> Option<bool> {
        self.accepted
    }

    pub fn final_t(&self) -> u32 {
        self.final_t
    }
}

impl Party for Sender {
    fn step(&mut self) -> Result<Step> {
        match self.state {
            AState::SendK => {
                let value = if self.overflow {
                    (1u64 << self.cfg.k_bits) - 1
                } else {
                    self.k - 1
                };
                self.state = AState::SendHashes(0);
                Ok(Step::Send(Bits::from_uint(value, self.cfg.k_bits)))
            }
            AState::SendHashes(t) => {
                let from = self.cfg.hashes_before(t) + 1;
                let to = self.cfg.hashes_through(t);
                self.state = AState::AwaitVerdict(t);
                Ok(Step::Send(Bits::from_bools(self.hashes.bits(
                    self.element.x,
                    from,
                    to,
                ))))
            }
            AState::AwaitVerdict(_) => Ok(Step::Await),
            AState::Done => Ok(Step::Done),
        }
    }

    fn deliver(&mut self, msg: &Bits) -> Result<()> {
        match self.state {
            AState::AwaitVerdict(t) => {
                if msg.len() != 1 {
                    return Err(Error::Protocol(format!(
                        "verdict must be 1 bit, got {}",
                        msg.len()
                    )));
                }
                self.final_t = t;
                if msg.as_slice()[0] {
                    self.accepted = Some(true);
                    self.state = AState::Done;
                } else if t >= self.cfg.t_max {
                    self.accepted = Some(false);
                    self.state = AState::Done;
                } else {
                    self.state = AState::SendHashes(t + 1);
                }
                Ok(())
            }
            AState::Done => Ok(()),
            _ => Err(Error::Protocol(
                "sender received a message out of turn".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BState {
    AwaitK,
    AwaitHashes(u32),
    SendVerdict(u32, Option<usize>),
    Done,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    x: usize,
    /// First iteration at which the element lies in `2^{t²}·Q`.
    enters_at: u32,
}

/// Player B's side of one sampling run.
#[derive(Debug, Clone)]
pub struct Receiver {
    q: Dist,
    seed: SharedSeed,
    cfg: SamplerConfig,
    hashes: HashFamily,
    /// Received hash bits packed as in [`HashFamily::word`].
    received: Vec<u64>,
    received_len: u64,
    /// First tape index of A's announced block.
    block_start: u64,
    /// Block elements still consistent with every hash bit so far, in tape
    /// order; filled on the first burst.
    block: Option<Vec<Candidate>>,
    state: BState,
    output: Option<usize>,
    final_t: u32,
}

// `scales[t] = 2^(t²)`, exact powers of two.
fn entry_iteration(p: f64, q: f64, scales: &[f64]) -> Option<u32> {
    if q <= 0.0 {
        return None;
    }
    scales.iter().position(|&c| p < c * q).map(|t| t as u32)
}

impl Receiver {
    pub fn new(q: &Dist, seed: &SharedSeed, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            q: q.clone(),
            seed: *seed,
            cfg,
            hashes: HashFamily::new(seed),
            received: Vec::new(),
            received_len: 0,
            block_start: 0,
            block: None,
            state: BState::AwaitK,
            output: None,
            final_t: 0,
        })
    }

    pub fn output(&self) -> Option<usize> {
        self.output
    }

    pub fn is_done(&self) -> bool {
        self.state == BState::Done
    }

    pub fn final_t(&self) -> u32 {
        self.final_t
    }

    // Hash disagreement rules an element out whatever its entry iteration,
    // so only hash survivors of the first burst get their height looked at.
    fn scan_block(&self) -> Vec<Candidate> {
        let n = self.q.len() as u64;
        let tape = Tape::new(&self.seed, self.q.len());
        let probs = self.q.probs();
        let scales: Vec<f64> = (0..=self.cfg.t_max)
            .map(|t| 2f64.powi((t * t) as i32))
            .collect();
        let (hashes, received, s) = (&self.hashes, &self.received, self.received_len);
        (self.block_start..self.block_start + n)
            .filter_map(|r| {
                let x = tape.symbol(r);
                let q = probs[x];
                if q <= 0.0 || !Self::agrees(hashes, received, s, x) {
                    return None;
                }
                entry_iteration(tape.height(r), q, &scales)
                    .map(|enters_at| Candidate { x, enters_at })
            })
            .collect()
    }

    fn absorb(&mut self, msg: &Bits) {
        for &b in msg.as_slice() {
            let pos = self.received_len;
            if pos.is_multiple_of(64) {
                self.received.push(0);
            }
            if b {
                *self.received.last_mut().unwrap() |= 1 << (pos % 64);
            }
            self.received_len += 1;
        }
    }

    fn agrees(hashes: &HashFamily, received: &[u64], s: u64, x: usize) -> bool {
        received.iter().enumerate().all(|(blk, &word)| {
            let used = (s - 64 * blk as u64).min(64);
            let mask = if used == 64 {
                u64::MAX
            } else {
                (1u64 << used) - 1
            };
            (hashes.word(blk as u64, x) ^ word) & mask == 0
        })
    }

    // The received prefix only grows, so a candidate that disagrees once is
    // dropped for good.
    fn survivor(&mut self, t: u32) -> Option<usize> {
        let block = match self.block.take() {
            None => self.scan_block(),
            Some(mut b) => {
                let (hashes, received, s) = (&self.hashes, &self.received, self.received_len);
                b.retain(|c| Self::agrees(hashes, received, s, c.x));
                b
            }
        };
        let found = block.iter().find(|c| c.enters_at <= t).map(|c| c.x);
        self.block = Some(block);
        found
    }
}

impl Party for Receiver {
    fn step(&mut self) -> Result<Step> {
        match self.state {
            BState::SendVerdict(t, found) => {
                self.final_t = t;
                if let Some(x) = found {
                    self.output = Some(x);
                    self.state = BState::Done;
                } else if t >= self.cfg.t_max {
                    self.state = BState::Done;
                } else {
                    self.state = BState::AwaitHashes(t + 1);
                }
                Ok(Step::Send(Bits::from_bools(vec![found.is_some()])))
            }
            BState::Done => Ok(Step::Done),
            _ => Ok(Step::Await),
        }
    }

    fn deliver(&mut self, msg: &Bits) -> Result<()> {
        match self.state {
            BState::AwaitK => {
                if msg.len() != self.cfg.k_bits as usize {
                    return Err(Error::Protocol(format!(
                        "block index must be {} bits, got {}",
                        self.cfg.k_bits,
                        msg.len()
                    )));
                }
                let k = msg
                    .to_uint()
                    .ok_or_else(|| Error::Protocol("block index too wide".into()))?
                    + 1;
                self.block_start = (k - 1) * self.q.len() as u64 + 1;
                self.state = BState::AwaitHashes(0);
                Ok(())
            }
            BState::AwaitHashes(t) => {
                let expected = self.cfg.hashes_through(t) - self.cfg.hashes_before(t);
                if msg.len() as u64 != expected {
                    return Err(Error::Protocol(format!(
                        "iteration {t} expects {expected} hash bits, got {}",
                        msg.len()
                    )));
                }
                self.absorb(msg);
                let found = self.survivor(t);
                self.state = BState::SendVerdict(t, found);
                Ok(())
            }
            BState::Done => Ok(()),
            BState::SendVerdict(..) => {
                Err(Error::Protocol("receiver got a message out of turn".into()))
            }
        }
    }
}

/// Outcome of a finished sender/receiver pair.
pub fn classify(sender: &Sender, receiver: &Receiver) -> Outcome {
    if sender.k_overflow() {
        Outcome::AbortKOverflow
    } else {
        match receiver.output() {
            None => Outcome::AbortTMax,
            Some(b) if b == sender.output() => Outcome::Match,
            Some(_) => Outcome::Mismatch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRun {
    pub a: usize,
    pub b: Option<usize>,
    pub stats: RunStats,
}

pub fn run_sampler(p: &Dist, q: &Dist, seed: &SharedSeed, cfg: SamplerConfig) -> Result<SampleRun> {
    if p.len() != q.len() {
        return Err(Error::UniverseMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut sender = Sender::new(p, seed, cfg)?;
    let mut receiver = Receiver::new(q, seed, cfg)?;
    let transfer = run_local(&mut sender, &mut receiver)?;
    Ok(SampleRun {
        a: sender.output(),
        b: receiver.output(),
        stats: RunStats {
            bits_a: transfer.bits_a,
            bits_b: transfer.bits_b,
            rounds_t: sender.final_t(),
            k: sender.block(),
            outcome: classify(&sender, &receiver),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(n: u64) -> SharedSeed {
        SharedSeed::from_u128(0xDEAD_BEEF).derive(9, n)
    }

    #[test]
    fn histogram_membership() {
        let d = Dist::new(vec![0.6, 0.4]).unwrap();
        assert!(in_p(&TapeElement { x: 1, p: 0.0 }, &d));
        let point = Dist::point(3, 0).unwrap();
        assert!(!in_p(&TapeElement { x: 1, p: 0.0 }, &point));
        let u = Dist::uniform(4).unwrap();
        assert!(!in_p(&TapeElement { x: 2, p: 0.3 }, &u));

        let e = TapeElement { x: 1, p: 0.35 };
        assert_eq!(in_scaled_q(&e, &d, 1.0), in_p(&e, &d));
        assert!(!in_scaled_q(
            &TapeElement { x: 0, p: 0.0 },
            &Dist::point(2, 1).unwrap(),
            1e9
        ));
        let q = Dist::new(vec![0.1, 0.9]).unwrap();
        assert!(in_scaled_q(&TapeElement { x: 0, p: 0.3 }, &q, 4.0));
    }

    #[test]
    fn parameters() {
        assert_eq!(default_k_bits(0.01), 4);
        assert_eq!(default_k_bits(0.5), 1);
        assert_eq!(default_k_bits(0.25), 2);
        let cfg = SamplerConfig::new(0.01).unwrap();
        assert_eq!(cfg.hashes_through(0), 9);
        assert_eq!(cfg.hashes_through(1), 12);
        assert_eq!(cfg.hashes_before(0), 0);
        assert!(SamplerConfig::new(0.0).is_err());
        assert!(SamplerConfig::new(0.6).is_err());
        let p = Dist::new(vec![0.9, 0.1]).unwrap();
        let q = Dist::new(vec![0.1, 0.9]).unwrap();
        // log2 9 = 3.17, sqrt = 1.78, ceil 2, plus 2
        assert_eq!(default_t_max(&p, &q), 4);
        assert_eq!(
            default_t_max(&p, &Dist::point(2, 1).unwrap()),
            DEFAULT_T_MAX_CAP
        );
        assert_eq!(default_t_max(&q, &q), 2);
    }

    #[test]
    fn comm_bound_examples() {
        let u = Dist::uniform(4).unwrap();
        assert!((comm_bound(&u, &u, 0, 0.25) - 12.0).abs() < 1e-12);
        let p = Dist::point(1 << 16, 0).unwrap();
        let q = Dist::uniform(1 << 16).unwrap();
        let l = 100f64.log2();
        assert!((comm_bound(&p, &q, 0, 0.01) - (16.0 + l + l.log2() + 20.0 + 9.0)).abs() < 1e-9);
        assert!(comm_bound(&u, &Dist::point(4, 1).unwrap(), 0, 0.1).is_infinite());
        // P(a) < Q(a) clamps the ratio to zero
        let small = Dist::new(vec![0.1, 0.9]).unwrap();
        assert!((comm_bound(&small, &u, 0, 0.25) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn pick_point_mass() {
        let p = Dist::point(6, 4).unwrap();
        for s in 0..200 {
            assert_eq!(pick_a_element(&p, &seed(s)).unwrap().1.x, 4);
        }
    }

    #[test]
    fn pick_frequencies() {
        let p = Dist::new(vec![0.75, 0.25]).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|&s| pick_a_element(&p, &seed(s)).unwrap().1.x == 0)
            .count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.01);

        let u = Dist::uniform(8).unwrap();
        let mut counts = [0usize; 8];
        for s in 0..n {
            counts[pick_a_element(&u, &seed(s)).unwrap().1.x] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn singleton_universe_always_matches() {
        let d = Dist::point(1, 0).unwrap();
        let cfg = SamplerConfig::for_pair(&d, &d, 0.1).unwrap();
        for s in 0..100 {
            let run = run_sampler(&d, &d, &seed(s), cfg).unwrap();
            assert_eq!(run.b, Some(0));
            assert_eq!(run.stats.outcome, Outcome::Match);
            assert_eq!(run.stats.k, 1);
        }
    }

    #[test]
    fn identical_distributions_finish_at_first_iteration() {
        let p = Dist::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let cfg = SamplerConfig::for_pair(&p, &p, 0.01).unwrap();
        for s in 0..500 {
            let run = run_sampler(&p, &p, &seed(s), cfg).unwrap();
            if run.stats.outcome == Outcome::Match {
                assert_eq!(run.stats.rounds_t, 0);
                assert_eq!(run.stats.bits_b, 1);
                assert_eq!(run.stats.bits_a, 4 + 9);
            }
        }
    }

    #[test]
    fn unsupported_symbol_aborts_at_t_max() {
        let p = Dist::point(2, 0).unwrap();
        let q = Dist::point(2, 1).unwrap();
        let cfg = SamplerConfig::new(0.1).unwrap().with_t_max(3);
        let run = run_sampler(&p, &q, &seed(1), cfg).unwrap();
        assert_eq!(run.a, 0);
        if run.stats.outcome == Outcome::AbortTMax {
            assert_eq!(run.stats.rounds_t, 3);
            assert_eq!(run.stats.bits_b, 4);
        } else {
            // only a hash collision on a wrong element can end it early
            assert_eq!(run.stats.outcome, Outcome::Mismatch);
        }
    }

    #[test]
    fn universe_mismatch_is_rejected() {
        let p = Dist::uniform(2).unwrap();
        let q = Dist::uniform(3).unwrap();
        let cfg = SamplerConfig::new(0.1).unwrap();
        assert!(matches!(
            run_sampler(&p, &q, &seed(0), cfg),
            Err(Error::UniverseMismatch { .. })
        ));
    }

    #[test]
    fn receiver_rejects_malformed_bursts() {
        let q = Dist::uniform(4).unwrap();
        let cfg = SamplerConfig::new(0.01).unwrap();
        let mut r = Receiver::new(&q, &seed(0), cfg).unwrap();
        assert!(r.deliver(&Bits::from_uint(0, 3)).is_err());
        r.deliver(&Bits::from_uint(0, 4)).unwrap();
        assert!(r.deliver(&Bits::from_uint(0, 3)).is_err());
    }
}

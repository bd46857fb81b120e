//! Attribute-conditioned categorical policy that emits point messages.
//!
//! For each context the policy owns independent softmax heads:
//!
//! * four delimiter heads (`<ref>`, `</ref>`, `<point>`, `</point>`), each a
//!   two-way choice between emitting the token and dropping it; only
//!   sampled when delimiters are stochastic,
//! * a declared-count head over `0..=k_max` for the `<ref>` value,
//! * a count head over `0..=k_max` for the number of points emitted,
//! * `k_max` slot heads over the `bins × bins` coordinate cells; slot `k`
//!   supplies the `k`-th point.
//!
//! A sampled sequence is: `<ref>`, declared count, `</ref>`, `<point>`,
//! emitted count, one bin per emitted point, `</point>`. The two counts are
//! independent, so declared and emitted counts can disagree. Deterministic
//! delimiters are emitted by the decoder and carry no probability mass.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::GroupLabel;
use crate::geometry::{GridPoint, GRID_EXTENT};
use crate::point_protocol::{POINT_CLOSE, POINT_OPEN, REF_CLOSE, REF_OPEN};
use crate::{Error, Result};

pub const POLICY_MAGIC: [u8; 8] = *b"GZTOYPOL";
pub const POLICY_VERSION: u32 = 1;

const DELIM_PARAMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Delimiter {
    RefOpen,
    RefClose,
    PointOpen,
    PointClose,
}

impl Delimiter {
    pub const ALL: [Delimiter; 4] = [
        Delimiter::RefOpen,
        Delimiter::RefClose,
        Delimiter::PointOpen,
        Delimiter::PointClose,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            Delimiter::RefOpen => REF_OPEN,
            Delimiter::RefClose => REF_CLOSE,
            Delimiter::PointOpen => POINT_OPEN,
            Delimiter::PointClose => POINT_CLOSE,
        }
    }
}

/// Choice index of a delimiter head that emits the token.
pub const EMIT: usize = 0;
/// Choice index of a delimiter head that drops the token.
pub const OMIT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Delimiter(Delimiter),
    /// Value written inside `<ref>`.
    Ref,
    /// Number of points emitted.
    Count,
    Slot(usize),
}

/// One sampled token: which head produced it and which option it chose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenChoice {
    pub head: Head,
    pub choice: usize,
}

/// Conditioning information for one prompt: the audience group and the scene.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyContext {
    pub group: GroupLabel,
    pub scene: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub contexts: usize,
    pub k_max: usize,
    /// Coordinate bins per axis.
    pub bins: usize,
    pub stochastic_delimiters: bool,
}

impl PolicyShape {
    pub fn per_context(&self) -> usize {
        DELIM_PARAMS + 2 * (self.k_max + 1) + self.k_max * self.bins * self.bins
    }

    pub fn total(&self) -> usize {
        self.contexts * self.per_context()
    }

    /// Offset and width of a head's logits inside the parameter vector.
    pub fn head_range(&self, context: usize, head: Head) -> std::ops::Range<usize> {
        let base = context * self.per_context();
        let cells = self.bins * self.bins;
        let (start, len) = match head {
            Head::Delimiter(d) => (2 * d.index(), 2),
            Head::Ref => (DELIM_PARAMS, self.k_max + 1),
            Head::Count => (DELIM_PARAMS + self.k_max + 1, self.k_max + 1),
            Head::Slot(k) => (DELIM_PARAMS + 2 * (self.k_max + 1) + k * cells, cells),
        };
        base + start..base + start + len
    }

    /// Grid-unit center of a coordinate bin.
    pub fn bin_center(&self, bin: usize) -> GridPoint {
        let width = GRID_EXTENT / self.bins as f64;
        let (bx, by) = (bin % self.bins, bin / self.bins);
        GridPoint::new(
            ((bx as f64 + 0.5) * width).round(),
            ((by as f64 + 0.5) * width).round(),
        )
    }
}

/// A sampled output together with the log-probability each token had under
/// the sampling policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub context: usize,
    pub tokens: Vec<TokenChoice>,
    pub logps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    shape: PolicyShape,
    params: Vec<f64>,
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Independent RNG stream for one sampled output. Mixing with SplitMix64
/// keeps streams for neighboring indices unrelated.
pub fn stream_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ToyPolicy {
    /// Uniform count and slot heads. With stochastic delimiters, each
    /// delimiter is emitted with probability `initial_validity^(1/4)`, so a
    /// fresh policy produces all four with probability `initial_validity`.
    pub fn new(shape: PolicyShape, initial_validity: f64) -> Result<Self> {
        if shape.k_max == 0 || shape.bins == 0 || shape.contexts == 0 {
            return Err(Error::validation("policy needs at least one context, count and bin"));
        }
        if !(initial_validity > 0.0 && initial_validity < 1.0) {
            return Err(Error::validation("initial validity must be in (0, 1)"));
        }
        let mut params = vec![0.0; shape.total()];
        let p_emit = initial_validity.powf(0.25);
        let emit_logit = (p_emit / (1.0 - p_emit)).ln();
        for c in 0..shape.contexts {
            for d in Delimiter::ALL {
                let r = shape.head_range(c, Head::Delimiter(d));
                params[r.start + EMIT] = emit_logit;
            }
        }
        Ok(Self { shape, params })
    }

    pub fn from_params(shape: PolicyShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.total() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                shape.total(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("policy logits must be finite"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn logits(&self, context: usize, head: Head) -> &[f64] {
        &self.params[self.shape.head_range(context, head)]
    }

    pub fn logits_mut(&mut self, context: usize, head: Head) -> &mut [f64] {
        let r = self.shape.head_range(context, head);
        &mut self.params[r]
    }

    pub fn log_prob(&self, context: usize, token: &TokenChoice) -> f64 {
        log_softmax(self.logits(context, token.head))[token.choice]
    }

    fn sample_head(&self, context: usize, head: Head, rng: &mut ChaCha8Rng) -> (TokenChoice, f64) {
        let lp = log_softmax(self.logits(context, head));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut choice = lp.len() - 1;
        for (i, l) in lp.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                choice = i;
                break;
            }
        }
        (TokenChoice { head, choice }, lp[choice])
    }

    /// Samples one output sequence.
    pub fn sample(&self, context: usize, rng: &mut ChaCha8Rng) -> Rollout {
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        let mut push = |(t, l): (TokenChoice, f64)| {
            tokens.push(t);
            logps.push(l);
        };
        let stochastic = self.shape.stochastic_delimiters;
        if stochastic {
            push(self.sample_head(context, Head::Delimiter(Delimiter::RefOpen), rng));
        }
        push(self.sample_head(context, Head::Ref, rng));
        if stochastic {
            push(self.sample_head(context, Head::Delimiter(Delimiter::RefClose), rng));
            push(self.sample_head(context, Head::Delimiter(Delimiter::PointOpen), rng));
        }
        let (count_tok, count_lp) = self.sample_head(context, Head::Count, rng);
        push((count_tok, count_lp));
        for k in 0..count_tok.choice {
            push(self.sample_head(context, Head::Slot(k), rng));
        }
        if stochastic {
            push(self.sample_head(context, Head::Delimiter(Delimiter::PointClose), rng));
        }
        Rollout {
            context,
            tokens,
            logps,
        }
    }

    /// `group_size` independent outputs, output `i` drawn from its own stream
    /// derived from `seed`.
    pub fn sample_group(&self, context: usize, group_size: usize, seed: u64) -> Vec<Rollout> {
        (0..group_size)
            .map(|i| {
                let mut rng = stream_rng(seed, &[context as u64, i as u64]);
                self.sample(context, &mut rng)
            })
            .collect()
    }

    /// Highest-probability choice for every head, as a token sequence.
    pub fn greedy(&self, context: usize) -> Rollout {
        let argmax = |head: Head| {
            let lp = log_softmax(self.logits(context, head));
            let (i, l) = lp
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
            (TokenChoice { head, choice: i }, l)
        };
        let mut tokens = Vec::new();
        let mut logps = Vec::new();
        let stochastic = self.shape.stochastic_delimiters;
        let mut push = |(t, l): (TokenChoice, f64)| {
            tokens.push(t);
            logps.push(l);
        };
        if stochastic {
            push(argmax(Head::Delimiter(Delimiter::RefOpen)));
        }
        push(argmax(Head::Ref));
        if stochastic {
            push(argmax(Head::Delimiter(Delimiter::RefClose)));
            push(argmax(Head::Delimiter(Delimiter::PointOpen)));
        }
        let count = argmax(Head::Count);
        push(count);
        for k in 0..count.0.choice {
            push(argmax(Head::Slot(k)));
        }
        if stochastic {
            push(argmax(Head::Delimiter(Delimiter::PointClose)));
        }
        Rollout {
            context,
            tokens,
            logps,
        }
    }

    /// Renders a rollout as protocol text.
    pub fn decode(&self, rollout: &Rollout) -> String {
        let emitted = |d: Delimiter| {
            if !self.shape.stochastic_delimiters {
                return true;
            }
            rollout
                .tokens
                .iter()
                .any(|t| t.head == Head::Delimiter(d) && t.choice == EMIT)
        };
        let mut text = String::new();
        if emitted(Delimiter::RefOpen) {
            text.push_str(REF_OPEN);
        }
        if let Some(declared) = rollout.tokens.iter().find(|t| t.head == Head::Ref) {
            text.push_str(&declared.choice.to_string());
        }
        if emitted(Delimiter::RefClose) {
            text.push_str(REF_CLOSE);
        }
        if emitted(Delimiter::PointOpen) {
            text.push_str(POINT_OPEN);
        }
        text.push('[');
        let pairs: Vec<String> = rollout
            .tokens
            .iter()
            .filter(|t| matches!(t.head, Head::Slot(_)))
            .map(|t| {
                let p = self.shape.bin_center(t.choice);
                format!("[{},{}]", p.gx as i64, p.gy as i64)
            })
            .collect();
        text.push_str(&pairs.join(","));
        text.push(']');
        if emitted(Delimiter::PointClose) {
            text.push_str(POINT_CLOSE);
        }
        text
    }

    /// Versioned binary blob: magic, version, shape, then `f64` parameters,
    /// all little endian.
    pub fn write_blob<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(&POLICY_MAGIC)?;
        sink.write_all(&POLICY_VERSION.to_le_bytes())?;
        for v in [self.shape.contexts, self.shape.k_max, self.shape.bins] {
            sink.write_all(&(v as u32).to_le_bytes())?;
        }
        sink.write_all(&[u8::from(self.shape.stochastic_delimiters)])?;
        for p in &self.params {
            sink.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(mut source: R) -> Result<Self> {
        let mut head = [0u8; 8 + 4 * 4 + 1];
        source.read_exact(&mut head)?;
        if head[..8] != POLICY_MAGIC {
            return Err(Error::validation("not a policy blob (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(head[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != POLICY_VERSION {
            return Err(Error::validation(format!("unsupported policy version {}", word(0))));
        }
        let shape = PolicyShape {
            contexts: word(1) as usize,
            k_max: word(2) as usize,
            bins: word(3) as usize,
            stochastic_delimiters: head[24] != 0,
        };
        let mut buf = vec![0u8; shape.total() * 8];
        source.read_exact(&mut buf)?;
        let params = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ToyPolicy::from_params(shape, params)
    }
}

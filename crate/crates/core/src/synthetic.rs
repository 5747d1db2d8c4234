//! Renders samples of a [`CausalSpec`] as token sequences.
//!
//! Each observed variable listed in the config becomes a contiguous segment
//! whose tokens are drawn from that `(variable, value)` pair's private
//! sub-vocabulary. Segments keep their configured order; filler tokens are
//! scattered into the gaps between them. Gold masks mark exactly the tokens
//! rendered from causal variables.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::{CausalSpec, Role, VarId};
use crate::corpus::{Corpus, Example, Splits};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub variable: String,
    /// Inclusive token-length range.
    pub length: [usize; 2],
    /// Optional explicit word lists, one per value of the variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<Vec<String>>>,
}

impl SegmentSpec {
    pub fn fixed(variable: &str, len: usize) -> Self {
        Self {
            variable: variable.to_string(),
            length: [len, len],
            words: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub segments: Vec<SegmentSpec>,
    pub seq_len: usize,
    /// Sub-vocabulary size per `(variable, value)`.
    pub vocab_per_value: usize,
    pub filler_vocab: usize,
    pub train_size: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
    /// Overrides `p(child = u | U = u)` for children of binary confounders.
    pub spurious_strength: Option<f64>,
}

impl Default for GenConfig {
    /// Ten-token reviews: two causal, two spurious and two noise tokens plus
    /// four fillers.
    fn default() -> Self {
        Self {
            segments: vec![
                SegmentSpec::fixed("X_A", 2),
                SegmentSpec::fixed("X_T", 2),
                SegmentSpec::fixed("N", 2),
            ],
            seq_len: 10,
            vocab_per_value: 50,
            filler_vocab: 50,
            train_size: 10_000,
            dev_size: 1_000,
            test_size: 1_000,
            seed: 0,
            spurious_strength: None,
        }
    }
}

/// Token → source variable lookup for rendered tokens.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<LexiconEntry>", into = "Vec<LexiconEntry>")]
pub struct Lexicon {
    entries: HashMap<String, (String, usize, Role)>,
}

/// Serialized form of one lexicon entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    pub token: String,
    pub variable: String,
    pub value: usize,
    pub role: Role,
}

impl From<Vec<LexiconEntry>> for Lexicon {
    fn from(entries: Vec<LexiconEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.token, (e.variable, e.value, e.role))).collect(),
        }
    }
}

impl From<Lexicon> for Vec<LexiconEntry> {
    fn from(lex: Lexicon) -> Self {
        let mut out: Vec<LexiconEntry> = lex
            .entries
            .into_iter()
            .map(|(token, (variable, value, role))| LexiconEntry { token, variable, value, role })
            .collect();
        out.sort_by(|a, b| a.token.cmp(&b.token));
        out
    }
}

impl Lexicon {
    /// Source `(variable, value, role)` of a token; `None` for fillers.
    pub fn lookup(&self, token: &str) -> Option<(&str, usize, Role)> {
        self.entries.get(token).map(|(v, x, r)| (v.as_str(), *x, *r))
    }

    pub fn role(&self, token: &str) -> Option<Role> {
        self.lookup(token).map(|(_, _, r)| r)
    }

    pub fn is_spurious(&self, token: &str) -> bool {
        self.role(token) == Some(Role::Spurious)
    }

    pub fn tokens_with_role(&self, role: Role) -> std::collections::HashSet<String> {
        self.entries
            .iter()
            .filter(|(_, (_, _, r))| *r == role)
            .map(|(t, _)| t.clone())
            .collect()
    }
}

/// Generated splits plus the latent values behind every example.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub splits: Splits,
    pub lexicon: Lexicon,
    /// Per split (train, dev, test): full assignment of every example, in
    /// spec variable order.
    pub latents: [Vec<Vec<usize>>; 3],
    pub spec: CausalSpec,
}

struct Plan {
    segments: Vec<(VarId, [usize; 2], Vec<Vec<String>>, bool)>,
    filler: Vec<String>,
    lexicon: Lexicon,
}

fn plan(spec: &CausalSpec, cfg: &GenConfig) -> Result<Plan> {
    if cfg.train_size == 0 || cfg.dev_size == 0 || cfg.test_size == 0 {
        return Err(Error::Config("corpus sizes must be at least 1".into()));
    }
    if cfg.seq_len == 0 {
        return Err(Error::Config("sequence length must be positive".into()));
    }
    let max_total: usize = cfg.segments.iter().map(|s| s.length[1]).sum();
    if max_total > cfg.seq_len {
        return Err(Error::Config(format!(
            "segments need up to {max_total} tokens but sequences have {}",
            cfg.seq_len
        )));
    }
    let mut lexicon = Lexicon::default();
    let mut segments = Vec::new();
    let insert = |lexicon: &mut Lexicon, token: &str, owner: (String, usize, Role)| -> Result<()> {
        if lexicon.entries.insert(token.to_string(), owner).is_some() {
            return Err(Error::Config(format!("vocabulary collision on token `{token}`")));
        }
        Ok(())
    };
    for seg in &cfg.segments {
        let var = spec.var(&seg.variable)?;
        let v = spec.variable(var);
        if !v.role.is_observed_feature() {
            return Err(Error::Config(format!(
                "segment variable `{}` has role {}, expected causal, spurious or noise",
                v.name, v.role
            )));
        }
        if seg.length[0] > seg.length[1] || seg.length[1] == 0 {
            return Err(Error::Config(format!("bad length range {:?} for `{}`", seg.length, v.name)));
        }
        let words = match &seg.words {
            Some(w) => {
                if w.len() != v.cardinality || w.iter().any(Vec::is_empty) {
                    return Err(Error::Config(format!(
                        "`{}` needs {} non-empty word lists",
                        v.name, v.cardinality
                    )));
                }
                w.clone()
            }
            None => (0..v.cardinality)
                .map(|x| {
                    (0..cfg.vocab_per_value.max(1))
                        .map(|k| format!("{}={x}#{k:02}", v.name.to_lowercase()))
                        .collect()
                })
                .collect(),
        };
        for (x, list) in words.iter().enumerate() {
            for w in list {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(Error::Config(format!("word `{w}` is empty or contains whitespace")));
                }
                // The same variable may appear in several segments.
                match lexicon.entries.get(w) {
                    Some((owner, ox, _)) if *owner == v.name && *ox == x => {}
                    _ => insert(&mut lexicon, w, (v.name.clone(), x, v.role))?,
                }
            }
        }
        segments.push((var, seg.length, words, v.role == Role::Causal));
    }
    let filler: Vec<String> = (0..cfg.filler_vocab.max(1)).map(|k| format!("filler#{k:02}")).collect();
    for f in &filler {
        if lexicon.entries.contains_key(f) {
            return Err(Error::Config(format!("vocabulary collision on token `{f}`")));
        }
    }
    Ok(Plan {
        segments,
        filler,
        lexicon,
    })
}

fn example_seed(seed: u64, split: u64, index: u64) -> u64 {
    // splitmix64 of the combined key
    let mut z = seed
        .wrapping_add(split.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ancestral sample of every variable.
pub fn sample_assignment<R: Rng>(spec: &CausalSpec, rng: &mut R) -> Vec<usize> {
    let mut values = vec![0; spec.len()];
    for &id in spec.topological_order() {
        let v = spec.variable(id);
        let row = &v.cpt[spec.cpt_row(id, &values)];
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (x, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = x;
                break;
            }
        }
        values[id.0] = pick;
    }
    values
}

fn render(spec: &CausalSpec, plan: &Plan, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (Example, Vec<usize>) {
    let values = sample_assignment(spec, rng);
    let lengths: Vec<usize> = plan
        .segments
        .iter()
        .map(|(_, [lo, hi], _, _)| rng.gen_range(*lo..=*hi))
        .collect();
    let fillers = cfg.seq_len - lengths.iter().sum::<usize>();
    let mut gaps = vec![0usize; plan.segments.len() + 1];
    let slots = gaps.len();
    for _ in 0..fillers {
        gaps[rng.gen_range(0..slots)] += 1;
    }
    let mut tokens = Vec::with_capacity(cfg.seq_len);
    let mut mask = Vec::with_capacity(cfg.seq_len);
    let push_fillers = |n: usize, tokens: &mut Vec<String>, mask: &mut Vec<bool>, rng: &mut ChaCha8Rng| {
        for _ in 0..n {
            tokens.push(plan.filler[rng.gen_range(0..plan.filler.len())].clone());
            mask.push(false);
        }
    };
    for (k, ((var, _, words, causal), &len)) in plan.segments.iter().zip(&lengths).enumerate() {
        push_fillers(gaps[k], &mut tokens, &mut mask, rng);
        let list = &words[values[var.0]];
        for _ in 0..len {
            tokens.push(list[rng.gen_range(0..list.len())].clone());
            mask.push(*causal);
        }
    }
    push_fillers(gaps[plan.segments.len()], &mut tokens, &mut mask, rng);
    let label = values[spec.label().0];
    (Example::new(tokens, label).with_gold(mask), values)
}

/// Draws i.i.d. train/dev/test examples from `spec`. Deterministic in
/// `cfg.seed`; parallel and sequential builds produce identical corpora.
pub fn generate_corpus(spec: &CausalSpec, cfg: &GenConfig) -> Result<SyntheticCorpus> {
    let spec = match cfg.spurious_strength {
        Some(s) => spec.with_spurious_strength(s)?,
        None => spec.clone(),
    };
    let plan = plan(&spec, cfg)?;
    let sizes = [cfg.train_size, cfg.dev_size, cfg.test_size];
    let mut corpora: Vec<Corpus> = Vec::with_capacity(3);
    let mut latents: Vec<Vec<Vec<usize>>> = Vec::with_capacity(3);
    for (split, &n) in sizes.iter().enumerate() {
        let rendered = parallel::map_range(n, |i| {
            let mut rng = ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, split as u64, i as u64));
            render(&spec, &plan, cfg, &mut rng)
        });
        let (examples, values): (Vec<Example>, Vec<Vec<usize>>) = rendered.into_iter().unzip();
        corpora.push(Corpus::new(examples));
        latents.push(values);
    }
    let test = corpora.pop().unwrap();
    let dev = corpora.pop().unwrap();
    let train = corpora.pop().unwrap();
    let mut latents = latents.into_iter();
    Ok(SyntheticCorpus {
        splits: Splits { train, dev, test },
        lexicon: plan.lexicon,
        latents: [latents.next().unwrap(), latents.next().unwrap(), latents.next().unwrap()],
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            train_size: 200,
            dev_size: 20,
            test_size: 20,
            seed: 9,
            ..GenConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let spec = CausalSpec::toy();
        let a = generate_corpus(&spec, &small()).unwrap();
        let b = generate_corpus(&spec, &small()).unwrap();
        assert_eq!(a.splits, b.splits);
        let c = generate_corpus(&spec, &GenConfig { seed: 10, ..small() }).unwrap();
        assert_ne!(a.splits.train, c.splits.train);
    }

    #[test]
    fn gold_mask_marks_causal_tokens_exactly() {
        let spec = CausalSpec::toy();
        let g = generate_corpus(&spec, &small()).unwrap();
        for ex in g.splits.train.iter() {
            assert_eq!(ex.len(), 10);
            let mask = ex.gold_mask.as_ref().unwrap();
            for (tok, &m) in ex.tokens.iter().zip(mask) {
                assert_eq!(m, g.lexicon.role(tok) == Some(Role::Causal), "{tok}");
            }
            assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
        }
    }

    #[test]
    fn tokens_encode_latent_values() {
        let spec = CausalSpec::toy();
        let g = generate_corpus(&spec, &small()).unwrap();
        let xa = spec.var("X_A").unwrap();
        for (ex, values) in g.splits.train.iter().zip(&g.latents[0]) {
            assert_eq!(ex.label, values[spec.label().0]);
            for tok in &ex.tokens {
                if let Some(("X_A", x, _)) = g.lexicon.lookup(tok) {
                    assert_eq!(x, values[xa.0]);
                }
            }
        }
    }

    #[test]
    fn config_errors() {
        let spec = CausalSpec::toy();
        let overflow = GenConfig {
            seq_len: 5,
            ..small()
        };
        assert!(generate_corpus(&spec, &overflow).is_err());
        let mut collide = small();
        collide.segments[0].words = Some(vec![vec!["good".into()], vec!["bad".into()]]);
        collide.segments[1].words = Some(vec![vec!["tasty".into()], vec!["good".into()]]);
        let err = generate_corpus(&spec, &collide).unwrap_err();
        assert!(err.to_string().contains("collision"));
        let mut label_seg = small();
        label_seg.segments.push(SegmentSpec::fixed("Y", 1));
        assert!(generate_corpus(&spec, &label_seg).is_err());
        assert!(generate_corpus(&spec, &GenConfig { dev_size: 0, ..small() }).is_err());
    }
}

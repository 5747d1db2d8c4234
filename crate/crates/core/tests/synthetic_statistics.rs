use rationale_core::causal::{CausalSpec, Role};
use rationale_core::synthetic::{generate_corpus, GenConfig};

fn corpus(strength: Option<f64>) -> rationale_core::synthetic::SyntheticCorpus {
    let cfg = GenConfig {
        spurious_strength: strength,
        seed: 17,
        ..GenConfig::default()
    };
    generate_corpus(&CausalSpec::toy(), &cfg).unwrap()
}

/// `|p̂ - p| ≤ 3 σ` for a binomial proportion over `n` draws.
fn within_three_sigma(count: usize, n: usize, p: f64) -> bool {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (count as f64 / n as f64 - p).abs() <= 3.0 * sigma
}

/// The value a segment renders, read back from its tokens.
fn segment_value(c: &rationale_core::synthetic::SyntheticCorpus, tokens: &[String], variable: &str) -> usize {
    let values: Vec<usize> = tokens
        .iter()
        .filter_map(|t| c.lexicon.lookup(t))
        .filter(|(v, _, _)| *v == variable)
        .map(|(_, x, _)| x)
        .collect();
    assert!(!values.is_empty() && values.iter().all(|&x| x == values[0]));
    values[0]
}

#[test]
fn rendered_frequencies_match_the_spec() {
    let c = corpus(None);
    let spec = CausalSpec::toy();
    let train = &c.splits.train;
    let n = train.len();
    assert_eq!(n, 10_000);
    let mut y1 = 0;
    let (mut t1, mut a1_given_t1, mut y1_given_t1) = (0, 0, 0);
    for ex in train.iter() {
        let (t, a) = (segment_value(&c, &ex.tokens, "X_T"), segment_value(&c, &ex.tokens, "X_A"));
        y1 += ex.label;
        if t == 1 {
            t1 += 1;
            a1_given_t1 += a;
            y1_given_t1 += ex.label;
        }
    }
    let y = spec.var("Y").unwrap();
    let p_y = spec
        .conditional_distribution(y, &rationale_core::causal::Assignment::new())
        .unwrap()
        .prob(1);
    assert!(within_three_sigma(y1, n, p_y), "P(Y=1) {}", y1 as f64 / n as f64);
    assert!(within_three_sigma(t1, n, 0.5));
    assert!(within_three_sigma(a1_given_t1, t1, 0.82), "P(X_A=1|X_T=1) {}", a1_given_t1 as f64 / t1 as f64);
    assert!(within_three_sigma(y1_given_t1, t1, 0.756), "P(Y=1|X_T=1) {}", y1_given_t1 as f64 / t1 as f64);
}

#[test]
fn strength_override_raises_co_occurrence() {
    let c = corpus(Some(0.95));
    let (mut t1, mut a1) = (0, 0);
    for ex in c.splits.train.iter() {
        if segment_value(&c, &ex.tokens, "X_T") == 1 {
            t1 += 1;
            a1 += segment_value(&c, &ex.tokens, "X_A");
        }
    }
    // 0.95² + 0.05²
    assert!(within_three_sigma(a1, t1, 0.905));
}

#[test]
fn gold_masks_are_the_causal_tokens() {
    let c = corpus(Some(0.9));
    for split in [&c.splits.train, &c.splits.dev, &c.splits.test] {
        for ex in split.iter() {
            let gold = ex.gold_mask.as_ref().unwrap();
            for (t, &g) in ex.tokens.iter().zip(gold) {
                assert_eq!(g, c.lexicon.role(t) == Some(Role::Causal), "{t}");
            }
        }
    }
}

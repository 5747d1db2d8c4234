//! Alternating two-phase training.
//!
//! Each batch gets one predictor step (extractor frozen) followed by one
//! extractor step (predictor frozen). The step functions take the frozen
//! model by shared reference, so a phase cannot write to the other model's
//! parameters. Batches are split into fixed-size chunks whose gradients are
//! summed in chunk order, which keeps results independent of thread count.

use std::collections::HashSet;
use std::path::PathBuf;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{balance_training_split, Batch, EncodedCorpus, Splits, Vocabulary, DEFAULT_MAX_LEN};
use crate::criteria::{
    cross_entropy_batch, kl_batch, sparsity_coherence_batch, spurious_penalty_batch, Criterion, CriterionConfig,
    LossBreakdown, Phase,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_split, EvalReport, SeedResult, SplitEval};
use crate::nn::{Adam, Parameters, Precision, Real};
use crate::parallel;
use crate::rationalizer::{
    complement_multiplier, fingerprint, gumbel_difference, Checkpoint, Extractor, ModelDims, Predictor, SampleMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub criterion: CriterionConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Gumbel-softmax temperature.
    pub temperature: f64,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub precision: Precision,
    /// Rows per parallel work unit inside a batch.
    pub chunk_size: usize,
    pub max_len: usize,
    /// Tokens seen fewer times in the training split map to `<unk>`.
    pub min_count: usize,
    /// Subsample the majority class of the training split.
    pub balance: bool,
    /// Allowed `|measured S - s|` (as a fraction) for dev model selection.
    pub selection_tolerance: f64,
    /// Snapshot and compare the frozen model around every step.
    pub verify_isolation: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            criterion: CriterionConfig::default(),
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            temperature: 1.0,
            embedding_dim: 100,
            hidden_dim: 200,
            precision: Precision::F32,
            chunk_size: 32,
            max_len: DEFAULT_MAX_LEN,
            min_count: 1,
            balance: false,
            selection_tolerance: 0.05,
            verify_isolation: cfg!(debug_assertions),
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    /// Named presets: `beer` (lr 1e-4, batch 128) and `hotel` (lr 1e-4, batch 256).
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "beer" => {}
            "hotel" => cfg.batch_size = 256,
            other => return Err(Error::Config(format!("unknown preset `{other}` (beer, hotel)"))),
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.criterion.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be at least 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return bad("embedding_dim, hidden_dim and max_len must be positive".into());
        }
        if !(self.selection_tolerance >= 0.0) {
            return bad("selection_tolerance must be non-negative".into());
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return bad("checkpoint_every needs checkpoint_dir".into());
        }
        Ok(())
    }

    /// The settings that determine training results; output paths and the
    /// isolation check are left out.
    fn identity(&self) -> Self {
        Self {
            verify_isolation: false,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_path: None,
            ..self.clone()
        }
    }

    /// Fingerprint of everything that affects the trained models. The
    /// optimizer is fixed (Adam, β = (0.9, 0.999), ε = 1e-8) and named here.
    pub fn fingerprint(&self) -> Result<String> {
        fingerprint(&(OPTIMIZER_TAG, self.identity()))
    }

    /// Fingerprint shared by all seeds of one configuration.
    pub fn family_fingerprint(&self) -> Result<String> {
        fingerprint(&(OPTIMIZER_TAG, Self { seed: 0, ..self.identity() }))
    }
}

const OPTIMIZER_TAG: &str = "adam(0.9,0.999,1e-8)";

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// Percent of tokens selected by the (sampled) training mask.
    pub sparsity: f64,
}

/// Line-delimited JSON log with a running SHA-256 checksum.
#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    lines: Vec<String>,
    hasher: Sha256,
}

impl TrainingLog {
    pub fn push(&mut self, record: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.lines.push(line);
        Ok(())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn checksum(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    pub fn to_text(&self) -> String {
        let mut s = self.lines.join("\n");
        if !s.is_empty() {
            s.push('\n');
        }
        s
    }
}

/// Result of one step: the loss terms and the sampled-mask sparsity (percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    pub sparsity: f64,
}

struct ChunkOut<G> {
    loss: LossBreakdown,
    selected_fraction: f64,
    grad: G,
}

fn chunk_views<'a, T: Real>(batch: &Batch, noise: &'a Array2<T>, chunk_size: usize) -> Vec<(Batch, ArrayView2<'a, T>)> {
    let mut out = Vec::new();
    let mut start = 0;
    for chunk in batch.chunks(chunk_size) {
        let n = chunk.size();
        let l = chunk.seq_len();
        out.push((chunk, noise.slice(s![start..start + n, ..l])));
        start += n;
    }
    out
}

fn reduce<G: Clone, F: Fn(&mut G, &G)>(outs: Vec<Result<ChunkOut<G>>>, add: F) -> Result<(StepOutput, G)> {
    let mut iter = outs.into_iter();
    let first = iter.next().ok_or(Error::EmptyCorpus)??;
    let mut loss = first.loss;
    let mut frac = first.selected_fraction;
    let mut grad = first.grad;
    for o in iter {
        let o = o?;
        loss.add(&o.loss);
        frac += o.selected_fraction;
        add(&mut grad, &o.grad);
    }
    Ok((StepOutput { loss, sparsity: 100.0 * frac }, grad))
}

fn selected_fraction<T: Real>(mask: &Array2<T>, lengths: &[usize], scale: f64) -> f64 {
    mask.rows()
        .into_iter()
        .zip(lengths)
        .map(|(r, &n)| r.iter().map(|v| v.as_f64()).sum::<f64>() / n.max(1) as f64)
        .sum::<f64>()
        * scale
}

fn check_finite(out: &StepOutput, grad_ok: bool, step: usize, phase: Phase) -> Result<()> {
    if !out.loss.is_finite() || !grad_ok {
        return Err(Error::NonFinite {
            step,
            phase: phase.to_string(),
            dump: serde_json::to_string(&out.loss).unwrap_or_else(|_| format!("{:?}", out.loss)),
        });
    }
    Ok(())
}

/// Predictor-phase loss and gradients without updating anything.
///
/// MRD: `CE(f_P(X)) + CE(f_P(X_{-Z}))`; MMI variants: `CE(f_P(Z))`. The mask
/// is computed from the frozen extractor, so no gradient reaches it.
pub fn predictor_objective<T: Real>(
    batch: &Batch,
    extractor: &Extractor<T>,
    predictor: &Predictor<T>,
    cfg: &TrainConfig,
    noise: &Array2<T>,
) -> Result<(StepOutput, Predictor<T>)> {
    let scale = 1.0 / batch.size() as f64;
    let chunks = chunk_views(batch, noise, cfg.chunk_size);
    let outs = parallel::map_slice(&chunks, |(chunk, noise)| -> Result<ChunkOut<Predictor<T>>> {
        let (_, mask) = extractor.select(chunk, cfg.temperature, SampleMode::Train, Some(noise.view()))?;
        let mut grad = predictor.zeros_like();
        let mut loss = LossBreakdown::default();
        match cfg.criterion.criterion {
            Criterion::Mrd => {
                let full = predictor.forward(chunk, None)?;
                let (ce_full, d_full) = cross_entropy_batch(&full.probs, &chunk.labels, scale);
                predictor.backward(chunk, &full, &d_full, Some(&mut grad), false);
                let pad = chunk.pad_mask::<T>();
                let comp_mult = complement_multiplier(mask.hard.view(), pad.view());
                let comp = predictor.forward(chunk, Some(comp_mult.view()))?;
                let (ce_comp, d_comp) = cross_entropy_batch(&comp.probs, &chunk.labels, scale);
                predictor.backward(chunk, &comp, &d_comp, Some(&mut grad), false);
                loss.full_ce = ce_full;
                loss.complement_ce = ce_comp;
                loss.total = ce_full + ce_comp;
            }
            Criterion::Mmi | Criterion::MmiPenalty => {
                let rat = predictor.forward(chunk, Some(mask.hard.view()))?;
                let (ce, d) = cross_entropy_batch(&rat.probs, &chunk.labels, scale);
                predictor.backward(chunk, &rat, &d, Some(&mut grad), false);
                loss.rationale_ce = ce;
                loss.total = ce;
            }
        }
        Ok(ChunkOut {
            loss,
            selected_fraction: selected_fraction(&mask.hard, &chunk.lengths, scale),
            grad,
        })
    });
    reduce(outs, |a, b| a.add_assign(b))
}

/// How the extractor objective treats the sampled mask in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskForward {
    /// Hard 0/1 values forward, relaxed gradient backward.
    StraightThrough,
    /// Relaxed values in both passes (a smooth objective, used for
    /// gradient checks).
    Relaxed,
}

/// Extractor-phase loss and gradients without updating anything.
///
/// MRD: `-KL(P(Ŷ | X) ‖ P(Ŷ | X_{-Z})) + Ω(M)`; MMI: `CE(f_P(Z)) + Ω(M)`,
/// plus `λ · spurious-selection` for the penalty variant.
pub fn extractor_objective<T: Real>(
    batch: &Batch,
    extractor: &Extractor<T>,
    predictor: &Predictor<T>,
    cfg: &TrainConfig,
    noise: &Array2<T>,
    forward: MaskForward,
) -> Result<(StepOutput, Extractor<T>)> {
    let crit = &cfg.criterion;
    if crit.criterion == Criterion::MmiPenalty && batch.spurious.is_none() {
        return Err(Error::Config("mmi+penalty needs spurious-token flags on the data".into()));
    }
    let scale = 1.0 / batch.size() as f64;
    let tau = T::of(cfg.temperature);
    let chunks = chunk_views(batch, noise, cfg.chunk_size);
    let outs = parallel::map_slice(&chunks, |(chunk, noise)| -> Result<ChunkOut<Extractor<T>>> {
        let (pass, mask) = extractor.select(chunk, cfg.temperature, SampleMode::Train, Some(noise.view()))?;
        let m = match forward {
            MaskForward::StraightThrough => &mask.hard,
            MaskForward::Relaxed => &mask.soft,
        };
        let pad = chunk.pad_mask::<T>();
        let mut loss = LossBreakdown::default();
        let mut dm = match crit.criterion {
            Criterion::Mrd => {
                let full = predictor.forward(chunk, None)?;
                let comp_mult = complement_multiplier(m.view(), pad.view());
                let comp = predictor.forward(chunk, Some(comp_mult.view()))?;
                let (kl, dkl) = kl_batch(&full.probs, &comp.probs, scale);
                loss.kl = kl;
                loss.total = -kl;
                let dmult = predictor
                    .backward(chunk, &comp, &dkl.mapv(|g| -g), None, true)
                    .expect("multiplier gradient requested");
                -(&dmult * &pad)
            }
            Criterion::Mmi | Criterion::MmiPenalty => {
                let rat = predictor.forward(chunk, Some(m.view()))?;
                let (ce, d) = cross_entropy_batch(&rat.probs, &chunk.labels, scale);
                loss.rationale_ce = ce;
                loss.total = ce;
                let dmult = predictor.backward(chunk, &rat, &d, None, true).expect("multiplier gradient requested");
                &dmult * &pad
            }
        };
        let (sp, coh, d_omega) = sparsity_coherence_batch(
            m.view(),
            &chunk.lengths,
            crit.sparsity,
            crit.lambda_sparsity,
            crit.lambda_coherence,
            scale,
        );
        loss.sparsity = sp;
        loss.coherence = coh;
        loss.total += sp + coh;
        dm += &d_omega;
        if crit.criterion == Criterion::MmiPenalty {
            let flags = chunk.spurious.as_ref().expect("checked above");
            let (pen, d_pen) = spurious_penalty_batch(m.view(), flags.view(), &chunk.lengths, crit.lambda_penalty, scale);
            loss.penalty = pen;
            loss.total += pen;
            dm += &d_pen;
        }
        // straight-through: d soft / d gap = soft (1 - soft) / τ
        let mut dgap = dm;
        ndarray::Zip::from(&mut dgap)
            .and(&mask.soft)
            .for_each(|g, &p| *g = *g * p * (T::one() - p) / tau);
        let dlogits: Vec<Array2<T>> = (0..chunk.seq_len())
            .map(|t| {
                let mut d = Array2::zeros((chunk.size(), 2));
                for i in 0..chunk.size() {
                    d[[i, 0]] = -dgap[[i, t]];
                    d[[i, 1]] = dgap[[i, t]];
                }
                d
            })
            .collect();
        let mut grad = extractor.zeros_like();
        extractor.backward(chunk, &pass, &dlogits, &mut grad);
        Ok(ChunkOut {
            loss,
            selected_fraction: selected_fraction(&mask.hard, &chunk.lengths, scale),
            grad,
        })
    });
    reduce(outs, |a, b| a.add_assign(b))
}

/// One predictor update with the extractor frozen.
pub fn predictor_step<T: Real>(
    batch: &Batch,
    extractor: &Extractor<T>,
    predictor: &mut Predictor<T>,
    optimizer: &mut Adam<T>,
    cfg: &TrainConfig,
    noise: &Array2<T>,
    step: usize,
) -> Result<StepOutput> {
    let (out, grad) = predictor_objective(batch, extractor, predictor, cfg, noise)?;
    check_finite(&out, grad.is_finite(), step, Phase::Predictor)?;
    optimizer.update(predictor, &grad);
    Ok(out)
}

/// One extractor update with the predictor frozen.
pub fn extractor_step<T: Real>(
    batch: &Batch,
    extractor: &mut Extractor<T>,
    predictor: &Predictor<T>,
    optimizer: &mut Adam<T>,
    cfg: &TrainConfig,
    noise: &Array2<T>,
    step: usize,
) -> Result<StepOutput> {
    let (out, grad) = extractor_objective(batch, extractor, predictor, cfg, noise, MaskForward::StraightThrough)?;
    check_finite(&out, grad.is_finite(), step, Phase::Extractor)?;
    optimizer.update(extractor, &grad);
    Ok(out)
}

/// Models, optimizers and the seeded noise stream for one run.
pub struct Trainer<T: Real> {
    pub cfg: TrainConfig,
    pub dims: ModelDims,
    pub extractor: Extractor<T>,
    pub predictor: Predictor<T>,
    extractor_opt: Adam<T>,
    predictor_opt: Adam<T>,
    rng: ChaCha8Rng,
    step: usize,
    pub log: TrainingLog,
}

impl<T: Real> Trainer<T> {
    pub fn new(cfg: TrainConfig, dims: ModelDims) -> Result<Self> {
        cfg.validate()?;
        dims.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
        let extractor = Extractor::new(&dims, &mut init);
        let predictor = Predictor::new(&dims, &mut init);
        Ok(Self {
            extractor_opt: Adam::new(&extractor, cfg.learning_rate),
            predictor_opt: Adam::new(&predictor, cfg.learning_rate),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED),
            extractor,
            predictor,
            dims,
            cfg,
            step: 0,
            log: TrainingLog::default(),
        })
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// One predictor step then one extractor step on `batch`.
    pub fn train_batch(&mut self, batch: &Batch, epoch: usize) -> Result<(StepOutput, StepOutput)> {
        let noise = gumbel_difference::<T, _>(batch.size(), batch.seq_len(), &mut self.rng);
        let frozen = self.cfg.verify_isolation.then(|| self.extractor.clone());
        let p = predictor_step(
            batch,
            &self.extractor,
            &mut self.predictor,
            &mut self.predictor_opt,
            &self.cfg,
            &noise,
            self.step,
        )?;
        if let Some(before) = frozen {
            assert!(before.bitwise_eq(&self.extractor), "predictor step changed the extractor");
        }
        self.record(epoch, Phase::Predictor, &p)?;

        let noise = gumbel_difference::<T, _>(batch.size(), batch.seq_len(), &mut self.rng);
        let frozen = self.cfg.verify_isolation.then(|| self.predictor.clone());
        let e = extractor_step(
            batch,
            &mut self.extractor,
            &self.predictor,
            &mut self.extractor_opt,
            &self.cfg,
            &noise,
            self.step,
        )?;
        if let Some(before) = frozen {
            assert!(before.bitwise_eq(&self.predictor), "extractor step changed the predictor");
        }
        self.record(epoch, Phase::Extractor, &e)?;
        self.step += 1;
        Ok((p, e))
    }

    fn record(&mut self, epoch: usize, phase: Phase, out: &StepOutput) -> Result<()> {
        self.log.push(&LogRecord {
            step: self.step,
            epoch,
            phase,
            loss: out.loss,
            sparsity: out.sparsity,
        })
    }

    pub fn train_epoch(&mut self, data: &EncodedCorpus, epoch: usize) -> Result<()> {
        for batch in data.batches(self.cfg.batch_size, self.cfg.seed, Some(epoch as u64)) {
            self.train_batch(&batch, epoch)?;
        }
        Ok(())
    }
}

/// Raw splits plus, for the penalty criterion, the set of tokens known to
/// be spurious.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub name: String,
    pub splits: Splits,
    pub spurious_tokens: Option<HashSet<String>>,
}

/// The splits encoded against one vocabulary.
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub train: EncodedCorpus,
    pub dev: EncodedCorpus,
    pub test: EncodedCorpus,
}

pub fn prepare_data(cfg: &TrainConfig, data: &TrainData) -> Result<PreparedData> {
    let splits = &data.splits;
    for (name, c) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
        if c.is_empty() {
            return Err(Error::Config(format!("{name} split is empty")));
        }
    }
    let train = if cfg.balance {
        balance_training_split(&splits.train, cfg.seed)?
    } else {
        splits.train.clone()
    };
    let vocab = Vocabulary::build(&train, cfg.min_count)?;
    let num_classes = [&train, &splits.dev, &splits.test]
        .iter()
        .map(|c| c.num_classes())
        .max()
        .unwrap_or(0)
        .max(2);
    let needs_flags = cfg.criterion.criterion == Criterion::MmiPenalty;
    if needs_flags && data.spurious_tokens.is_none() {
        return Err(Error::Config("mmi+penalty needs a spurious-token lexicon".into()));
    }
    let encode = |c: &crate::corpus::Corpus| -> Result<EncodedCorpus> {
        let enc = EncodedCorpus::new(c, &vocab, cfg.max_len)?;
        Ok(match (&data.spurious_tokens, needs_flags) {
            (Some(set), true) => enc.with_spurious_flags(c, |t| set.contains(t)),
            _ => enc,
        })
    };
    Ok(PreparedData {
        train: encode(&train)?,
        dev: encode(&splits.dev)?,
        test: encode(&splits.test)?,
        vocab,
        num_classes,
    })
}

/// Per-epoch dev metrics used for model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub dev_full_accuracy: f64,
    pub dev_rationale_accuracy: f64,
    /// Percent.
    pub dev_sparsity: f64,
    pub selected: bool,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
    pub history: Vec<EpochSummary>,
    pub selected_epoch: usize,
    pub dev: SplitEval,
    pub test: SplitEval,
    pub report: EvalReport,
}

/// Selection score: dev accuracy on the full input for MRD, on the
/// rationale for the MMI variants (their predictor never sees full input).
fn selection_score(cfg: &TrainConfig, eval: &SplitEval) -> f64 {
    match cfg.criterion.criterion {
        Criterion::Mrd => eval.full_accuracy,
        Criterion::Mmi | Criterion::MmiPenalty => eval.rationale_accuracy,
    }
}

pub fn train(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, data),
        Precision::F64 => train_typed::<f64>(cfg, data),
    }
}

pub fn train_typed<T: Real>(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    cfg.validate()?;
    if T::PRECISION != cfg.precision {
        return Err(Error::Config("precision does not match the element type".into()));
    }
    let prepared = prepare_data(cfg, data)?;
    let dims = ModelDims {
        vocab_size: prepared.vocab.len(),
        embedding_dim: cfg.embedding_dim,
        hidden_dim: cfg.hidden_dim,
        num_classes: prepared.num_classes,
    };
    let mut trainer = Trainer::<T>::new(cfg.clone(), dims)?;
    let eval_batch = cfg.batch_size.max(cfg.chunk_size);
    let target = cfg.criterion.sparsity * 100.0;
    let tolerance = cfg.selection_tolerance * 100.0;
    // (within tolerance, score, -|S - s|)
    let mut best: Option<((bool, f64, f64), usize, Extractor<T>, Predictor<T>, SplitEval)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        trainer.train_epoch(&prepared.train, epoch)?;
        let dev = evaluate_split(&trainer.extractor, &trainer.predictor, &prepared.dev, eval_batch, cfg.temperature)?;
        let gap = (dev.sparsity - target).abs();
        let key = (gap <= tolerance, selection_score(cfg, &dev), -gap);
        let better = match &best {
            None => true,
            Some((k, ..)) => match (key.0, k.0) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => key.1 > k.1,
                (false, false) => key.2 > k.2,
            },
        };
        history.push(EpochSummary {
            epoch,
            dev_full_accuracy: dev.full_accuracy,
            dev_rationale_accuracy: dev.rationale_accuracy,
            dev_sparsity: dev.sparsity,
            selected: false,
        });
        if better {
            best = Some((key, epoch, trainer.extractor.clone(), trainer.predictor.clone(), dev));
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            let dir = cfg.checkpoint_dir.as_ref().expect("validated");
            std::fs::create_dir_all(dir)?;
            Checkpoint::capture(&trainer.extractor, &trainer.predictor, dims, &prepared.vocab, &cfg.identity(), cfg.fingerprint()?)?
                .save(dir.join(format!("epoch-{:03}.json", epoch + 1)))?;
        }
    }
    if let Some(path) = &cfg.log_path {
        std::fs::write(path, trainer.log.to_text())?;
    }
    let (extractor, predictor, selected_epoch, dev) = match best {
        Some((_, epoch, e, p, dev)) => (e, p, epoch, dev),
        None => {
            let dev = evaluate_split(&trainer.extractor, &trainer.predictor, &prepared.dev, eval_batch, cfg.temperature)?;
            (trainer.extractor.clone(), trainer.predictor.clone(), 0, dev)
        }
    };
    if let Some(h) = history.get_mut(selected_epoch) {
        h.selected = true;
    }
    let test = evaluate_split(&extractor, &predictor, &prepared.test, eval_batch, cfg.temperature)?;
    let report = EvalReport::new(
        cfg.criterion.criterion,
        cfg.family_fingerprint()?,
        data.name.clone(),
        vec![SeedResult::from_eval(cfg.seed, &test)],
    );
    Ok(TrainOutcome {
        checkpoint: Checkpoint::capture(&extractor, &predictor, dims, &prepared.vocab, &cfg.identity(), cfg.fingerprint()?)?,
        log: trainer.log,
        history,
        selected_epoch,
        dev,
        test,
        report,
    })
}

/// Trains once per seed and aggregates the test rows.
pub fn train_seeds(cfg: &TrainConfig, data: &TrainData, seeds: &[u64]) -> Result<(Vec<TrainOutcome>, EvalReport)> {
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let outcomes = seeds
        .iter()
        .map(|&seed| train(&TrainConfig { seed, ..cfg.clone() }, data))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<EvalReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let report = EvalReport::combine(&reports)?;
    Ok((outcomes, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Example};

    fn fixture(n: usize) -> (EncodedCorpus, ModelDims) {
        let corpus: Corpus = (0..n)
            .map(|i| {
                let y = i % 2;
                let toks = vec![format!("c{y}"), format!("n{}", i % 5), format!("n{}", (i / 5) % 5), "pad".into()];
                Example::new(toks, y).with_gold(vec![true, false, false, false])
            })
            .collect();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let enc = EncodedCorpus::new(&corpus, &vocab, 256).unwrap();
        let dims = ModelDims {
            vocab_size: vocab.len(),
            embedding_dim: 8,
            hidden_dim: 8,
            num_classes: 2,
        };
        (enc, dims)
    }

    fn small_cfg(criterion: Criterion) -> TrainConfig {
        TrainConfig {
            criterion: CriterionConfig {
                criterion,
                sparsity: 0.25,
                ..Default::default()
            },
            learning_rate: 1e-2,
            batch_size: 32,
            chunk_size: 8,
            embedding_dim: 8,
            hidden_dim: 8,
            verify_isolation: true,
            ..Default::default()
        }
    }

    #[test]
    fn presets() {
        let beer = TrainConfig::preset("beer").unwrap();
        assert_eq!((beer.learning_rate, beer.batch_size), (1e-4, 128));
        let hotel = TrainConfig::preset("hotel").unwrap();
        assert_eq!((hotel.learning_rate, hotel.batch_size), (1e-4, 256));
        assert!(TrainConfig::preset("wine").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.criterion.sparsity = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprints_ignore_paths_and_family_ignores_seed() {
        let a = TrainConfig::default();
        let b = TrainConfig {
            log_path: Some("x.log".into()),
            ..a.clone()
        };
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let c = TrainConfig { seed: 7, ..a.clone() };
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
        assert_eq!(a.family_fingerprint().unwrap(), c.family_fingerprint().unwrap());
    }

    #[test]
    fn predictor_loss_decreases_on_repeated_batch() {
        let (enc, dims) = fixture(32);
        let cfg = small_cfg(Criterion::Mrd);
        let mut tr = Trainer::<f32>::new(cfg.clone(), dims).unwrap();
        let batch = enc.batch(&(0..32).collect::<Vec<_>>());
        let noise = Array2::zeros((32, batch.seq_len()));
        let first = predictor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise).unwrap().0.loss.total;
        for step in 0..50 {
            predictor_step(&batch, &tr.extractor, &mut tr.predictor, &mut tr.predictor_opt, &cfg, &noise, step).unwrap();
        }
        let last = predictor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise).unwrap().0.loss.total;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn all_zero_masks_give_finite_losses() {
        let (enc, dims) = fixture(8);
        let mut cfg = small_cfg(Criterion::Mrd);
        let mut tr = Trainer::<f32>::new(cfg.clone(), dims).unwrap();
        tr.extractor.head.bias[[0, 0]] = 1e4;
        let batch = enc.batch(&(0..8).collect::<Vec<_>>());
        let noise = Array2::zeros((8, batch.seq_len()));
        let (out, _) = predictor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise).unwrap();
        assert_eq!(out.sparsity, 0.0);
        assert!(out.loss.is_finite());
        cfg.criterion.criterion = Criterion::Mmi;
        let (out, _) = predictor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise).unwrap();
        assert!(out.loss.rationale_ce.is_finite());
    }

    #[test]
    fn chunking_does_not_change_results() {
        let (enc, dims) = fixture(20);
        let cfg = small_cfg(Criterion::Mrd);
        let tr = Trainer::<f64>::new(cfg.clone(), dims).unwrap();
        let batch = enc.batch(&(0..20).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = gumbel_difference::<f64, _>(20, batch.seq_len(), &mut rng);
        let a = extractor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise, MaskForward::StraightThrough).unwrap();
        let cfg1 = TrainConfig { chunk_size: 3, ..cfg };
        let b = extractor_objective(&batch, &tr.extractor, &tr.predictor, &cfg1, &noise, MaskForward::StraightThrough).unwrap();
        assert!((a.0.loss.total - b.0.loss.total).abs() < 1e-12);
        for (x, y) in a.1.tensors().iter().zip(b.1.tensors()) {
            assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (enc, dims) = fixture(40);
        let run = || {
            let mut tr = Trainer::<f32>::new(small_cfg(Criterion::Mmi), dims).unwrap();
            tr.train_epoch(&enc, 0).unwrap();
            tr.train_epoch(&enc, 1).unwrap();
            tr.log.checksum()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn penalty_needs_flags() {
        let (enc, dims) = fixture(8);
        let cfg = small_cfg(Criterion::MmiPenalty);
        let tr = Trainer::<f32>::new(cfg.clone(), dims).unwrap();
        let batch = enc.batch(&(0..8).collect::<Vec<_>>());
        let noise = Array2::zeros((8, batch.seq_len()));
        assert!(matches!(
            extractor_objective(&batch, &tr.extractor, &tr.predictor, &cfg, &noise, MaskForward::StraightThrough),
            Err(Error::Config(_))
        ));
    }
}

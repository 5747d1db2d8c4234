use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rationale_core::causal::{CausalSpec, Role};
use rationale_core::corpus::{corpus_statistics, load_annotated_dataset, write_jsonl, Corpus, CorpusStats, DatasetFormat, EncodedCorpus, Splits};
use rationale_core::evaluation::{
    evaluate_split, landscape_report, render_rationales, EvalReport, LandscapeCriterion, LandscapeRow, RenderFormat, RenderItem, SeedResult,
    SplitEval,
};
use rationale_core::nn::{Precision, Real};
use rationale_core::criteria::Criterion;
use rationale_core::rationalizer::{fingerprint, Checkpoint};
use rationale_core::synthetic::{generate_corpus, GenConfig, Lexicon};
use rationale_core::training::{train as train_run, EpochSummary, TrainConfig, TrainData};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, Overrides, RunConfig};
use crate::Failure;

fn short(fp: &str) -> &str {
    &fp[..fp.len().min(12)]
}

fn echo(title: &str, body: &str, fingerprint: &str) {
    println!("# resolved {title} configuration");
    print!("{body}");
    if !body.ends_with('\n') {
        println!();
    }
    println!("# fingerprint {fingerprint}\n");
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Failure> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fingerprint of a synthetic dataset: the spec plus generator settings.
fn data_fingerprint(spec: &CausalSpec, generate: &GenConfig) -> Result<String, Failure> {
    Ok(fingerprint(&(spec.to_toml_string(), generate))?)
}

#[derive(Serialize, Deserialize)]
struct LexiconFile {
    fingerprint: String,
    entries: Lexicon,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    name: String,
    spec: String,
    generate: GenConfig,
    /// File name → SHA-256 of its contents.
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct StatsFile<'a> {
    fingerprint: &'a str,
    train: CorpusStats,
    dev: CorpusStats,
    test: CorpusStats,
}

pub fn gen_data(config: Option<&Path>, o: &Overrides) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(&Overrides { seed: None, ..o.clone() });
    if let Some(seed) = o.seed {
        cfg.generate.seed = seed;
    }
    let spec = cfg.causal_spec()?;
    let fp = data_fingerprint(&spec, &cfg.generate)?;
    let out = cfg.out_dir("gen-data");
    echo("gen-data", &toml::to_string(&cfg.generate).unwrap_or_default(), &fp);

    let corpus = generate_corpus(&spec, &cfg.generate)?;
    create_dir(&out)?;
    let mut files = BTreeMap::new();
    for (name, split) in [("train", &corpus.splits.train), ("dev", &corpus.splits.dev), ("test", &corpus.splits.test)] {
        let file = format!("{name}.jsonl");
        let path = out.join(&file);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_jsonl(split, &mut w)?;
        w.flush()?;
        files.insert(file, sha256_file(&path)?);
    }
    write_json(
        &out.join("lexicon.json"),
        &LexiconFile {
            fingerprint: fp.clone(),
            entries: corpus.lexicon.clone(),
        },
    )?;
    files.insert("lexicon.json".into(), sha256_file(&out.join("lexicon.json"))?);
    let stats = StatsFile {
        fingerprint: &fp,
        train: corpus_statistics(&corpus.splits.train),
        dev: corpus_statistics(&corpus.splits.dev),
        test: corpus_statistics(&corpus.splits.test),
    };
    write_json(&out.join("stats.json"), &stats)?;
    let name = cfg.data.name.clone().unwrap_or_else(|| format!("synthetic-{}", short(&fp)));
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            fingerprint: fp.clone(),
            name: name.clone(),
            spec: spec.to_toml_string(),
            generate: cfg.generate.clone(),
            files,
        },
    )?;
    println!(
        "wrote {name}: {} / {} / {} examples, gold sparsity {:.1}% -> {}",
        stats.train.examples,
        stats.dev.examples,
        stats.test.examples,
        stats.train.annotation_sparsity,
        out.display()
    );
    Ok(())
}

/// Where the training data comes from, checked before any work starts.
enum DataSource {
    Generated { spec: CausalSpec, generate: GenConfig },
    Files {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
        format: DatasetFormat,
        lexicon: Option<PathBuf>,
        manifest: Option<PathBuf>,
    },
}

fn resolve_data(cfg: &RunConfig) -> Result<DataSource, Failure> {
    let d = &cfg.data;
    if let Some(dir) = &d.dir {
        if d.train.is_some() || d.dev.is_some() || d.test.is_some() {
            return Err(Failure::Config("set either data.dir or data.train/dev/test, not both".into()));
        }
        let manifest = dir.join("manifest.json");
        require_file(&manifest, "dataset manifest")?;
        let src = DataSource::Files {
            train: dir.join("train.jsonl"),
            dev: dir.join("dev.jsonl"),
            test: dir.join("test.jsonl"),
            format: DatasetFormat::JsonlSpans,
            lexicon: Some(d.lexicon.clone().unwrap_or_else(|| dir.join("lexicon.json"))),
            manifest: Some(manifest),
        };
        check_files(&src)?;
        return Ok(src);
    }
    match (&d.train, &d.dev, &d.test) {
        (None, None, None) => Ok(DataSource::Generated {
            spec: cfg.causal_spec()?,
            generate: cfg.generate.clone(),
        }),
        (Some(train), Some(dev), Some(test)) => {
            let src = DataSource::Files {
                train: train.clone(),
                dev: dev.clone(),
                test: test.clone(),
                format: d.format,
                lexicon: d.lexicon.clone(),
                manifest: None,
            };
            check_files(&src)?;
            Ok(src)
        }
        _ => Err(Failure::Config("data.train, data.dev and data.test must be given together".into())),
    }
}

fn check_files(src: &DataSource) -> Result<(), Failure> {
    if let DataSource::Files { train, dev, test, lexicon, .. } = src {
        for (p, what) in [(train, "train split"), (dev, "dev split"), (test, "test split")] {
            require_file(p, what)?;
        }
        if let Some(l) = lexicon {
            require_file(l, "lexicon")?;
        }
    }
    Ok(())
}

/// Loads or generates the splits; returns the data and its fingerprint.
fn load_data(src: DataSource, cfg: &RunConfig) -> Result<(TrainData, String), Failure> {
    let spurious = |lex: &Lexicon| -> HashSet<String> { lex.tokens_with_role(Role::Spurious) };
    match src {
        DataSource::Generated { spec, generate } => {
            let fp = data_fingerprint(&spec, &generate)?;
            let corpus = generate_corpus(&spec, &generate)?;
            let name = cfg.data.name.clone().unwrap_or_else(|| format!("synthetic-{}", short(&fp)));
            Ok((
                TrainData {
                    name,
                    spurious_tokens: Some(spurious(&corpus.lexicon)),
                    splits: corpus.splits,
                },
                fp,
            ))
        }
        DataSource::Files {
            train,
            dev,
            test,
            format,
            lexicon,
            manifest,
        } => {
            let max_len = cfg.train.max_len;
            let splits = Splits {
                train: load_annotated_dataset(&train, format, max_len)?,
                dev: load_annotated_dataset(&dev, format, max_len)?,
                test: load_annotated_dataset(&test, format, max_len)?,
            };
            let spurious_tokens = match &lexicon {
                Some(p) => {
                    let file: LexiconFile = serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?;
                    Some(spurious(&file.entries))
                }
                None => None,
            };
            let (fp, mut name) = match &manifest {
                Some(p) => {
                    let m: Manifest = serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?;
                    (m.fingerprint, m.name)
                }
                None => {
                    let hashes = [&train, &dev, &test].map(|p| sha256_file(p));
                    let hashes = hashes.into_iter().collect::<Result<Vec<_>, _>>()?;
                    let fp = fingerprint(&hashes)?;
                    let name = train.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
                    (fp, name)
                }
            };
            if let Some(n) = &cfg.data.name {
                name = n.clone();
            }
            Ok((
                TrainData {
                    name,
                    splits,
                    spurious_tokens,
                },
                fp,
            ))
        }
    }
}

#[derive(Serialize)]
struct LogHeader<'a> {
    fingerprint: &'a str,
    data_fingerprint: &'a str,
    seed: u64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    fingerprint: &'a str,
    seed: u64,
    selected_epoch: usize,
    log_checksum: String,
    dev: &'a SplitMetrics,
    test: &'a SplitMetrics,
    history: &'a [EpochSummary],
}

/// A split evaluation without the per-example masks.
#[derive(Serialize)]
struct SplitMetrics {
    examples: usize,
    full_accuracy: f64,
    rationale_accuracy: f64,
    complement_accuracy: f64,
    sparsity: f64,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
}

impl From<&SplitEval> for SplitMetrics {
    fn from(e: &SplitEval) -> Self {
        Self {
            examples: e.examples,
            full_accuracy: e.full_accuracy,
            rationale_accuracy: e.rationale_accuracy,
            complement_accuracy: e.complement_accuracy,
            sparsity: e.sparsity,
            precision: e.prf.map(|p| p.precision),
            recall: e.prf.map(|p| p.recall),
            f1: e.prf.map(|p| p.f1),
        }
    }
}

fn write_report(out: &Path, stem: &str, report: &EvalReport) -> Result<(), Failure> {
    write_json(&out.join(format!("{stem}.json")), report)?;
    let md = format!("{}\nfingerprint: `{}`\n", report.to_markdown(), report.config_fingerprint);
    fs::write(out.join(format!("{stem}.md")), md)?;
    Ok(())
}

pub fn train(config: Option<&Path>, o: &Overrides) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(o);
    cfg.train.validate()?;
    let src = resolve_data(&cfg)?;
    if cfg.train.criterion.criterion == Criterion::MmiPenalty {
        if let DataSource::Files { lexicon: None, .. } = src {
            return Err(Failure::Config("mmi+penalty needs data.lexicon".into()));
        }
    }
    let fp = cfg.train.family_fingerprint()?;
    let out = cfg.out_dir("train");
    echo("train", &cfg.to_toml(), &fp);

    let (data, data_fp) = load_data(src, &cfg)?;
    create_dir(&out)?;
    let mut reports = Vec::new();
    for seed in cfg.seeds() {
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let run_cfg = TrainConfig {
            seed,
            log_path: None,
            checkpoint_dir: (cfg.train.checkpoint_every > 0).then(|| dir.join("checkpoints")),
            ..cfg.train.clone()
        };
        let outcome = train_run(&run_cfg, &data)?;
        outcome.checkpoint.save(dir.join("checkpoint.json"))?;

        let checksum = outcome.log.checksum();
        let mut log = serde_json::to_string(&LogHeader {
            fingerprint: &outcome.checkpoint.fingerprint,
            data_fingerprint: &data_fp,
            seed,
        })?;
        log.push('\n');
        log.push_str(&outcome.log.to_text());
        log.push_str(&serde_json::to_string(&serde_json::json!({ "checksum": checksum }))?);
        log.push('\n');
        fs::write(dir.join("train.log"), log)?;

        let (dev, test) = (SplitMetrics::from(&outcome.dev), SplitMetrics::from(&outcome.test));
        write_json(
            &dir.join("summary.json"),
            &RunSummary {
                fingerprint: &outcome.checkpoint.fingerprint,
                seed,
                selected_epoch: outcome.selected_epoch,
                log_checksum: checksum.clone(),
                dev: &dev,
                test: &test,
                history: &outcome.history,
            },
        )?;
        write_report(&dir, "report", &outcome.report)?;
        let row = &outcome.report.runs[0];
        println!(
            "seed {seed}: epoch {} selected, S {:.1} P {:.1} R {:.1} F1 {:.1} acc {:.1}, log checksum {checksum}",
            outcome.selected_epoch, row.sparsity, row.precision, row.recall, row.f1, row.accuracy
        );
        reports.push(outcome.report);
    }
    let combined = EvalReport::combine(&reports)?;
    write_report(&out, "report", &combined)?;
    println!("\n{}", combined.to_markdown());
    println!("artifacts in {}", out.display());
    Ok(())
}

pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub format: DatasetFormat,
    pub name: Option<String>,
    pub render: Option<RenderFormat>,
    pub render_limit: usize,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    format: DatasetFormat,
    dataset: &'a str,
    render: Option<RenderFormat>,
    out: &'a Path,
    training: &'a TrainConfig,
}

fn evaluate_typed<T: Real>(ckpt: &Checkpoint, cfg: &TrainConfig, data: &EncodedCorpus) -> Result<SplitEval, Failure> {
    let (ext, pred) = ckpt.models::<T>()?;
    Ok(evaluate_split(&ext, &pred, data, cfg.batch_size.max(cfg.chunk_size), cfg.temperature)?)
}

pub fn eval(req: &EvalRequest) -> Result<(), Failure> {
    require_file(&req.checkpoint, "checkpoint")?;
    require_file(&req.data, "dataset")?;
    let ckpt = Checkpoint::load(&req.checkpoint).map_err(|e| Failure::Config(format!("{}: {e}", req.checkpoint.display())))?;
    let cfg: TrainConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Failure::Config(format!("checkpoint config is not a training config: {e}")))?;
    let fp = cfg.family_fingerprint()?;
    let dataset = req
        .name
        .clone()
        .unwrap_or_else(|| req.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into()));
    let out = req.out.clone().unwrap_or_else(|| config::default_out("eval"));
    let shown = EvalEcho {
        checkpoint: &req.checkpoint,
        data: &req.data,
        format: req.format,
        dataset: &dataset,
        render: req.render,
        out: &out,
        training: &cfg,
    };
    echo("eval", &toml::to_string(&shown).unwrap_or_default(), &fp);

    let corpus: Corpus = load_annotated_dataset(&req.data, req.format, cfg.max_len)?;
    let encoded = EncodedCorpus::new(&corpus, &ckpt.vocab, cfg.max_len)?;
    let result = match ckpt.precision {
        Precision::F32 => evaluate_typed::<f32>(&ckpt, &cfg, &encoded)?,
        Precision::F64 => evaluate_typed::<f64>(&ckpt, &cfg, &encoded)?,
    };
    let report = EvalReport::new(cfg.criterion.criterion, fp, dataset, vec![SeedResult::from_eval(cfg.seed, &result)]);
    create_dir(&out)?;
    write_report(&out, "eval", &report)?;
    println!("{}", report.to_markdown());
    println!(
        "full accuracy {:.1}, rationale accuracy {:.1}, complement accuracy {:.1}",
        100.0 * result.full_accuracy,
        100.0 * result.rationale_accuracy,
        100.0 * result.complement_accuracy
    );

    if let Some(format) = req.render {
        let items: Vec<RenderItem<'_>> = corpus
            .iter()
            .zip(&result.masks)
            .take(req.render_limit)
            .map(|(ex, mask)| RenderItem {
                tokens: &ex.tokens[..mask.len()],
                pred: mask,
                gold: ex.gold_mask.as_deref().map(|g| &g[..mask.len()]),
            })
            .collect();
        let text = render_rationales(&items, format)?;
        let file = match format {
            RenderFormat::Ansi => {
                print!("{text}");
                "rationales.ansi"
            }
            RenderFormat::Html => "rationales.html",
        };
        let text = match format {
            RenderFormat::Html => text.replacen("<body>\n", &format!("<body>\n<!-- fingerprint {} -->\n", report.config_fingerprint), 1),
            RenderFormat::Ansi => text,
        };
        fs::write(out.join(file), text)?;
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct LandscapeEcho<'a> {
    spec: &'a str,
    criteria: &'a [LandscapeCriterion],
}

#[derive(Serialize)]
struct LandscapeFile<'a> {
    fingerprint: &'a str,
    spec: &'a str,
    rows: &'a [LandscapeRow],
}

pub fn landscape(
    config: Option<&Path>,
    spec_path: Option<PathBuf>,
    criteria: &[Criterion],
    lambdas: &[f64],
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if spec_path.is_some() {
        cfg.spec = spec_path;
    }
    let spec = cfg.causal_spec()?;
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Failure::Config(format!("penalty weight must be finite and non-negative, got {bad}")));
    }
    let lambdas = if lambdas.is_empty() {
        vec![cfg.train.criterion.lambda_penalty]
    } else {
        lambdas.to_vec()
    };
    let criteria = if criteria.is_empty() {
        vec![Criterion::Mmi, Criterion::MmiPenalty, Criterion::Mrd]
    } else {
        criteria.to_vec()
    };
    let mut rows = Vec::new();
    for c in criteria {
        match c {
            Criterion::Mmi => rows.push(LandscapeCriterion::Mmi),
            Criterion::Mrd => rows.push(LandscapeCriterion::Mrd),
            Criterion::MmiPenalty => rows.extend(lambdas.iter().map(|&lambda| LandscapeCriterion::MmiPenalty { lambda })),
        }
    }
    let spec_text = spec.to_toml_string();
    let fp = fingerprint(&(&spec_text, &rows))?;
    let out = out.or(cfg.out.clone()).unwrap_or_else(|| config::default_out("landscape"));
    echo(
        "landscape",
        &toml::to_string(&LandscapeEcho {
            spec: &spec_text,
            criteria: &rows,
        })
        .unwrap_or_default(),
        &fp,
    );

    let report = landscape_report(&spec, &rows)?;
    create_dir(&out)?;
    write_json(
        &out.join("landscape.json"),
        &LandscapeFile {
            fingerprint: &fp,
            spec: &spec_text,
            rows: &report.rows,
        },
    )?;
    let md = report.to_markdown();
    fs::write(out.join("landscape.md"), format!("{md}\nfingerprint: `{fp}`\n"))?;
    print!("{md}");
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn report(inputs: &[PathBuf], out: Option<PathBuf>) -> Result<(), Failure> {
    let files: Vec<PathBuf> = inputs
        .iter()
        .map(|p| if p.is_dir() { p.join("report.json") } else { p.clone() })
        .collect();
    let mut reports = Vec::new();
    for f in &files {
        require_file(f, "report")?;
        let r: EvalReport = serde_json::from_slice(&fs::read(f)?)
            .map_err(|e| Failure::Config(format!("{} is not a report: {e}", f.display())))?;
        reports.push(r);
    }
    let combined = EvalReport::combine(&reports)?;
    let out = out.unwrap_or_else(|| config::default_out("report"));
    let shown: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
    echo("report", &toml::to_string(&BTreeMap::from([("inputs", shown)])).unwrap_or_default(), &combined.config_fingerprint);
    create_dir(&out)?;
    write_report(&out, "report", &combined)?;
    println!("{}", combined.to_markdown());
    println!("artifacts in {}", out.display());
    Ok(())
}

//! Line-delimited dataset formats.
//!
//! `jsonl-spans`: one JSON object per line,
//!
//! ```text
//! {"text":"the head is thick","label":1,"rationale_spans":[[1,3]]}
//! ```
//!
//! where `text` holds space-separated tokens, `label` is the class index and
//! the optional `rationale_spans` lists half-open `[start, end)` token
//! ranges.
//!
//! `tsv`: `label<TAB>text[<TAB>spans]` with spans written `start:end`,
//! comma separated (`1:3,5:6`). Blank lines are skipped in both formats.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, Example};
use crate::error::{Error, Result};

/// Texts longer than this are truncated on load.
pub const DEFAULT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    JsonlSpans,
    Tsv,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" | "jsonl-spans" => Ok(Self::JsonlSpans),
            "tsv" => Ok(Self::Tsv),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Wire form of one `jsonl-spans` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlRecord {
    pub text: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_spans: Option<Vec<[usize; 2]>>,
}

pub fn load_annotated_dataset(path: impl AsRef<Path>, format: DatasetFormat, max_len: usize) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_annotated(&text, format, max_len, &path.display().to_string())
}

/// Parses dataset text; `source_name` labels errors.
pub fn parse_annotated(text: &str, format: DatasetFormat, max_len: usize, source_name: &str) -> Result<Corpus> {
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Record {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        let (text, label, spans) = match format {
            DatasetFormat::JsonlSpans => {
                let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
                (rec.text, rec.label, rec.rationale_spans)
            }
            DatasetFormat::Tsv => parse_tsv_line(line).map_err(err)?,
        };
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let gold_mask = match spans {
            None => None,
            Some(spans) => {
                if tokens.is_empty() {
                    return Err(err("annotation present but text is empty".into()));
                }
                Some(spans_to_mask(&spans, tokens.len()).map_err(err)?)
            }
        };
        let mut ex = Example {
            tokens,
            label,
            gold_mask,
        };
        if ex.tokens.len() > max_len {
            ex.tokens.truncate(max_len);
            if let Some(m) = ex.gold_mask.as_mut() {
                m.truncate(max_len);
            }
        }
        examples.push(ex);
    }
    Ok(Corpus::new(examples))
}

fn parse_tsv_line(line: &str) -> std::result::Result<(String, usize, Option<Vec<[usize; 2]>>), String> {
    let mut cols = line.split('\t');
    let label = cols
        .next()
        .ok_or("missing label column")?
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("bad label: {e}"))?;
    let text = cols.next().ok_or("missing text column")?.to_string();
    let spans = match cols.next() {
        None => None,
        Some(col) if col.trim().is_empty() => Some(Vec::new()),
        Some(col) => Some(
            col.split(',')
                .map(|s| {
                    let (a, b) = s.trim().split_once(':').ok_or_else(|| format!("bad span `{s}`"))?;
                    let a = a.parse::<usize>().map_err(|e| format!("bad span `{s}`: {e}"))?;
                    let b = b.parse::<usize>().map_err(|e| format!("bad span `{s}`: {e}"))?;
                    Ok([a, b])
                })
                .collect::<std::result::Result<Vec<_>, String>>()?,
        ),
    };
    if cols.next().is_some() {
        return Err("too many columns".into());
    }
    Ok((text, label, spans))
}

fn spans_to_mask(spans: &[[usize; 2]], len: usize) -> std::result::Result<Vec<bool>, String> {
    let mut mask = vec![false; len];
    for &[start, end] in spans {
        if start >= end || end > len {
            return Err(format!("span [{start}, {end}) out of range for {len} tokens"));
        }
        mask[start..end].iter_mut().for_each(|m| *m = true);
    }
    Ok(mask)
}

/// Maximal runs of selected tokens as half-open spans.
pub fn mask_to_spans(mask: &[bool]) -> Vec<[usize; 2]> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &m) in mask.iter().chain(std::iter::once(&false)).enumerate() {
        match (m, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push([s, i]);
                start = None;
            }
            _ => {}
        }
    }
    spans
}

/// Writes a corpus in `jsonl-spans` form.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    for ex in corpus.iter() {
        let rec = JsonlRecord {
            text: ex.tokens.join(" "),
            label: ex.label,
            rationale_spans: ex.gold_mask.as_deref().map(mask_to_spans),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn span_expansion() {
        let c = parse_annotated(r#"{"text":"a b c d e","label":1,"rationale_spans":[[1,3]]}"#, DatasetFormat::JsonlSpans, 256, "mem")
            .unwrap();
        assert_eq!(c.examples[0].gold_mask, Some(vec![false, true, true, false, false]));
        assert_eq!(c.examples[0].label, 1);
    }

    #[test]
    fn out_of_range_span_reports_line() {
        let text = "{\"text\":\"a b\",\"label\":0}\n{\"text\":\"a b c d e\",\"label\":1,\"rationale_spans\":[[4,9]]}\n";
        match parse_annotated(text, DatasetFormat::JsonlSpans, 256, "data.jsonl") {
            Err(Error::Record { line, source_name, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(source_name, "data.jsonl");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_empty_text_errors() {
        assert!(matches!(
            parse_annotated("{\"text\": 3}", DatasetFormat::JsonlSpans, 256, "m"),
            Err(Error::Record { line: 1, .. })
        ));
        assert!(matches!(
            parse_annotated(r#"{"text":"","label":0,"rationale_spans":[]}"#, DatasetFormat::JsonlSpans, 256, "m"),
            Err(Error::Record { line: 1, .. })
        ));
        assert!(parse_annotated(r#"{"text":"a","label":0,"extra":1}"#, DatasetFormat::JsonlSpans, 256, "m").is_err());
    }

    #[test]
    fn truncation_keeps_mask_aligned() {
        let text: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let line = format!(r#"{{"text":"{}","label":0,"rationale_spans":[[250,290]]}}"#, text.join(" "));
        let c = parse_annotated(&line, DatasetFormat::JsonlSpans, DEFAULT_MAX_LEN, "m").unwrap();
        let ex = &c.examples[0];
        assert_eq!(ex.tokens.len(), 256);
        let mask = ex.gold_mask.as_ref().unwrap();
        assert_eq!(mask.len(), 256);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 6);
    }

    #[test]
    fn tsv_format() {
        let c = parse_annotated("1\ta b c d\t0:1,2:4\n\n0\tx y\n", DatasetFormat::Tsv, 256, "m").unwrap();
        assert_eq!(c.examples[0].gold_mask, Some(vec![true, false, true, true]));
        assert_eq!(c.examples[1].gold_mask, None);
        assert!(parse_annotated("x\ta\n", DatasetFormat::Tsv, 256, "m").is_err());
        assert!(parse_annotated("1\ta b\t1:5\n", DatasetFormat::Tsv, 256, "m").is_err());
    }

    #[test]
    fn jsonl_wire_form_is_frozen() {
        let corpus = Corpus::new(vec![
            Example::new(vec!["a".into(), "b".into(), "c".into()], 1).with_gold(vec![false, true, true]),
            Example::new(vec!["d".into()], 0),
        ]);
        let mut buf = Vec::new();
        write_jsonl(&corpus, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"text\":\"a b c\",\"label\":1,\"rationale_spans\":[[1,3]]}\n{\"text\":\"d\",\"label\":0}\n"
        );
    }

    proptest! {
        #[test]
        fn jsonl_roundtrip(masks in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..20), 1..10)) {
            let corpus: Corpus = masks
                .iter()
                .enumerate()
                .map(|(i, m)| Example::new((0..m.len()).map(|j| format!("w{j}")).collect(), i % 2).with_gold(m.clone()))
                .collect();
            let mut buf = Vec::new();
            write_jsonl(&corpus, &mut buf).unwrap();
            let back = parse_annotated(std::str::from_utf8(&buf).unwrap(), DatasetFormat::JsonlSpans, 256, "m").unwrap();
            prop_assert_eq!(back, corpus);
        }
    }
}

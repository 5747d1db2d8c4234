use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rationalizer::RationaleMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Ansi,
    Html,
}

impl std::str::FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ansi" => Ok(Self::Ansi),
            "html" => Ok(Self::Html),
            other => Err(Error::Config(format!("unknown render format `{other}` (ansi, html)"))),
        }
    }
}

/// One example to render: tokens, predicted mask, optional gold mask.
pub struct RenderItem<'a> {
    pub tokens: &'a [String],
    pub pred: &'a RationaleMask,
    pub gold: Option<&'a [bool]>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    Plain,
    /// Selected and in the gold rationale.
    Hit,
    /// Selected but not gold.
    Extra,
    /// Gold but not selected.
    Missed,
}

fn marks(item: &RenderItem<'_>) -> Result<Vec<Mark>> {
    let pred = item.pred.to_bools()?;
    if pred.len() != item.tokens.len() || item.gold.is_some_and(|g| g.len() != item.tokens.len()) {
        return Err(Error::Shape("mask length differs from token count".into()));
    }
    Ok(pred
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let g = item.gold.map(|g| g[i]);
            match (p, g) {
                (true, Some(true)) => Mark::Hit,
                (true, None) => Mark::Hit,
                (true, Some(false)) => Mark::Extra,
                (false, Some(true)) => Mark::Missed,
                _ => Mark::Plain,
            }
        })
        .collect())
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Highlights selected tokens. With gold masks, correct selections, extra
/// selections and missed gold tokens are styled differently (gold tokens
/// are underlined).
pub fn render_rationales(items: &[RenderItem<'_>], format: RenderFormat) -> Result<String> {
    let mut out = String::new();
    if format == RenderFormat::Html {
        out.push_str(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><style>\n\
             mark.hit{background:#9be29b;text-decoration:underline}\n\
             mark.extra{background:#ffd27a}\n\
             u.missed{text-decoration-color:#c00}\n\
             </style></head><body>\n",
        );
    }
    for item in items {
        let marks = marks(item)?;
        let words: Vec<String> = item
            .tokens
            .iter()
            .zip(&marks)
            .map(|(tok, &m)| match format {
                RenderFormat::Ansi => match m {
                    Mark::Plain => tok.clone(),
                    Mark::Hit if item.gold.is_some() => format!("\x1b[1;4;42m{tok}\x1b[0m"),
                    Mark::Hit => format!("\x1b[1;42m{tok}\x1b[0m"),
                    Mark::Extra => format!("\x1b[43m{tok}\x1b[0m"),
                    Mark::Missed => format!("\x1b[4m{tok}\x1b[0m"),
                },
                RenderFormat::Html => {
                    let tok = escape_html(tok);
                    match m {
                        Mark::Plain => tok,
                        Mark::Hit => format!("<mark class=\"hit\">{tok}</mark>"),
                        Mark::Extra => format!("<mark class=\"extra\">{tok}</mark>"),
                        Mark::Missed => format!("<u class=\"missed\">{tok}</u>"),
                    }
                }
            })
            .collect();
        match format {
            RenderFormat::Ansi => {
                let _ = writeln!(out, "{}", words.join(" "));
            }
            RenderFormat::Html => {
                let _ = writeln!(out, "<p>{}</p>", words.join(" "));
            }
        }
    }
    if format == RenderFormat::Html {
        out.push_str("</body></html>\n");
    }
    Ok(out)
}

//! Line-oriented corpus file.
//!
//! ```text
//! # adaptms-corpus v1 seed=<u64> specs=<sha256 of specs JSON>
//! # specs <JSON array of PlatformSpec>
//! platform \t time_index \t m \t y \t b0 .. b5 \t token ids (space separated) \t latent_s
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a write/parse cycle
//! is bit-exact. Missing behavior entries are written as `NaN`.

use std::fmt::Write as _;

use super::generate::{Corpus, Instance};
use super::spec::{PlatformSpec, BEHAVIOR_FEATURES};
use crate::fingerprint::of_json;
use crate::{Error, Result};

const MAGIC: &str = "# adaptms-corpus v1";
const SPECS_PREFIX: &str = "# specs ";
const FIELDS: usize = 4 + BEHAVIOR_FEATURES + 2;

pub fn write_corpus(corpus: &Corpus) -> String {
    let specs_json = serde_json::to_string(&corpus.specs).expect("plain data serialises");
    let mut out = String::with_capacity(corpus.instances.len() * 160);
    let _ = writeln!(out, "{MAGIC} seed={} specs={}", corpus.seed, of_json(&corpus.specs));
    let _ = writeln!(out, "{SPECS_PREFIX}{specs_json}");
    for inst in &corpus.instances {
        let _ = write!(out, "{}\t{}\t{}\t{:?}", inst.platform, inst.time_index, inst.modality, inst.label);
        for v in &inst.behavior {
            let _ = write!(out, "\t{v:?}");
        }
        out.push('\t');
        for (i, t) in inst.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{t}");
        }
        let _ = writeln!(out, "\t{:?}", inst.latent_s);
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "corpus",
        line,
        msg: msg.into(),
    }
}

/// Parses and validates a corpus file. Never panics on malformed input.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty input"))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| parse_err(1, "missing corpus header"))?;
    let mut seed = None;
    let mut specs_fp = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|e| parse_err(1, format!("seed: {e}")))?),
            Some(("specs", v)) => specs_fp = Some(v.to_string()),
            _ => return Err(parse_err(1, format!("unexpected header field {kv:?}"))),
        }
    }
    let seed = seed.ok_or_else(|| parse_err(1, "header lacks seed"))?;
    let specs_fp = specs_fp.ok_or_else(|| parse_err(1, "header lacks specs fingerprint"))?;

    let (_, specs_line) = lines.next().ok_or_else(|| parse_err(2, "missing specs line"))?;
    let json = specs_line
        .strip_prefix(SPECS_PREFIX)
        .ok_or_else(|| parse_err(2, "missing specs line"))?;
    let specs: Vec<PlatformSpec> =
        serde_json::from_str(json).map_err(|e| parse_err(2, format!("specs JSON: {e}")))?;
    let found = of_json(&specs);
    if found != specs_fp {
        return Err(Error::FingerprintMismatch {
            what: "corpus platform specs".into(),
            expected: specs_fp,
            found,
        });
    }

    let mut instances = Vec::new();
    for (no, line) in lines {
        instances.push(parse_record(line).map_err(|msg| parse_err(no, msg))?);
    }
    let corpus = Corpus { instances, specs, seed };
    corpus.validate()?;
    Ok(corpus)
}

fn parse_record(line: &str) -> std::result::Result<Instance, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELDS {
        return Err(format!("expected {FIELDS} tab-separated fields, found {}", fields.len()));
    }
    let num = |i: usize, name: &str| -> std::result::Result<f64, String> {
        fields[i].parse::<f64>().map_err(|e| format!("{name}: {e}"))
    };
    let platform = fields[0].parse::<usize>().map_err(|e| format!("platform: {e}"))?;
    let time_index = fields[1].parse::<u64>().map_err(|e| format!("time_index: {e}"))?;
    let modality = fields[2].parse::<u8>().map_err(|e| format!("m: {e}"))?;
    let label = num(3, "y")?;
    let mut behavior = [0.0; BEHAVIOR_FEATURES];
    for (f, slot) in behavior.iter_mut().enumerate() {
        *slot = num(4 + f, "behavior")?;
    }
    let tokens = fields[4 + BEHAVIOR_FEATURES]
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|e| format!("token {t:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let latent_s = num(FIELDS - 1, "latent_s")?;
    Ok(Instance {
        platform,
        time_index,
        tokens,
        behavior,
        modality,
        label,
        latent_s,
    })
}

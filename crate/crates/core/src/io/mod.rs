//! Stage files, configuration text, potentials given on the command line, and CSV output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::construct::{ConstructionConfig, Mode, StageRecordA, StageRecordB, SweepRow};
use crate::error::{Error, Result};
use crate::spectrum::Band;
use crate::transfer::PotentialRecipe;

pub const SCHEMA_VERSION: u32 = 1;

/// Stage history of one of the two constructions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StagePayload {
    A { history: Vec<StageRecordA> },
    B { history: Vec<StageRecordB>, unshift: f64 },
}

/// A saved construction state: every stage up to `stage`, with its configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFile {
    pub schema_version: u32,
    pub stage: u32,
    pub config: ConstructionConfig,
    pub payload: StagePayload,
    /// SHA-256 of the file serialized with this field empty.
    pub digest: String,
}

impl StageFile {
    pub fn new_a(config: ConstructionConfig, history: Vec<StageRecordA>) -> Self {
        let stage = history.last().map_or(0, |s| s.k);
        Self::sealed(config, stage, StagePayload::A { history })
    }

    pub fn new_b(config: ConstructionConfig, history: Vec<StageRecordB>, unshift: f64) -> Self {
        let stage = history.last().map_or(0, |s| s.k);
        Self::sealed(config, stage, StagePayload::B { history, unshift })
    }

    fn sealed(config: ConstructionConfig, stage: u32, payload: StagePayload) -> Self {
        let mut f = Self { schema_version: SCHEMA_VERSION, stage, config, payload, digest: String::new() };
        f.digest = f.compute_digest();
        f
    }

    pub fn tag(&self) -> char {
        match self.payload {
            StagePayload::A { .. } => 'A',
            StagePayload::B { .. } => 'B',
        }
    }

    /// Recipe of the last stored stage.
    pub fn final_recipe(&self) -> Option<&PotentialRecipe> {
        match &self.payload {
            StagePayload::A { history } => history.last().map(|s| &s.recipe),
            StagePayload::B { history, .. } => history.last().map(|s| &s.recipe),
        }
    }

    pub fn compute_digest(&self) -> String {
        let mut bare = self.clone();
        bare.digest.clear();
        let text = serde_json::to_string(&bare).expect("stage records serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn digest_ok(&self) -> bool {
        self.digest == self.compute_digest()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stage records serialize")
    }

    /// Parses without checking the digest.
    pub fn from_json_unchecked(text: &str) -> Result<Self> {
        let f: StageFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!("schema version {} is not {SCHEMA_VERSION}", f.schema_version)));
        }
        Ok(f)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f = Self::from_json_unchecked(text)?;
        if !f.digest_ok() {
            return Err(Error::Format("stage file digest does not match its contents".into()));
        }
        Ok(f)
    }
}

pub fn save_stage_file(path: &Path, file: &StageFile) -> Result<()> {
    std::fs::write(path, file.to_json())?;
    Ok(())
}

pub fn load_stage_file(path: &Path) -> Result<StageFile> {
    StageFile::from_json(&std::fs::read_to_string(path)?)
}

pub fn load_stage_file_unchecked(path: &Path) -> Result<StageFile> {
    StageFile::from_json_unchecked(&std::fs::read_to_string(path)?)
}

/// Flat `key = value` configuration; `#` starts a comment.
///
/// Keys: `K`, `L`, `samples_per_band`, `mode`, `m0_cap`, `m_cap`, `seed`, `eps`, `v0`
/// (comma separated values).
pub fn parse_config(text: &str) -> Result<ConstructionConfig> {
    let mut cfg = ConstructionConfig::default();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::InvalidInput(format!("config line {}: {msg}", no + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let int = |v: &str| v.parse::<u64>().map_err(|e| bad(format!("{key}: {e}")));
        match key {
            "K" => cfg.stages = int(value)? as u32,
            "L" => cfg.l = int(value)?,
            "samples_per_band" => cfg.samples_per_band = int(value)? as usize,
            "mode" => cfg.mode = value.parse::<Mode>()?,
            "m0_cap" => cfg.m0_cap = int(value)?,
            "m_cap" => cfg.m_cap = int(value)?,
            "seed" => cfg.seed = int(value)?,
            "eps" => cfg.eps = value.parse().map_err(|e| bad(format!("eps: {e}")))?,
            "v0" => cfg.v0 = parse_values(value).map_err(|e| bad(e.to_string()))?,
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The configuration as text accepted by [`parse_config`].
pub fn format_config(cfg: &ConstructionConfig) -> String {
    let v0: Vec<String> = cfg.v0.iter().map(f64::to_string).collect();
    format!(
        "K = {}\nL = {}\nsamples_per_band = {}\nmode = {}\nm0_cap = {}\nm_cap = {}\nseed = {}\neps = {}\nv0 = {}\n",
        cfg.stages,
        cfg.l,
        cfg.samples_per_band,
        cfg.mode,
        cfg.m0_cap,
        cfg.m_cap,
        cfg.seed,
        cfg.eps,
        v0.join(",")
    )
}

/// Comma or whitespace separated finite numbers.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidInput(format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if vals.is_empty() || vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("need at least one finite value".into()));
    }
    Ok(vals)
}

/// A potential given inline as one period of values, or as a file holding a stage file,
/// a serialized recipe, or a list of values.
pub fn load_potential(spec: &str) -> Result<PotentialRecipe> {
    if let Ok(vals) = parse_values(spec) {
        return PotentialRecipe::periodic(&vals);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Error::InvalidInput(format!("{spec}: {e}")))?;
    if let Ok(file) = StageFile::from_json_unchecked(&text) {
        return file.final_recipe().cloned().ok_or_else(|| Error::Format("stage file holds no stages".into()));
    }
    if let Ok(recipe) = serde_json::from_str::<PotentialRecipe>(&text) {
        return Ok(recipe);
    }
    PotentialRecipe::periodic(&parse_values(&text)?)
}

/// Columns `band_index,alpha,beta`.
pub fn bands_csv<'a>(bands: impl IntoIterator<Item = (u64, &'a Band)>) -> String {
    let mut out = String::from("band_index,alpha,beta\n");
    for (i, b) in bands {
        let _ = writeln!(out, "{i},{},{}", b.alpha, b.beta);
    }
    out
}

/// Columns `E,L,in_spectrum`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("E,L,in_spectrum\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.e, r.l, r.in_spectrum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::initial_stage;

    #[test]
    fn config_round_trip() {
        let text = "# stage run\nK = 3\nL=7\nmode = capped\nm0_cap = 100\nv0 = 0, 1.5\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!((cfg.stages, cfg.l, cfg.mode, cfg.m0_cap), (3, 7, Mode::Capped, 100));
        assert_eq!(cfg.v0, vec![0.0, 1.5]);
        assert_eq!(parse_config(&format_config(&cfg)).unwrap(), cfg);
        assert!(parse_config("Q = 1").is_err());
        assert!(parse_config("L = 3").is_err());
    }

    #[test]
    fn stage_file_round_trip() {
        let s0 = initial_stage(5, 0.5, 5).unwrap();
        let f = StageFile::new_a(ConstructionConfig::default(), vec![s0]);
        let back = StageFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let tampered = f.to_json().replacen("\"seed\": 0", "\"seed\": 1", 1);
        assert!(StageFile::from_json(&tampered).is_err());
        assert!(!StageFile::from_json_unchecked(&tampered).unwrap().digest_ok());
    }

    #[test]
    fn inline_potentials() {
        assert_eq!(load_potential("4,0").unwrap().period(), 2);
        assert!(load_potential("/no/such/file").is_err());
    }

    #[test]
    fn csv_layout() {
        let b = Band::new(-2.0, 2.0);
        assert_eq!(bands_csv([(0, &b)]), "band_index,alpha,beta\n0,-2,2\n");
        let rows = [SweepRow { e: 0.5, l: 0.0, in_spectrum: true }];
        assert_eq!(sweep_csv(&rows), "E,L,in_spectrum\n0.5,0,true\n");
    }
}

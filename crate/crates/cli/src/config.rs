//! `key = value` run configuration with provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use quadscan::mfm::{parse_paths, Variant};
use quadscan::scanorders::ScanScale;
use quadscan::synthdata::{CorpusSpec, GenConfig};
use quadscan::tracker::{parse_modalities, TrackerConfig, TrainConfig};
use quadscan::{Error, Result};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "seed of every random stream"),
    (
        "data.spec",
        "default",
        "corpus preset (default, small) or scenario=count list",
    ),
    ("data.width", "128", "frame width"),
    ("data.height", "128", "frame height"),
    ("data.frames", "20", "frames per sequence"),
    ("data.event_threshold", "12", "event threshold in luma levels"),
    ("model.search", "64", "search crop side in pixels"),
    ("model.template", "32", "template crop side in pixels"),
    ("model.patch", "8", "patch side in pixels"),
    ("model.dim", "16", "token width"),
    ("model.depth", "2", "backbone blocks"),
    ("model.mlp_ratio", "2", "MLP hidden width / token width"),
    ("model.head_hidden", "16", "hidden width of each head branch"),
    ("model.modalities", "rgb,t,e,l", "streams, any of rgb,t,e,l"),
    (
        "mfm.blocks",
        "0,1",
        "backbone block indices followed by fusion, or none",
    ),
    (
        "mfm.paths",
        "full",
        "scan paths (forward,backward,region,token) or a variant name",
    ),
    ("mfm.d_state", "8", "state size of each scan"),
    ("mfm.conv_width", "4", "causal conv width"),
    ("loss.giou", "2.0", "GIoU loss weight"),
    ("loss.l1", "5.0", "L1 loss weight"),
    ("train.schedule", "toy", "schedule preset (toy, paper)"),
    ("train.epochs", "auto", "overrides the preset"),
    ("train.batch", "auto", "overrides the preset"),
    ("train.lr", "auto", "overrides the preset"),
    ("train.decay_epoch", "auto", "overrides the preset"),
    ("train.decay_factor", "auto", "overrides the preset"),
    ("train.weight_decay", "auto", "overrides the preset"),
    ("train.samples_per_seq", "auto", "overrides the preset"),
    ("train.jitter", "auto", "overrides the preset"),
    ("scan.modalities", "4", "scan-dump geometry: M"),
    ("scan.template_tokens", "16", "scan-dump geometry: N_z"),
    ("scan.search_tokens", "64", "scan-dump geometry: N_x"),
    (
        "bench.lengths",
        "80,160,320,640",
        "per-modality token counts N (multiples of 5)",
    ),
    ("bench.dim", "16", "token width of the fused blocks"),
    ("bench.runs", "5", "timed runs per measurement (median is reported)"),
    ("bench.warmup", "2", "untimed runs before measuring"),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File { path: PathBuf, line: usize },
    Flag(String),
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => f.write_str("default"),
            Source::File { path, line } => write!(f, "{}:{line}", path.display()),
            Source::Flag(flag) => f.write_str(flag),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, (String, Source)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), (v.to_string(), Source::Default)))
                .collect(),
        }
    }
}

fn known(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key {key:?}")))
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let k = k.trim();
            known(k).map_err(|_| err(format!("unknown config key {k:?}")))?;
            cfg.values.insert(
                k.to_string(),
                (
                    v.trim().to_string(),
                    Source::File {
                        path: path.to_path_buf(),
                        line: i + 1,
                    },
                ),
            );
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        RunConfig::parse(&text, path)
    }

    /// Applies `key=value` from a flag; unknown keys are rejected.
    pub fn set(&mut self, assignment: &str, flag: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{flag} expects key=value, got {assignment:?}")))?;
        self.set_value(k.trim(), v.trim(), flag)
    }

    pub fn set_value(&mut self, key: &str, value: &str, flag: &str) -> Result<()> {
        known(key)?;
        self.values
            .insert(key.to_string(), (value.to_string(), Source::Flag(flag.to_string())));
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        &self
            .values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} is not declared"))
            .0
    }

    pub fn source(&self, key: &str) -> &Source {
        &self.values[key].1
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| {
            Error::Config(format!(
                "{key} = {v:?} ({}) is not a valid {}",
                self.source(key),
                std::any::type_name::<T>()
            ))
        })
    }

    /// `None` when the value is `auto`.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("{key}: bad list item {s:?}")))
            })
            .collect()
    }

    /// Fully resolved config, one `key = value  # source` line per key.
    pub fn resolved(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, s))| format!("{k} = {v}  # {s}\n"))
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        let mut spec = CorpusSpec::parse(self.raw("data.spec"))?;
        spec.gen = GenConfig {
            width: self.get("data.width")?,
            height: self.get("data.height")?,
            frames: self.get("data.frames")?,
            event_threshold: self.get("data.event_threshold")?,
        };
        Ok(spec)
    }

    pub fn tracker(&self) -> Result<TrackerConfig> {
        let blocks = match self.raw("mfm.blocks") {
            "none" | "" => Vec::new(),
            _ => self.get_list("mfm.blocks")?,
        };
        let cfg = TrackerConfig {
            search: self.get("model.search")?,
            template: self.get("model.template")?,
            patch: self.get("model.patch")?,
            dim: self.get("model.dim")?,
            depth: self.get("model.depth")?,
            mlp_ratio: self.get("model.mlp_ratio")?,
            head_hidden: self.get("model.head_hidden")?,
            mfm_blocks: blocks,
            mfm_paths: paths_or_variant(self.raw("mfm.paths"))?,
            d_state: self.get("mfm.d_state")?,
            conv_width: self.get("mfm.conv_width")?,
            modalities: parse_modalities(self.raw("model.modalities"))?,
            w_giou: self.get("loss.giou")?,
            w_l1: self.get("loss.l1")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::preset(self.raw("train.schedule"))?;
        macro_rules! over {
            ($field:ident, $key:literal) => {
                if let Some(v) = self.get_opt($key)? {
                    t.$field = v;
                }
            };
        }
        over!(epochs, "train.epochs");
        over!(batch, "train.batch");
        over!(lr, "train.lr");
        over!(decay_epoch, "train.decay_epoch");
        over!(decay_factor, "train.decay_factor");
        over!(weight_decay, "train.weight_decay");
        over!(samples_per_seq, "train.samples_per_seq");
        over!(jitter, "train.jitter");
        t.seed = self.seed()?;
        t.validate()?;
        Ok(t)
    }
}

/// A variant name (`full`, `w/mamba`, `w/mamba-v2`, `w/mamba-v3`) or a path list.
pub fn paths_or_variant(s: &str) -> Result<Vec<ScanScale>> {
    let key = s.trim().to_lowercase().replace(' ', "");
    match Variant::ALL.iter().find(|v| v.name() == key) {
        Some(v) => Ok(v.paths()),
        None => parse_paths(s),
    }
}

//! Flat `key = value` configuration for runs and synthetic datasets.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Later settings win, so a file followed by `--set` overrides gives
//! the usual precedence. A `preset` only supplies defaults: explicit keys
//! override it wherever they appear.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use relgraph_core::data::{Dynamics, SyntheticSpec};
use relgraph_core::optim::AdamConfig;
use relgraph_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One `key = value` line and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: String,
}

pub fn parse_settings(text: &str, source: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let origin = format!("{source}:{}", i + 1);
        out.push(parse_assignment(line, origin)?);
    }
    Ok(out)
}

/// A single `key=value` override, as given to `--set`.
pub fn parse_override(text: &str) -> Result<Setting> {
    parse_assignment(text.trim(), format!("--set {text}"))
}

fn parse_assignment(line: &str, origin: String) -> Result<Setting> {
    let Some((key, value)) = line.split_once('=') else {
        return Err(Error::Config(format!("{origin}: expected `key = value`, got `{line}`")));
    };
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("{origin}: missing key before `=`")));
    }
    Ok(Setting { key: key.to_string(), value: value.trim().to_string(), origin })
}

/// Keys holding file paths; relative values in a config file are taken
/// relative to that file.
const PATH_KEYS: &[&str] = &["series", "adjacency", "checkpoint"];

pub fn read_settings(path: &Path) -> Result<Vec<Setting>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let mut settings = parse_settings(&text, &path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new(""));
    for s in settings.iter_mut().filter(|s| PATH_KEYS.contains(&s.key.as_str())) {
        if let Some(p) = parse_path(s).filter(|p| p.is_relative()) {
            s.value = base.join(p).display().to_string();
        }
    }
    Ok(settings)
}

/// Settings from an optional config file, then `--set` overrides, then
/// `--seed`.
pub fn collect_settings(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Vec<Setting>> {
    let mut settings = match file {
        Some(p) => read_settings(p)?,
        None => Vec::new(),
    };
    for o in overrides {
        settings.push(parse_override(o)?);
    }
    if let Some(seed) = seed {
        settings.push(Setting { key: "seed".into(), value: seed.to_string(), origin: "--seed".into() });
    }
    Ok(settings)
}

fn bad_value(s: &Setting, expected: &str) -> Error {
    Error::Config(format!("{}: `{}` expects {expected}, got `{}`", s.origin, s.key, s.value))
}

fn parse_num<T: std::str::FromStr>(s: &Setting, expected: &str) -> Result<T> {
    s.value.parse().map_err(|_| bad_value(s, expected))
}

fn parse_bool(s: &Setting) -> Result<bool> {
    match s.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad_value(s, "true or false")),
    }
}

fn parse_float(s: &Setting) -> Result<f64> {
    let v: f64 = parse_num(s, "a number")?;
    if !v.is_finite() {
        return Err(bad_value(s, "a finite number"));
    }
    Ok(v)
}

fn parse_path(s: &Setting) -> Option<PathBuf> {
    match s.value.as_str() {
        "" | "none" => None,
        v => Some(PathBuf::from(v)),
    }
}

fn unknown_key(s: &Setting, valid: &[&str]) -> Error {
    Error::Config(format!("{}: unknown key `{}`; valid keys are: {}", s.origin, s.key, valid.join(", ")))
}

fn short_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).fold(String::new(), |mut acc, b| {
        let _ = write!(acc, "{b:02x}");
        acc
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjacencyFormat {
    /// Dense when the file is exactly `N×N`, an edge list otherwise.
    Auto,
    Dense,
    Edges,
}

impl AdjacencyFormat {
    fn name(self) -> &'static str {
        match self {
            AdjacencyFormat::Auto => "auto",
            AdjacencyFormat::Dense => "dense",
            AdjacencyFormat::Edges => "edges",
        }
    }
}

/// Dataset shapes and model sizes of the published benchmarks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub nodes: usize,
    pub samples: usize,
    pub has_predefined: bool,
    pub t_in: usize,
    pub t_out: usize,
    pub split: [f64; 3],
    pub lstm_out: usize,
    pub layers: usize,
    pub gnn_out: usize,
    pub d_value: usize,
    pub c: usize,
}

pub const PRESETS: [Preset; 5] = [
    Preset { name: "solar-energy", nodes: 137, samples: 52_560, has_predefined: false, t_in: 168, t_out: 1, split: [0.6, 0.2, 0.2], lstm_out: 16, layers: 2, gnn_out: 32, d_value: 128, c: 15 },
    Preset { name: "traffic", nodes: 862, samples: 17_544, has_predefined: false, t_in: 168, t_out: 1, split: [0.6, 0.2, 0.2], lstm_out: 16, layers: 2, gnn_out: 128, d_value: 256, c: 15 },
    Preset { name: "electricity", nodes: 321, samples: 26_304, has_predefined: false, t_in: 168, t_out: 1, split: [0.6, 0.2, 0.2], lstm_out: 16, layers: 2, gnn_out: 32, d_value: 128, c: 15 },
    Preset { name: "metr-la", nodes: 207, samples: 34_272, has_predefined: true, t_in: 12, t_out: 12, split: [0.7, 0.1, 0.2], lstm_out: 16, layers: 2, gnn_out: 128, d_value: 256, c: 15 },
    Preset { name: "pems-bay", nodes: 325, samples: 52_116, has_predefined: true, t_in: 12, t_out: 12, split: [0.7, 0.1, 0.2], lstm_out: 32, layers: 2, gnn_out: 256, d_value: 512, c: 15 },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Everything a train/evaluate/forecast/export run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub series: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub adjacency_format: AdjacencyFormat,
    /// When set, the series must have exactly this many columns.
    pub nodes: Option<usize>,
    pub t_in: usize,
    pub t_out: usize,
    pub split: [f64; 3],
    pub lstm_out: usize,
    pub layers: usize,
    pub gnn_out: usize,
    pub d_embed: usize,
    pub d_attn: usize,
    pub d_value: usize,
    /// Gumbel samples / kept neighbours; `None` means `min(15, N − 1)`.
    pub c: Option<usize>,
    pub tau: f64,
    pub dropout: f64,
    pub allow_self_loops: bool,
    pub use_agl: bool,
    pub use_ap: bool,
    pub use_arl: bool,
    pub lr_agl: f64,
    pub lr_other: f64,
    /// Global-norm clip; `0` disables clipping.
    pub clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask_zeros: bool,
    pub checkpoint: Option<PathBuf>,
}

pub const RUN_KEYS: &[&str] = &[
    "preset",
    "series",
    "adjacency",
    "adjacency_format",
    "nodes",
    "t_in",
    "t_out",
    "split",
    "lstm_out",
    "layers",
    "gnn_out",
    "d_embed",
    "d_attn",
    "d_value",
    "c",
    "tau",
    "dropout",
    "allow_self_loops",
    "use_agl",
    "use_ap",
    "use_arl",
    "lr_agl",
    "lr_other",
    "clip",
    "epochs",
    "batch_size",
    "seed",
    "mask_zeros",
    "checkpoint",
];

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let model = ModelConfig::new(1, 12, 12);
        let train = TrainConfig::default();
        Self {
            preset: None,
            series: None,
            adjacency: None,
            adjacency_format: AdjacencyFormat::Auto,
            nodes: None,
            t_in: 12,
            t_out: 12,
            split: [0.6, 0.2, 0.2],
            lstm_out: model.lstm_hidden,
            layers: model.gnn_layers,
            gnn_out: model.gnn_out,
            d_embed: model.embed_dim,
            d_attn: model.attn_dim,
            d_value: model.value_dim,
            c: None,
            tau: model.temperature,
            dropout: model.dropout,
            allow_self_loops: model.allow_self_loops,
            use_agl: true,
            use_ap: true,
            use_arl: true,
            lr_agl: adam.lr_graph,
            lr_other: adam.lr_other,
            clip: adam.clip.unwrap_or(0.0),
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: 0,
            mask_zeros: false,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then the presets named anywhere in `settings`, then every
    /// other setting in order.
    pub fn from_settings(settings: &[Setting]) -> Result<Self> {
        RunConfig::default().overlay(settings)
    }

    /// Applies `settings` on top of `self`, presets first.
    pub fn overlay(mut self, settings: &[Setting]) -> Result<Self> {
        for s in settings.iter().filter(|s| s.key == "preset") {
            self.apply(s)?;
        }
        for s in settings.iter().filter(|s| s.key != "preset") {
            self.apply(s)?;
        }
        Ok(self)
    }

    pub fn apply(&mut self, s: &Setting) -> Result<()> {
        match s.key.as_str() {
            "preset" => {
                let Some(p) = preset(&s.value) else {
                    let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
                    return Err(bad_value(s, &format!("one of {}", names.join(", "))));
                };
                self.preset = Some(p.name.to_string());
                self.nodes = Some(p.nodes);
                self.t_in = p.t_in;
                self.t_out = p.t_out;
                self.split = p.split;
                self.lstm_out = p.lstm_out;
                self.layers = p.layers;
                self.gnn_out = p.gnn_out;
                self.d_value = p.d_value;
                self.c = Some(p.c);
            }
            "series" => self.series = parse_path(s),
            "adjacency" => self.adjacency = parse_path(s),
            "adjacency_format" => {
                self.adjacency_format = match s.value.as_str() {
                    "auto" => AdjacencyFormat::Auto,
                    "dense" => AdjacencyFormat::Dense,
                    "edges" => AdjacencyFormat::Edges,
                    _ => return Err(bad_value(s, "auto, dense or edges")),
                }
            }
            "nodes" => self.nodes = if s.value == "auto" { None } else { Some(parse_num(s, "a node count or auto")?) },
            "t_in" => self.t_in = parse_num(s, "a step count")?,
            "t_out" => self.t_out = parse_num(s, "a step count")?,
            "split" => {
                let parts: Vec<&str> = s.value.split(',').map(str::trim).collect();
                let ratios: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
                if parts.len() != 3 || ratios.len() != 3 {
                    return Err(bad_value(s, "three comma-separated ratios such as 0.6,0.2,0.2"));
                }
                self.split = [ratios[0], ratios[1], ratios[2]];
            }
            "lstm_out" => self.lstm_out = parse_num(s, "a width")?,
            "layers" => self.layers = parse_num(s, "a layer count")?,
            "gnn_out" => self.gnn_out = parse_num(s, "a width")?,
            "d_embed" => self.d_embed = parse_num(s, "a width")?,
            "d_attn" => self.d_attn = parse_num(s, "a width")?,
            "d_value" => self.d_value = parse_num(s, "a width")?,
            "c" => self.c = if s.value == "auto" { None } else { Some(parse_num(s, "a neighbour count or auto")?) },
            "tau" => self.tau = parse_float(s)?,
            "dropout" => self.dropout = parse_float(s)?,
            "allow_self_loops" => self.allow_self_loops = parse_bool(s)?,
            "use_agl" => self.use_agl = parse_bool(s)?,
            "use_ap" => self.use_ap = parse_bool(s)?,
            "use_arl" => self.use_arl = parse_bool(s)?,
            "lr_agl" => self.lr_agl = parse_float(s)?,
            "lr_other" => self.lr_other = parse_float(s)?,
            "clip" => self.clip = parse_float(s)?,
            "epochs" => self.epochs = parse_num(s, "an epoch count")?,
            "batch_size" => self.batch_size = parse_num(s, "a batch size")?,
            "seed" => self.seed = parse_num(s, "an unsigned integer")?,
            "mask_zeros" => self.mask_zeros = parse_bool(s)?,
            "checkpoint" => self.checkpoint = parse_path(s),
            _ => return Err(unknown_key(s, RUN_KEYS)),
        }
        Ok(())
    }

    /// Canonical `key = value` text, one line per key in [`RUN_KEYS`] order.
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let auto = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let values = [
            self.preset.clone().unwrap_or_else(|| "none".into()),
            path(&self.series),
            path(&self.adjacency),
            self.adjacency_format.name().into(),
            auto(self.nodes),
            self.t_in.to_string(),
            self.t_out.to_string(),
            format!("{},{},{}", self.split[0], self.split[1], self.split[2]),
            self.lstm_out.to_string(),
            self.layers.to_string(),
            self.gnn_out.to_string(),
            self.d_embed.to_string(),
            self.d_attn.to_string(),
            self.d_value.to_string(),
            auto(self.c),
            self.tau.to_string(),
            self.dropout.to_string(),
            self.allow_self_loops.to_string(),
            self.use_agl.to_string(),
            self.use_ap.to_string(),
            self.use_arl.to_string(),
            self.lr_agl.to_string(),
            self.lr_other.to_string(),
            self.clip.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.mask_zeros.to_string(),
            path(&self.checkpoint),
        ];
        RUN_KEYS.iter().zip(values).fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k} = {v}");
            out
        })
    }

    /// Hash of the rendered config without the seed, so repeats of one
    /// experiment share it.
    pub fn hash(&self) -> String {
        let text: String = self.render().lines().filter(|l| !l.starts_with("seed ")).map(|l| format!("{l}\n")).collect();
        short_hash(&text)
    }

    pub fn model_config(&self, nodes: usize, has_predefined: bool) -> ModelConfig {
        let base = ModelConfig::new(nodes, self.t_in, self.t_out);
        ModelConfig {
            lstm_hidden: self.lstm_out,
            gnn_layers: self.layers,
            gnn_out: self.gnn_out,
            embed_dim: self.d_embed,
            attn_dim: self.d_attn,
            value_dim: self.d_value,
            samples: self.c.unwrap_or(base.samples),
            temperature: self.tau,
            dropout: self.dropout,
            use_agl: self.use_agl,
            use_predefined: self.use_ap,
            use_arl: self.use_arl,
            allow_self_loops: self.allow_self_loops,
            has_predefined,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr_graph: self.lr_agl,
                lr_other: self.lr_other,
                clip: (self.clip > 0.0).then_some(self.clip),
                ..AdamConfig::default()
            },
            mask_zeros: self.mask_zeros,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|&r| !(r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must be positive and sum to 1, got {:?}", self.split)));
        }
        if self.clip < 0.0 || self.lr_agl <= 0.0 || self.lr_other <= 0.0 {
            return Err(Error::Config("learning rates must be positive and clip non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub spec: SyntheticSpec,
}

pub const SYNTHETIC_KEYS: &[&str] = &["n", "t", "k_true", "noise_std", "seed", "dynamics"];

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { spec: SyntheticSpec { nodes: 20, steps: 3000, k_true: 3, noise_std: 0.1, seed: 1, dynamics: Dynamics::Var1Tanh } }
    }
}

impl SyntheticConfig {
    pub fn from_settings(settings: &[Setting]) -> Result<Self> {
        let mut cfg = Self::default();
        for s in settings {
            let spec = &mut cfg.spec;
            match s.key.as_str() {
                "n" => spec.nodes = parse_num(s, "a node count")?,
                "t" => spec.steps = parse_num(s, "a step count")?,
                "k_true" => spec.k_true = parse_num(s, "an out-degree")?,
                "noise_std" => spec.noise_std = parse_float(s)?,
                "seed" => spec.seed = parse_num(s, "an unsigned integer")?,
                "dynamics" => {
                    spec.dynamics = match s.value.as_str() {
                        "var1-tanh" => Dynamics::Var1Tanh,
                        _ => return Err(bad_value(s, "var1-tanh")),
                    }
                }
                _ => return Err(unknown_key(s, SYNTHETIC_KEYS)),
            }
        }
        Ok(cfg)
    }


    pub fn render(&self) -> String {
        let s = &self.spec;
        let dynamics = match s.dynamics {
            Dynamics::Var1Tanh => "var1-tanh",
        };
        format!(
            "n = {}\nt = {}\nk_true = {}\nnoise_std = {}\nseed = {}\ndynamics = {dynamics}\n",
            s.nodes, s.steps, s.k_true, s.noise_std, s.seed
        )
    }

    pub fn hash(&self) -> String {
        let text: String = self.render().lines().filter(|l| !l.starts_with("seed ")).map(|l| format!("{l}\n")).collect();
        short_hash(&text)
    }
}

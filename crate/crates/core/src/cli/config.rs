//! Run configuration: defaults, a sectioned key-value file format and the
//! datasets and network layout it describes.
//!
//! ```text
//! [data]
//! source = synth
//! classes = 4
//! [quant]
//! xi = 2.8
//! [fusion]
//! mode = dynamic
//! reduced = back
//! ```
//!
//! Precedence: built-in defaults, then the config file, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{
    ChannelSpan, ChannelStats, CsvSchema, SynthBranch, SynthSpec, WindowDataset, load_csv,
    segment_windows, synth_dataset,
};
use crate::error::{Error, Result};
use crate::fusion::{Branch, FusionMode, FusionSpec};
use crate::model::{AdaDeltaConfig, NetworkConfig, TrainConfig};
use crate::quantize::{QuantConfig, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Synth,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    All,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "all" => Ok(Split::All),
            o => Err(Error::config(format!("unknown split '{o}' (expected train, val or all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: Source,
    pub csv: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub preset: Option<String>,
    /// 0 means "infer from labels" (CSV) or 4 (synthetic).
    pub classes: usize,
    pub windows_per_class: usize,
    pub noise: f32,
    pub branch_channels: usize,
    /// 0 means the layout's default: 96 for `unimib`, 64 otherwise.
    pub window_t: usize,
    pub stride: usize,
    pub downsample: usize,
    pub val_fraction: f64,
    pub quant: QuantConfig,
    pub fusion: FusionMode,
    pub reduced: Vec<String>,
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub phi_seed: u64,
    pub lambda: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: Source::Synth,
            csv: None,
            schema: None,
            preset: None,
            classes: 0,
            windows_per_class: 40,
            noise: 0.3,
            branch_channels: 4,
            window_t: 0,
            stride: 3,
            downsample: 1,
            val_fraction: 0.25,
            quant: QuantConfig::default(),
            fusion: FusionMode::Dynamic,
            reduced: vec!["back".into()],
            hidden: crate::model::DEFAULT_HIDDEN,
            epochs: 50,
            batch: 1024,
            seed: 0,
            phi_seed: 0,
            lambda: 1.0,
            out: PathBuf::from("runs"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("bad value '{v}' for {key}")))
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Applies one `section.key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data.source" => {
                self.source = match v {
                    "synth" => Source::Synth,
                    "csv" => Source::Csv,
                    o => return Err(Error::config(format!("unknown data source '{o}'"))),
                }
            }
            "data.csv" => self.csv = Some(PathBuf::from(v)),
            "data.schema" => self.schema = Some(PathBuf::from(v)),
            "data.preset" => self.preset = Some(v.to_string()),
            "data.classes" => self.classes = parse(key, v)?,
            "data.windows_per_class" => self.windows_per_class = parse(key, v)?,
            "data.noise" => self.noise = parse(key, v)?,
            "data.branch_channels" => self.branch_channels = parse(key, v)?,
            "data.window_t" => self.window_t = parse(key, v)?,
            "data.stride" => self.stride = parse(key, v)?,
            "data.downsample" => self.downsample = parse(key, v)?,
            "data.val_fraction" => self.val_fraction = parse(key, v)?,
            "quant.xi" => self.quant.xi = parse(key, v)?,
            "quant.k_w" => self.quant.k_w = parse(key, v)?,
            "quant.k_a" => self.quant.k_a = parse(key, v)?,
            "quant.rounding" => self.quant.rounding = Rounding::parse(v).map_err(|e| Error::config(e.to_string()))?,
            "fusion.mode" => self.fusion = v.parse()?,
            "fusion.reduced" => self.reduced = list(v),
            "network.hidden" => self.hidden = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch" => self.batch = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.phi_seed" => self.phi_seed = parse(key, v)?,
            "train.lambda" => self.lambda = parse(key, v)?,
            "output.out" => self.out = PathBuf::from(v),
            other => return Err(Error::config(format!("unknown setting '{other}'"))),
        }
        Ok(())
    }

    /// Layers a config file over `self`.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = line.strip_prefix('[') {
                section = rest
                    .strip_suffix(']')
                    .ok_or_else(|| bad(format!("unterminated section header '{line}'")))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got '{line}'")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            self.set(&key, v.trim()).map_err(|e| match e {
                Error::Config(m) => bad(m),
                e => bad(e.to_string()),
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(&std::fs::read_to_string(path)?, path)?;
        Ok(c)
    }

    /// Resolved snapshot; re-reading it reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let src = match self.source {
            Source::Synth => "synth",
            Source::Csv => "csv",
        };
        let _ = writeln!(s, "[data]\nsource = {src}");
        if let Some(p) = &self.csv {
            let _ = writeln!(s, "csv = {}", p.display());
        }
        if let Some(p) = &self.schema {
            let _ = writeln!(s, "schema = {}", p.display());
        }
        if let Some(p) = &self.preset {
            let _ = writeln!(s, "preset = {p}");
        }
        let _ = writeln!(
            s,
            "classes = {}\nwindows_per_class = {}\nnoise = {}\nbranch_channels = {}\nwindow_t = {}\nstride = {}\ndownsample = {}\nval_fraction = {}",
            self.classes, self.windows_per_class, self.noise, self.branch_channels, self.window_len(), self.stride, self.downsample, self.val_fraction
        );
        let _ = writeln!(
            s,
            "\n[quant]\nxi = {}\nk_w = {}\nk_a = {}\nrounding = {}",
            self.quant.xi,
            self.quant.k_w,
            self.quant.k_a,
            self.quant.rounding.name()
        );
        let _ = writeln!(s, "\n[fusion]\nmode = {}\nreduced = {}", self.fusion, self.reduced.join(","));
        let _ = writeln!(s, "\n[network]\nhidden = {}", self.hidden);
        let _ = writeln!(
            s,
            "\n[train]\nepochs = {}\nbatch = {}\nseed = {}\nphi_seed = {}\nlambda = {}",
            self.epochs, self.batch, self.seed, self.phi_seed, self.lambda
        );
        let _ = writeln!(s, "\n[output]\nout = {}", self.out.display());
        s
    }

    /// Window length in samples after applying the layout default.
    pub fn window_len(&self) -> usize {
        match (self.window_t, self.source, self.preset.as_deref()) {
            (0, Source::Csv, Some("unimib")) => 96,
            (0, _, _) => 64,
            (t, _, _) => t,
        }
    }

    fn synth_spec(&self) -> SynthSpec {
        let bc = self.branch_channels;
        SynthSpec {
            classes: if self.classes == 0 { 4 } else { self.classes },
            window_t: self.window_len(),
            branches: vec![
                SynthBranch::new("hand", bc, true),
                SynthBranch::new("back", bc, false),
                SynthBranch::new("ankle", bc, true),
            ],
            windows_per_class: self.windows_per_class,
            noise: self.noise,
            seed: self.seed,
        }
    }

    pub fn csv_schema(&self) -> Result<CsvSchema> {
        match (&self.schema, self.preset.as_deref()) {
            (Some(p), _) => CsvSchema::load(p),
            (None, Some("opportunity")) => Ok(CsvSchema::opportunity()),
            (None, Some("pamap2")) => Ok(CsvSchema::pamap2()),
            (None, Some("unimib")) => Ok(CsvSchema::unimib()),
            (None, Some(o)) => Err(Error::config(format!(
                "unknown preset '{o}' (expected opportunity, pamap2 or unimib)"
            ))),
            (None, None) => Err(Error::config("CSV data needs --schema or --preset")),
        }
    }

    /// Named channel spans of the configured input.
    pub fn spans(&self) -> Result<Vec<ChannelSpan>> {
        match self.source {
            Source::Synth => {
                let mut next = 0;
                Ok(self
                    .synth_spec()
                    .branches
                    .iter()
                    .map(|b| {
                        let s = ChannelSpan::new(b.name.clone(), next..next + b.channels);
                        next += b.channels;
                        s
                    })
                    .collect())
            }
            Source::Csv => Ok(self.csv_schema()?.spans),
        }
    }

    pub fn fusion_spec(&self, mode: FusionMode, reduced: &[String]) -> Result<FusionSpec> {
        let branches: Vec<Branch> = self
            .spans()?
            .into_iter()
            .map(|s| Branch::new(s.name, s.range))
            .collect();
        let spec = FusionSpec::new(mode, branches);
        if mode == FusionMode::Dynamic {
            let names: Vec<&str> = reduced.iter().map(String::as_str).collect();
            spec.with_reduced(&names)
        } else {
            Ok(spec)
        }
    }

    pub fn network_config(&self, classes: usize) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            hidden: self.hidden,
            quant: self.quant.clone(),
            ..NetworkConfig::new(self.window_len(), classes, self.fusion_spec(self.fusion, &self.reduced)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            seed: self.seed,
            phi_seed: self.phi_seed,
            optimizer: AdaDeltaConfig {
                decay: self.lambda,
                ..AdaDeltaConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quant.validate().map_err(|e| Error::config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1)"));
        }
        if self.batch == 0 || self.stride == 0 || self.downsample == 0 {
            return Err(Error::config("batch, stride and downsample must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config("lambda must be in (0, 1]"));
        }
        Ok(())
    }

    /// `(train, validation)` windows.
    pub fn datasets(&self) -> Result<(WindowDataset, WindowDataset)> {
        self.validate()?;
        match self.source {
            Source::Synth => {
                let ds = synth_dataset(&self.synth_spec())?;
                Ok(ds.split(1.0 - self.val_fraction, self.seed))
            }
            Source::Csv => self.csv_datasets(),
        }
    }

    /// The CSV stream is split in time, standardized with training statistics
    /// and then segmented.
    fn csv_datasets(&self) -> Result<(WindowDataset, WindowDataset)> {
        let schema = self.csv_schema()?;
        let path = self.csv.as_ref().ok_or_else(|| Error::config("no --csv path given"))?;
        let mut stream = load_csv(path, &schema)?;
        if self.downsample > 1 {
            stream = stream.downsample(self.downsample)?;
        }
        let classes = match (self.classes, stream.classes()) {
            (0, g) => g,
            (c, g) if g > c => {
                return Err(Error::config(format!(
                    "labels reach class {} but classes = {c}",
                    g - 1
                )))
            }
            (c, _) => c,
        };
        let cut = ((stream.len() as f64) * (1.0 - self.val_fraction)).floor() as usize;
        let c = stream.channels;
        let mut train = crate::data::LabeledStream {
            channels: c,
            data: stream.data[..cut * c].to_vec(),
            labels: stream.labels[..cut].to_vec(),
            sample_rate: stream.sample_rate,
        };
        let mut val = crate::data::LabeledStream {
            channels: c,
            data: stream.data[cut * c..].to_vec(),
            labels: stream.labels[cut..].to_vec(),
            sample_rate: stream.sample_rate,
        };
        let stats = ChannelStats::fit(&train)?;
        stats.apply(&mut train)?;
        stats.apply(&mut val)?;
        let mut tr = segment_windows(&train, &schema.spans, self.window_len(), self.stride)?;
        let mut va = segment_windows(&val, &schema.spans, self.window_len(), self.stride)?;
        tr.classes = classes;
        va.classes = classes;
        Ok((tr, va))
    }

    pub fn dataset_split(&self, split: Split) -> Result<WindowDataset> {
        let (tr, va) = self.datasets()?;
        Ok(match split {
            Split::Train => tr,
            Split::Val => va,
            Split::All => {
                let mut all = tr.clone();
                all.data.extend_from_slice(&va.data);
                all.labels.extend_from_slice(&va.labels);
                all
            }
        })
    }
}

//! Sensor streams, sliding-window segmentation and synthetic datasets.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A named span of sensor channels (one body location).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpan {
    pub name: String,
    pub range: Range<usize>,
}

impl ChannelSpan {
    pub fn new(name: impl Into<String>, range: Range<usize>) -> Self {
        Self {
            name: name.into(),
            range,
        }
    }
}

/// A multichannel recording with one label per timestamp, stored row-major
/// (`data[t * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub channels: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub sample_rate: f64,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Keeps every `factor`-th sample.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("downsampling factor must be positive"));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for t in (0..self.len()).step_by(factor) {
            data.extend_from_slice(&self.data[t * self.channels..(t + 1) * self.channels]);
            labels.push(self.labels[t]);
        }
        Ok(Self {
            channels: self.channels,
            data,
            labels,
            sample_rate: self.sample_rate / factor as f64,
        })
    }
}

/// Column layout of a CSV recording plus the body-location spans.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub channels: usize,
    pub delimiter: char,
    pub header: bool,
    pub sample_rate: f64,
    pub spans: Vec<ChannelSpan>,
}

impl CsvSchema {
    fn preset(channels: usize, sample_rate: f64, spans: &[(&str, Range<usize>)]) -> Self {
        Self {
            channels,
            delimiter: ',',
            header: false,
            sample_rate,
            spans: spans
                .iter()
                .map(|(n, r)| ChannelSpan::new(*n, r.clone()))
                .collect(),
        }
    }

    /// 63 channels: hand 36, back 9, ankle 18.
    pub fn opportunity() -> Self {
        Self::preset(63, 30.0, &[("hand", 0..36), ("back", 36..45), ("ankle", 45..63)])
    }

    /// 36 channels at the downsampled 33.3 Hz: hand, back (chest) and ankle, 12 each.
    pub fn pamap2() -> Self {
        Self::preset(36, 100.0 / 3.0, &[("hand", 0..12), ("back", 12..24), ("ankle", 24..36)])
    }

    /// A single 3-axis accelerometer.
    pub fn unimib() -> Self {
        Self::preset(3, 50.0, &[("phone", 0..3)])
    }

    /// Parses `key = value` lines. Recognized keys: `channels`, `delimiter`
    /// (`tab`, `space` or a single character), `header`, `sample_rate` and
    /// `branch.<name> = <first>-<last>` with inclusive column indices.
    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = Self {
            channels: 0,
            delimiter: ',',
            header: false,
            sample_rate: 0.0,
            spans: Vec::new(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: PathBuf::from("<schema>"),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "channels" => {
                    schema.channels = value.parse().map_err(|_| bad(format!("bad channel count '{value}'")))?
                }
                "delimiter" => {
                    schema.delimiter = match value {
                        "tab" => '\t',
                        "space" => ' ',
                        v if v.chars().count() == 1 => v.chars().next().unwrap(),
                        v => return Err(bad(format!("bad delimiter '{v}'"))),
                    }
                }
                "header" => {
                    schema.header = value.parse().map_err(|_| bad(format!("bad boolean '{value}'")))?
                }
                "sample_rate" => {
                    schema.sample_rate = value.parse().map_err(|_| bad(format!("bad sample rate '{value}'")))?
                }
                k if k.starts_with("branch.") => {
                    let name = &k["branch.".len()..];
                    let (a, b) = value
                        .split_once('-')
                        .ok_or_else(|| bad(format!("expected <first>-<last>, got '{value}'")))?;
                    let a: usize = a.trim().parse().map_err(|_| bad(format!("bad column '{a}'")))?;
                    let b: usize = b.trim().parse().map_err(|_| bad(format!("bad column '{b}'")))?;
                    if b < a {
                        return Err(bad(format!("empty span {a}-{b}")));
                    }
                    schema.spans.push(ChannelSpan::new(name, a..b + 1));
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        if schema.channels == 0 {
            return Err(Error::config("schema does not set 'channels'"));
        }
        if schema.spans.is_empty() {
            schema.spans.push(ChannelSpan::new("all", 0..schema.channels));
        }
        check_partition(&schema.spans, schema.channels)?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let delim = match self.delimiter {
            '\t' => "tab".to_string(),
            ' ' => "space".to_string(),
            c => c.to_string(),
        };
        let mut s = format!(
            "channels = {}\ndelimiter = {delim}\nheader = {}\nsample_rate = {}\n",
            self.channels, self.header, self.sample_rate
        );
        for span in &self.spans {
            s += &format!("branch.{} = {}-{}\n", span.name, span.range.start, span.range.end - 1);
        }
        s
    }
}

/// Checks that spans tile `[0, channels)` in order with no overlap or gap.
pub fn check_partition(spans: &[ChannelSpan], channels: usize) -> Result<()> {
    let mut next = 0;
    for s in spans {
        if s.range.start != next || s.range.is_empty() {
            return Err(Error::config(format!(
                "span '{}' = {:?} does not continue at channel {next}",
                s.name, s.range
            )));
        }
        next = s.range.end;
    }
    if next != channels {
        return Err(Error::config(format!("spans cover {next} of {channels} channels")));
    }
    Ok(())
}

/// Reads one timestamp per row: `channels` numeric columns then an integer
/// label. `NaN` (any case) or an empty field marks a gap; gaps are filled by
/// linear interpolation per channel, with leading and trailing gaps set to 0.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledStream> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, schema, path)
}

pub fn parse_csv(text: &str, schema: &CsvSchema, path: &Path) -> Result<LabeledStream> {
    let c = schema.channels;
    let mut data: Vec<f32> = Vec::new();
    let mut labels = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if schema.header && i == 0 {
            continue;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = if schema.delimiter == ' ' {
            line.split_whitespace().collect()
        } else {
            line.split(schema.delimiter).map(str::trim).collect()
        };
        if fields.len() != c + 1 {
            return Err(bad(format!("expected {} columns, found {}", c + 1, fields.len())));
        }
        for f in &fields[..c] {
            if f.is_empty() || f.eq_ignore_ascii_case("nan") {
                data.push(f32::NAN);
            } else {
                let v: f32 = f.parse().map_err(|_| bad(format!("non-numeric channel value '{f}'")))?;
                data.push(v);
            }
        }
        let label: usize = fields[c]
            .parse()
            .map_err(|_| bad(format!("label '{}' is not a nonnegative integer", fields[c])))?;
        labels.push(label);
    }
    let mut stream = LabeledStream {
        channels: c,
        data,
        labels,
        sample_rate: schema.sample_rate,
    };
    interpolate_gaps(&mut stream);
    Ok(stream)
}

fn interpolate_gaps(stream: &mut LabeledStream) {
    let (n, c) = (stream.len(), stream.channels);
    for ch in 0..c {
        let mut last: Option<usize> = None;
        let mut t = 0;
        while t < n {
            if !stream.data[t * c + ch].is_nan() {
                last = Some(t);
                t += 1;
                continue;
            }
            let start = t;
            while t < n && stream.data[t * c + ch].is_nan() {
                t += 1;
            }
            match (last, t < n) {
                (Some(a), true) => {
                    let (va, vb) = (stream.data[a * c + ch], stream.data[t * c + ch]);
                    let span = (t - a) as f32;
                    for k in start..t {
                        let w = (k - a) as f32 / span;
                        stream.data[k * c + ch] = va + (vb - va) * w;
                    }
                }
                _ => {
                    for k in start..t {
                        stream.data[k * c + ch] = 0.0;
                    }
                }
            }
        }
    }
}

/// Per-channel mean and standard deviation, fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(stream: &LabeledStream) -> Result<Self> {
        let (n, c) = (stream.len(), stream.channels);
        if n == 0 {
            return Err(Error::degenerate("cannot fit statistics on an empty stream"));
        }
        let mut mean = vec![0.0f64; c];
        for row in stream.data.chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; c];
        for row in stream.data.chunks(c) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, stream: &mut LabeledStream) -> Result<()> {
        if stream.channels != self.mean.len() {
            return Err(Error::dim(format!(
                "statistics for {} channels applied to {}",
                self.mean.len(),
                stream.channels
            )));
        }
        let c = stream.channels;
        for row in stream.data.chunks_mut(c) {
            for ch in 0..c {
                row[ch] = ((row[ch] as f64 - self.mean[ch]) / self.std[ch]) as f32;
            }
        }
        Ok(())
    }
}

/// Segmented windows stored channel-major: window `i` occupies
/// `data[i*S*T .. (i+1)*S*T]` with sample `(s, t)` at `s*T + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub window_t: usize,
    pub channels: usize,
    pub classes: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub spans: Vec<ChannelSpan>,
    pub sample_rate: f64,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.window_t * self.channels;
        &self.data[i * w..(i + 1) * w]
    }

    /// Class proportions `w_g = N_g / N_total`.
    pub fn class_proportions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.window_t * self.channels);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.window(i));
            labels.push(self.labels[i]);
        }
        Self {
            data,
            labels,
            spans: self.spans.clone(),
            ..*self
        }
    }

    /// Seeded, per-class split; roughly `train_fraction` of each class goes to
    /// the first returned set.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for g in 0..self.classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == g).collect();
            idx.shuffle(&mut rng);
            let k = (idx.len() as f64 * train_fraction).round() as usize;
            train.extend_from_slice(&idx[..k]);
            val.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        (self.subset(&train), self.subset(&val))
    }

    pub fn check(&self) -> Result<()> {
        if self.data.len() != self.len() * self.window_t * self.channels {
            return Err(Error::dim("window data length does not match window count"));
        }
        if let Some(&y) = self.labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::config(format!("label {y} outside [0, {})", self.classes)));
        }
        check_partition(&self.spans, self.channels)
    }
}

/// Most frequent label; ties go to the smallest class index.
pub fn majority_label(labels: &[usize]) -> usize {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let mut best = 0;
    for (g, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = g;
        }
    }
    best
}

/// Windows of length `t` starting every `stride` samples, each labeled with its
/// majority timestamp label.
pub fn segment_windows(
    stream: &LabeledStream,
    spans: &[ChannelSpan],
    window_t: usize,
    stride: usize,
) -> Result<WindowDataset> {
    if window_t == 0 || stride == 0 {
        return Err(Error::param("window length and stride must be positive"));
    }
    let c = stream.channels;
    let classes = stream.classes();
    let mut out = WindowDataset {
        window_t,
        channels: c,
        classes,
        data: Vec::new(),
        labels: Vec::new(),
        spans: spans.to_vec(),
        sample_rate: stream.sample_rate,
    };
    if stream.len() < window_t {
        log::warn!(
            "stream of {} samples is shorter than the window ({window_t}); no windows produced",
            stream.len()
        );
        return Ok(out);
    }
    let count = (stream.len() - window_t) / stride + 1;
    out.data.reserve(count * window_t * c);
    for w in 0..count {
        let start = w * stride;
        for ch in 0..c {
            for t in start..start + window_t {
                out.data.push(stream.data[t * c + ch]);
            }
        }
        out.labels.push(majority_label(&stream.labels[start..start + window_t]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBranch {
    pub name: String,
    pub channels: usize,
    /// Uninformative branches draw their signal independently of the class.
    pub informative: bool,
}

impl SynthBranch {
    pub fn new(name: impl Into<String>, channels: usize, informative: bool) -> Self {
        Self {
            name: name.into(),
            channels,
            informative,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub window_t: usize,
    pub branches: Vec<SynthBranch>,
    pub windows_per_class: usize,
    pub noise: f32,
    pub seed: u64,
}

impl SynthSpec {
    /// Hand / back / ankle branches of 4 channels each, back uninformative.
    pub fn three_branch(classes: usize, window_t: usize, windows_per_class: usize, seed: u64) -> Self {
        Self {
            classes,
            window_t,
            branches: vec![
                SynthBranch::new("hand", 4, true),
                SynthBranch::new("back", 4, false),
                SynthBranch::new("ankle", 4, true),
            ],
            windows_per_class,
            noise: 0.3,
            seed,
        }
    }
}

/// Class `g` is a sum of sinusoids at `2 + 2g` cycles per window (plus a
/// channel-dependent harmonic), random phase per window and Gaussian noise.
/// Uninformative branches pick their frequency class at random.
pub fn synth_dataset(spec: &SynthSpec) -> Result<WindowDataset> {
    if spec.classes < 2 {
        return Err(Error::param("synthetic data needs at least two classes"));
    }
    if spec.branches.is_empty() || spec.window_t == 0 {
        return Err(Error::param("synthetic data needs branches and a positive window length"));
    }
    let noise = Normal::new(0.0f32, spec.noise.max(0.0)).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let channels: usize = spec.branches.iter().map(|b| b.channels).sum();
    let t_len = spec.window_t;
    let mut spans = Vec::new();
    let mut next = 0;
    for b in &spec.branches {
        spans.push(ChannelSpan::new(b.name.clone(), next..next + b.channels));
        next += b.channels;
    }
    let n = spec.classes * spec.windows_per_class;
    let mut data = Vec::with_capacity(n * channels * t_len);
    let mut labels = Vec::with_capacity(n);
    let tau = std::f32::consts::TAU;
    for i in 0..n {
        let g = i % spec.classes;
        for b in &spec.branches {
            let cls = if b.informative { g } else { rng.random_range(0..spec.classes) };
            let f = 2.0 + 2.0 * cls as f32;
            for ch in 0..b.channels {
                let phase: f32 = rng.random_range(0.0..tau);
                let harmonic = 1.0 + (ch % 2) as f32;
                for t in 0..t_len {
                    let x = t as f32 / t_len as f32;
                    let v = (tau * f * x + phase).sin() + 0.5 * (tau * f * harmonic * x + phase).cos();
                    let eps = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(v + eps);
                }
            }
        }
        labels.push(g);
    }
    Ok(WindowDataset {
        window_t: t_len,
        channels,
        classes: spec.classes,
        data,
        labels,
        spans,
        sample_rate: 32.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(len: usize, channels: usize, labels: Vec<usize>) -> LabeledStream {
        LabeledStream {
            channels,
            data: (0..len * channels).map(|i| i as f32).collect(),
            labels,
            sample_rate: 30.0,
        }
    }

    #[test]
    fn window_count_and_starts() {
        let s = stream(70, 2, vec![0; 70]);
        let spans = [ChannelSpan::new("all", 0..2)];
        let ds = segment_windows(&s, &spans, 64, 3).unwrap();
        assert_eq!(ds.len(), 3);
        // window 1 starts at t = 3: channel 0 sample = 3*2 + 0
        assert_eq!(ds.window(1)[0], 6.0);
        assert_eq!(ds.window(2)[64], 13.0);
        for len in 64..200 {
            let s = stream(len, 1, vec![1; len]);
            let ds = segment_windows(&s, &[ChannelSpan::new("a", 0..1)], 64, 3).unwrap();
            assert_eq!(ds.len(), (len - 64) / 3 + 1);
            assert!(ds.labels.iter().all(|&y| y == 1));
        }
    }

    #[test]
    fn short_stream_is_empty() {
        let s = stream(10, 1, vec![0; 10]);
        let ds = segment_windows(&s, &[ChannelSpan::new("a", 0..1)], 64, 3).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn majority_labeling() {
        let mut labels = vec![0; 33];
        labels.extend(vec![1; 31]);
        assert_eq!(majority_label(&labels), 0);
        let mut labels = vec![2; 31];
        labels.extend(vec![1; 33]);
        assert_eq!(majority_label(&labels), 1);
        assert_eq!(majority_label(&[3, 1, 1, 3]), 1);
    }

    #[test]
    fn csv_interpolation_and_errors() {
        let schema = CsvSchema {
            channels: 2,
            delimiter: ',',
            header: true,
            sample_rate: 10.0,
            spans: vec![ChannelSpan::new("all", 0..2)],
        };
        let text = "a,b,label\nNaN,1.0,0\n5,NaN,0\n7,3.0,1\n9,NaN,1\n";
        let s = parse_csv(text, &schema, Path::new("x.csv")).unwrap();
        assert_eq!(s.labels, vec![0, 0, 1, 1]);
        assert_eq!(s.data, vec![0.0, 1.0, 5.0, 2.0, 7.0, 3.0, 9.0, 0.0]);

        let bad_cols = "h\n1,2\n";
        match parse_csv(bad_cols, &schema, Path::new("x.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("h\n1,abc,0\n", &schema, Path::new("x.csv")).is_err());
        assert!(parse_csv("h\n1,2,-1\n", &schema, Path::new("x.csv")).is_err());
    }

    #[test]
    fn standardization() {
        let mut s = LabeledStream {
            channels: 2,
            data: vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 6.0, 40.0],
            labels: vec![0; 4],
            sample_rate: 1.0,
        };
        let st = ChannelStats::fit(&s).unwrap();
        st.apply(&mut s).unwrap();
        let st2 = ChannelStats::fit(&s).unwrap();
        for ch in 0..2 {
            assert!(st2.mean[ch].abs() < 1e-6);
            assert!((st2.std[ch] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn schema_round_trip_and_presets() {
        for s in [CsvSchema::opportunity(), CsvSchema::pamap2(), CsvSchema::unimib()] {
            check_partition(&s.spans, s.channels).unwrap();
            assert_eq!(CsvSchema::parse(&s.to_text()).unwrap(), s);
        }
        assert_eq!(
            CsvSchema::opportunity().spans.iter().map(|s| s.range.len()).collect::<Vec<_>>(),
            [36, 9, 18]
        );
        assert!(CsvSchema::parse("channels = 4\nbranch.a = 0-1\nbranch.b = 3-3\n").is_err());
        assert!(CsvSchema::parse("channels = 4\nfoo = 1\n").is_err());
    }

    #[test]
    fn downsampling() {
        let s = stream(10, 1, (0..10).collect());
        let d = s.downsample(3).unwrap();
        assert_eq!(d.labels, vec![0, 3, 6, 9]);
        assert!((d.sample_rate - 10.0).abs() < 1e-12);
    }

    #[test]
    fn synth_determinism_and_shape() {
        let spec = SynthSpec::three_branch(4, 64, 5, 7);
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        assert_eq!(a, b);
        a.check().unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a.channels, 12);
        let p = a.class_proportions();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(synth_dataset(&SynthSpec::three_branch(1, 64, 5, 7)).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let ds = synth_dataset(&SynthSpec::three_branch(4, 16, 10, 1)).unwrap();
        let (tr, va) = ds.split(0.8, 3);
        assert_eq!(tr.len(), 32);
        assert_eq!(va.len(), 8);
        assert_eq!(va.class_proportions(), vec![0.25; 4]);
    }
}

//! Early, late and dynamic fusion of per-branch feature maps.
//!
//! In dynamic fusion every feature of a *reduced* branch is kept with
//! probability `p = Σ|W^q|/m`, where `W^q` are that branch's quantized last-conv
//! weights. Non-reduced branches always pass through, so dynamic fusion with no
//! reduced branch is late fusion.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantize::{quantize_linear, weight_scale, QuantConfig};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// All channels stacked into one sub-network.
    Early,
    /// One sub-network per branch, features concatenated.
    Late,
    /// Like late, with Bernoulli masks on reduced branches.
    Dynamic,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Early => "early",
            FusionMode::Late => "late",
            FusionMode::Dynamic => "dynamic",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(FusionMode::Early),
            "late" => Ok(FusionMode::Late),
            "dynamic" => Ok(FusionMode::Dynamic),
            other => Err(Error::config(format!(
                "unknown fusion mode '{other}' (expected early, late or dynamic)"
            ))),
        }
    }
}

impl FusionMode {
    pub fn tag(self) -> u8 {
        match self {
            FusionMode::Early => 0,
            FusionMode::Late => 1,
            FusionMode::Dynamic => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(FusionMode::Early),
            1 => Ok(FusionMode::Late),
            2 => Ok(FusionMode::Dynamic),
            t => Err(Error::format(format!("unknown fusion mode tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub name: String,
    pub channels: Range<usize>,
    pub reduced: bool,
}

impl Branch {
    pub fn new(name: impl Into<String>, channels: Range<usize>) -> Self {
        Self {
            name: name.into(),
            channels,
            reduced: false,
        }
    }

    pub fn width(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusionSpec {
    pub mode: FusionMode,
    pub branches: Vec<Branch>,
}

impl FusionSpec {
    pub fn new(mode: FusionMode, branches: Vec<Branch>) -> Self {
        Self { mode, branches }
    }

    /// Marks the named branches as reduced and every other branch as fixed.
    pub fn with_reduced(mut self, names: &[&str]) -> Result<Self> {
        for n in names {
            if !self.branches.iter().any(|b| b.name == *n) {
                return Err(Error::config(format!("no branch named '{n}'")));
            }
        }
        for b in &mut self.branches {
            b.reduced = names.contains(&b.name.as_str());
        }
        Ok(self)
    }

    /// Dynamic preset for periodic activities: only the back branch is reduced.
    pub fn periodic(branches: Vec<Branch>) -> Result<Self> {
        Self::new(FusionMode::Dynamic, branches).with_reduced(&["back"])
    }

    /// Dynamic preset for sporadic activities: back and ankle branches are reduced.
    pub fn sporadic(branches: Vec<Branch>) -> Result<Self> {
        Self::new(FusionMode::Dynamic, branches).with_reduced(&["back", "ankle"])
    }

    pub fn total_channels(&self) -> usize {
        self.branches.iter().map(|b| b.width()).sum()
    }

    /// Channel spans of the sub-networks actually built: one span covering
    /// everything for early fusion, one per branch otherwise.
    pub fn stacks(&self) -> Vec<Range<usize>> {
        match self.mode {
            FusionMode::Early => vec![0..self.total_channels()],
            _ => self.branches.iter().map(|b| b.channels.clone()).collect(),
        }
    }

    /// Whether stack `i` gets a Bernoulli mask.
    pub fn stack_reduced(&self, i: usize) -> bool {
        self.mode == FusionMode::Dynamic && self.branches[i].reduced
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::config("fusion needs at least one branch"));
        }
        let mut next = 0;
        for b in &self.branches {
            if b.channels.start != next || b.channels.is_empty() {
                return Err(Error::config(format!(
                    "branch '{}' spans {:?}; branches must tile the channels in order without gaps",
                    b.name, b.channels
                )));
            }
            next = b.channels.end;
        }
        if next != channels {
            return Err(Error::config(format!(
                "branches cover {next} channels, input has {channels}"
            )));
        }
        match self.mode {
            FusionMode::Late if self.branches.iter().any(|b| b.reduced) => Err(Error::config(
                "late fusion cannot have reduced branches",
            )),
            FusionMode::Dynamic if self.branches.iter().all(|b| b.reduced) => Err(Error::config(
                "dynamic fusion needs at least one fixed branch",
            )),
            _ => Ok(()),
        }
    }
}

/// Per-branch 0/1 masks plus the keep probabilities they were drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub masks: Vec<Vec<bool>>,
    pub keep_probability: Vec<f64>,
}

impl FusionWeights {
    /// All-ones masks (late fusion).
    pub fn ones(dims: &[usize]) -> Self {
        Self {
            masks: dims.iter().map(|&d| vec![true; d]).collect(),
            keep_probability: vec![1.0; dims.len()],
        }
    }
}

/// `Σ|W^q_i| / m` over a quantized weight tensor.
pub fn keep_probability(w_q: &DenseTensor) -> Result<f64> {
    if w_q.is_empty() {
        return Err(Error::degenerate("keep probability of an empty tensor"));
    }
    let s: f64 = w_q.data().iter().map(|&v| (v as f64).abs()).sum();
    Ok(s / w_q.len() as f64)
}

/// Last-conv weights of one branch, either still full precision (train time)
/// or already quantized (run time).
#[derive(Debug, Clone, Copy)]
pub enum BranchWeights<'a> {
    FullPrecision(&'a DenseTensor),
    Quantized(&'a DenseTensor),
}

/// Draws fusion masks from explicit keep probabilities.
pub fn sample_masks<R: Rng>(spec: &FusionSpec, probs: &[f64], dims: &[usize], rng: &mut R) -> FusionWeights {
    let stacks = dims.len();
    let mut masks = Vec::with_capacity(stacks);
    let mut keep = Vec::with_capacity(stacks);
    for i in 0..stacks {
        if spec.stack_reduced(i) {
            let p = probs[i];
            masks.push((0..dims[i]).map(|_| rng.random::<f64>() < p).collect());
            keep.push(p);
        } else {
            masks.push(vec![true; dims[i]]);
            keep.push(1.0);
        }
    }
    FusionWeights {
        masks,
        keep_probability: keep,
    }
}

/// Quantizes (when needed) each branch's last-conv weights with the branch's own
/// `ε_w`, derives keep probabilities and draws masks from a seeded generator.
pub fn sample_fusion_weights(
    spec: &FusionSpec,
    conv3: &[BranchWeights<'_>],
    dims: &[usize],
    cfg: &QuantConfig,
    seed: u64,
) -> Result<FusionWeights> {
    let stacks = spec.stacks().len();
    if conv3.len() != stacks || dims.len() != stacks {
        return Err(Error::dim(format!(
            "{} weight tensors and {} feature sizes for {stacks} sub-networks",
            conv3.len(),
            dims.len()
        )));
    }
    let mut probs = Vec::with_capacity(stacks);
    for w in conv3 {
        let p = match *w {
            BranchWeights::Quantized(q) => keep_probability(q)?,
            BranchWeights::FullPrecision(w) => match weight_scale(w, cfg.xi) {
                Ok(eps) => keep_probability(&quantize_linear(w, eps, cfg.k_w, cfg.rounding)?)?,
                Err(Error::Degenerate(_)) => 0.0,
                Err(e) => return Err(e),
            },
        };
        probs.push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_masks(spec, &probs, dims, &mut rng))
}

/// Masks each `[batch, D_p]` feature map and concatenates along features.
pub fn apply_fusion(features: &[DenseTensor], weights: &FusionWeights) -> Result<DenseTensor> {
    if features.len() != weights.masks.len() {
        return Err(Error::dim(format!(
            "{} feature maps for {} masks",
            features.len(),
            weights.masks.len()
        )));
    }
    let batch = features.first().map(|f| f.shape()[0]).unwrap_or(0);
    for (f, m) in features.iter().zip(&weights.masks) {
        if f.rank() != 2 || f.shape()[0] != batch || f.shape()[1] != m.len() {
            return Err(Error::dim(format!(
                "feature map {:?} does not match mask of length {}",
                f.shape(),
                m.len()
            )));
        }
    }
    let total: usize = weights.masks.iter().map(|m| m.len()).sum();
    let mut out = Vec::with_capacity(batch * total);
    for b in 0..batch {
        for (f, m) in features.iter().zip(&weights.masks) {
            let d = m.len();
            let row = &f.data()[b * d..(b + 1) * d];
            out.extend(row.iter().zip(m).map(|(&v, &keep)| if keep { v } else { 0.0 }));
        }
    }
    DenseTensor::new(vec![batch, total], out)
}

/// Splits the gradient of [`apply_fusion`] back into masked per-branch pieces.
pub fn fusion_backward(grad: &DenseTensor, weights: &FusionWeights) -> Result<Vec<DenseTensor>> {
    let total: usize = weights.masks.iter().map(|m| m.len()).sum();
    if grad.rank() != 2 || grad.shape()[1] != total {
        return Err(Error::dim("fusion gradient does not match masks"));
    }
    let batch = grad.shape()[0];
    let mut parts: Vec<Vec<f32>> = weights
        .masks
        .iter()
        .map(|m| Vec::with_capacity(batch * m.len()))
        .collect();
    for b in 0..batch {
        let mut off = b * total;
        for (p, m) in parts.iter_mut().zip(&weights.masks) {
            let row = &grad.data()[off..off + m.len()];
            p.extend(row.iter().zip(m).map(|(&v, &keep)| if keep { v } else { 0.0 }));
            off += m.len();
        }
    }
    parts
        .into_iter()
        .zip(&weights.masks)
        .map(|(p, m)| DenseTensor::new(vec![batch, m.len()], p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_branches() -> Vec<Branch> {
        vec![Branch::new("hand", 0..4), Branch::new("back", 4..8), Branch::new("ankle", 8..12)]
    }

    #[test]
    fn keep_probability_examples() {
        assert_eq!(keep_probability(&DenseTensor::zeros(&[6])).unwrap(), 0.0);
        let all = DenseTensor::from_vec(vec![0.5, -0.5, 0.5, -0.5]);
        assert_eq!(keep_probability(&all).unwrap(), 0.5);
        let half = DenseTensor::from_vec(vec![0.5, 0.0, -0.5, 0.0]);
        assert_eq!(keep_probability(&half).unwrap(), 0.25);
        assert!(keep_probability(&DenseTensor::zeros(&[0])).is_err());
    }

    #[test]
    fn presets() {
        let p = FusionSpec::periodic(three_branches()).unwrap();
        assert_eq!(p.branches.iter().map(|b| b.reduced).collect::<Vec<_>>(), [false, true, false]);
        let s = FusionSpec::sporadic(three_branches()).unwrap();
        assert_eq!(s.branches.iter().map(|b| b.reduced).collect::<Vec<_>>(), [false, true, true]);
        p.validate(12).unwrap();
        s.validate(12).unwrap();
    }

    #[test]
    fn validation() {
        let late = FusionSpec::new(FusionMode::Late, three_branches());
        late.validate(12).unwrap();
        assert!(late.validate(13).is_err());
        assert!(late.clone().with_reduced(&["back"]).unwrap().validate(12).is_err());
        let dyn_all = FusionSpec::new(FusionMode::Dynamic, three_branches())
            .with_reduced(&["hand", "back", "ankle"])
            .unwrap();
        assert!(dyn_all.validate(12).is_err());
        let gap = FusionSpec::new(FusionMode::Late, vec![Branch::new("a", 0..3), Branch::new("b", 4..6)]);
        assert!(gap.validate(6).is_err());
        assert!(FusionSpec::new(FusionMode::Late, three_branches()).with_reduced(&["torso"]).is_err());
    }

    #[test]
    fn muted_and_fixed_branches() {
        let spec = FusionSpec::sporadic(three_branches()).unwrap();
        let zero = DenseTensor::zeros(&[5, 4, 3]);
        let some = DenseTensor::from_vec(vec![0.5, -0.5, 0.0, 0.5]);
        let w = sample_fusion_weights(
            &spec,
            &[BranchWeights::Quantized(&zero), BranchWeights::Quantized(&zero), BranchWeights::Quantized(&some)],
            &[10, 10, 10],
            &QuantConfig::default(),
            3,
        )
        .unwrap();
        // hand is fixed even though its weights are zero
        assert!(w.masks[0].iter().all(|&b| b));
        assert!(w.masks[1].iter().all(|&b| !b));
        assert_eq!(w.keep_probability[2], 0.375);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = FusionSpec::periodic(three_branches()).unwrap();
        let w = DenseTensor::from_vec(vec![0.3, -1.0, 0.1, 0.8, -0.2, 0.05]);
        let args = [BranchWeights::FullPrecision(&w); 3];
        let cfg = QuantConfig::default();
        let a = sample_fusion_weights(&spec, &args, &[50, 50, 50], &cfg, 9).unwrap();
        let b = sample_fusion_weights(&spec, &args, &[50, 50, 50], &cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_fusion_weights(&spec, &args, &[50, 50, 50], &cfg, 10).unwrap();
        assert_ne!(a.masks[1], c.masks[1]);
    }

    #[test]
    fn apply_examples() {
        let g1 = DenseTensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let g2 = DenseTensor::new(vec![1, 3], vec![3.0, 4.0, 5.0]).unwrap();
        let ones = FusionWeights::ones(&[2, 3]);
        assert_eq!(apply_fusion(&[g1.clone(), g2.clone()], &ones).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = FusionWeights {
            masks: vec![vec![false, false], vec![true, false, true]],
            keep_probability: vec![0.0, 0.5],
        };
        let g = apply_fusion(&[g1.clone(), g2.clone()], &w).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 3.0, 0.0, 5.0]);
        let back = fusion_backward(&DenseTensor::filled(&[1, 5], 1.0), &w).unwrap();
        assert_eq!(back[0].data(), &[0.0, 0.0]);
        assert_eq!(back[1].data(), &[1.0, 0.0, 1.0]);
        assert!(apply_fusion(&[g1], &ones).is_err());
    }

    #[test]
    fn hand_worked_fusion() {
        // Two branches of 4 features; the second branch's weights quantize to
        // {0.5, 0, -0.5, 0} giving p = 0.25.
        let g = [
            DenseTensor::new(vec![1, 4], vec![0.5, -0.5, 0.0, 0.5]).unwrap(),
            DenseTensor::new(vec![1, 4], vec![0.5, 0.5, -0.5, 0.0]).unwrap(),
        ];
        let spec = FusionSpec::new(
            FusionMode::Dynamic,
            vec![Branch::new("hand", 0..1), Branch::new("back", 1..2)],
        )
        .with_reduced(&["back"])
        .unwrap();
        let w_back = DenseTensor::from_vec(vec![0.9, 0.1, -1.1, -0.05]);
        let w = sample_fusion_weights(
            &spec,
            &[BranchWeights::FullPrecision(&w_back), BranchWeights::FullPrecision(&w_back)],
            &[4, 4],
            &QuantConfig::default(),
            42,
        )
        .unwrap();
        assert_eq!(w.keep_probability, vec![1.0, 0.25]);
        let fused = apply_fusion(&g, &w).unwrap();
        let mut expected = vec![0.5, -0.5, 0.0, 0.5];
        for (i, &keep) in w.masks[1].iter().enumerate() {
            expected.push(if keep { g[1].data()[i] } else { 0.0 });
        }
        assert_eq!(fused.data(), &expected[..]);
    }
}

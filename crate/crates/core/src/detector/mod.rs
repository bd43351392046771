//! Toy row-anchor lane detector: three stride-2 convolutions, a dense hidden
//! layer and two heads (lane existence logits, per-anchor column). Gradients
//! with respect to parameters and input pixels are exact.

mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use train::{train, EpochStats, TrainConfig};

use crate::checkpoint::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_inplace, Conv2d, ConvGrad, Dense, DenseGrad, FeatureMap};
use crate::rng::rng_for;
use crate::scene::{is_missing, LaneLabel};
use crate::tensor::{Image, Latent};

pub const CHECKPOINT_KIND: &str = "detector";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub hidden: usize,
    pub lanes: usize,
    pub anchors: usize,
}

impl Architecture {
    pub fn new(lanes: usize, anchors: usize, input_shape: (usize, usize, usize)) -> Self {
        Self {
            input_height: input_shape.0,
            input_width: input_shape.1,
            input_channels: input_shape.2,
            conv_channels: vec![8, 16, 32],
            hidden: 128,
            lanes,
            anchors,
        }
    }

    /// Spatial size after each stride-2 convolution.
    pub fn feature_sizes(&self) -> Vec<(usize, usize)> {
        let mut hw = (self.input_height, self.input_width);
        self.conv_channels
            .iter()
            .map(|_| {
                hw = ((hw.0 - 1) / 2 + 1, (hw.1 - 1) / 2 + 1);
                hw
            })
            .collect()
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = *self.feature_sizes().last().unwrap();
        h * w * self.conv_channels.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut c_in = self.input_channels;
        for &c in &self.conv_channels {
            total += c * c_in * 9 + c;
            c_in = c;
        }
        total += self.flat_features() * self.hidden + self.hidden;
        total += self.hidden * self.lanes + self.lanes;
        total += self.hidden * self.lanes * self.anchors + self.lanes * self.anchors;
        total
    }

    fn validate(&self) -> Result<()> {
        if self.input_height == 0
            || self.input_width == 0
            || self.input_channels == 0
            || self.conv_channels.is_empty()
            || self.conv_channels.contains(&0)
            || self.hidden == 0
            || self.lanes == 0
            || self.anchors == 0
        {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

/// Which part of the task loss to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSelector {
    Cls,
    Reg,
    Total,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_reg: f64,
    /// Transition point of the smooth-L1 penalty, in normalized columns.
    pub smooth_l1_beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_reg: 5.0,
            smooth_l1_beta: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub exist_logits: Vec<f64>,
    /// `lanes x anchors`, lane-major, each in `(0, 1)` as column / width.
    pub coord_norm: Vec<f64>,
    pub lanes: usize,
    pub anchors: usize,
    pub width: usize,
    pub threshold: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Prediction {
    pub fn exist_prob(&self, lane: usize) -> f64 {
        sigmoid(self.exist_logits[lane])
    }

    pub fn exists(&self, lane: usize) -> bool {
        self.exist_prob(lane) >= self.threshold
    }

    /// Predicted column in pixels.
    pub fn column(&self, lane: usize, anchor: usize) -> f64 {
        self.coord_norm[lane * self.anchors + anchor] * self.width as f64
    }

    /// Predictions as a lane label: absent lanes and all their points are missing.
    pub fn to_label(&self, row_anchors: &[usize]) -> LaneLabel {
        let mut label = LaneLabel::empty(row_anchors.to_vec(), self.lanes, self.width);
        for i in 0..self.lanes {
            if self.exists(i) {
                label.exist[i] = true;
                for j in 0..self.anchors {
                    let c = self.column(i, j);
                    if c >= 0.0 && c < self.width as f64 {
                        label.lanes[i][j] = c;
                    }
                }
            }
        }
        label
    }
}

fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    let a = d.abs();
    if a < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (a - 0.5 * beta, d.signum())
    }
}

/// Binary cross-entropy on existence (mean over lanes) and smooth-L1 on the
/// normalized column error (mean over labelled cells).
pub fn loss(pred: &Prediction, target: &LaneLabel, weights: &LossWeights) -> Result<LossBreakdown> {
    let (l, _, _) = loss_and_grad(pred, target, weights)?;
    Ok(l)
}

/// Loss and its gradients with respect to the existence and coordinate
/// logits (before the sigmoid). Gradients are for the unweighted cls and reg
/// terms; callers combine them.
fn loss_and_grad(
    pred: &Prediction,
    target: &LaneLabel,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>, Vec<f64>)> {
    let (n, m) = (pred.lanes, pred.anchors);
    if target.num_lanes() != n || target.num_anchors() != m {
        return Err(Error::Shape(format!(
            "prediction is {n}x{m}, label is {}x{}",
            target.num_lanes(),
            target.num_anchors()
        )));
    }
    let mut cls = 0.0;
    let mut d_exist = vec![0.0; n];
    for i in 0..n {
        let z = pred.exist_logits[i];
        let e = if target.exist[i] { 1.0 } else { 0.0 };
        cls += z.max(0.0) - z * e + (-z.abs()).exp().ln_1p();
        d_exist[i] = (sigmoid(z) - e) / n as f64;
    }
    cls /= n as f64;

    let width = pred.width as f64;
    let mut reg = 0.0;
    let mut d_coord = vec![0.0; n * m];
    let mut count = 0usize;
    for i in 0..n {
        if !target.exist[i] {
            continue;
        }
        for j in 0..m {
            let t = target.lanes[i][j];
            if is_missing(t) {
                continue;
            }
            let p = pred.coord_norm[i * m + j];
            let (v, g) = smooth_l1(p - t / width, weights.smooth_l1_beta);
            reg += v;
            d_coord[i * m + j] = g * p * (1.0 - p);
            count += 1;
        }
    }
    if count > 0 {
        reg /= count as f64;
        for g in &mut d_coord {
            *g /= count as f64;
        }
    }
    Ok((
        LossBreakdown {
            cls_loss: cls,
            reg_loss: reg,
            total: cls + weights.lambda_reg * reg,
        },
        d_exist,
        d_coord,
    ))
}

fn selector_scales(selector: LossSelector, weights: &LossWeights) -> (f64, f64) {
    match selector {
        LossSelector::Cls => (1.0, 0.0),
        LossSelector::Reg => (0.0, 1.0),
        LossSelector::Total => (1.0, weights.lambda_reg),
    }
}

/// Parameter gradients in the same layout as [`DetectorState`].
#[derive(Clone, Debug)]
pub struct DetectorGrad {
    pub convs: Vec<ConvGrad>,
    pub hidden: DenseGrad,
    pub exist_head: DenseGrad,
    pub coord_head: DenseGrad,
}

impl DetectorGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        for d in [&self.hidden, &self.exist_head, &self.coord_head] {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

struct SampleTrace {
    input: FeatureMap,
    cols: Vec<Vec<f64>>,
    acts: Vec<FeatureMap>,
}

/// Cached activations of a batch forward pass.
struct BatchTrace {
    samples: Vec<SampleTrace>,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    exist_logits: Vec<f64>,
    coord_norm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState {
    pub arch: Architecture,
    pub convs: Vec<Conv2d>,
    pub hidden: Dense,
    pub exist_head: Dense,
    pub coord_head: Dense,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub seed: u64,
}

/// Deterministic uniform fan-in initialization.
pub fn init_detector(
    seed: u64,
    lanes: usize,
    anchors: usize,
    input_shape: (usize, usize, usize),
) -> Result<DetectorState> {
    DetectorState::init(seed, Architecture::new(lanes, anchors, input_shape))
}

impl DetectorState {
    pub fn init(seed: u64, arch: Architecture) -> Result<Self> {
        let mut state = Self::zeros(arch)?;
        state.seed = seed;
        let mut rng = rng_for(seed, "detector-init");
        for c in &mut state.convs {
            c.init(&mut rng);
        }
        state.hidden.init(&mut rng);
        state.exist_head.init(&mut rng);
        state.coord_head.init(&mut rng);
        // Small head weights keep initial sigmoids away from saturation.
        for w in state
            .exist_head
            .weight
            .iter_mut()
            .chain(state.coord_head.weight.iter_mut())
        {
            *w *= 0.1;
        }
        Ok(state)
    }

    /// All parameters zero; the loss is then constant in the input.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut convs = Vec::new();
        let mut c_in = arch.input_channels;
        for &c in &arch.conv_channels {
            convs.push(Conv2d::new(c_in, c, 2));
            c_in = c;
        }
        let flat = arch.flat_features();
        Ok(Self {
            hidden: Dense::new(flat, arch.hidden),
            exist_head: Dense::new(arch.hidden, arch.lanes),
            coord_head: Dense::new(arch.hidden, arch.lanes * arch.anchors),
            norm_mean: vec![0.45; arch.input_channels],
            norm_std: vec![0.25; arch.input_channels],
            convs,
            arch,
            seed: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum::<usize>()
            + self.hidden.param_count()
            + self.exist_head.param_count()
            + self.coord_head.param_count()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        for d in [&mut self.hidden, &mut self.exist_head, &mut self.coord_head] {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for c in &self.convs {
            out.extend_from_slice(&c.weight);
            out.extend_from_slice(&c.bias);
        }
        for d in [&self.hidden, &self.exist_head, &self.coord_head] {
            out.extend_from_slice(&d.weight);
            out.extend_from_slice(&d.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> DetectorGrad {
        DetectorGrad {
            convs: self.convs.iter().map(Conv2d::zero_grad).collect(),
            hidden: self.hidden.zero_grad(),
            exist_head: self.exist_head.zero_grad(),
            coord_head: self.coord_head.zero_grad(),
        }
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let a = &self.arch;
        let expect = (a.input_height, a.input_width, a.input_channels);
        if image.shape() != expect {
            return Err(Error::Shape(format!(
                "detector expects {:?}, image is {:?}",
                expect,
                image.shape()
            )));
        }
        Ok(())
    }

    fn normalize(&self, image: &Image) -> FeatureMap {
        let (h, w, c) = image.shape();
        let mut fm = FeatureMap::zeros(c, h, w);
        let src = image.as_slice();
        for ch in 0..c {
            let (mu, sd) = (self.norm_mean[ch], self.norm_std[ch]);
            let plane = &mut fm.data[ch * h * w..(ch + 1) * h * w];
            for (p, v) in plane.iter_mut().enumerate() {
                *v = (src[p * c + ch] - mu) / sd;
            }
        }
        fm
    }

    fn conv_forward(&self, image: &Image) -> SampleTrace {
        let input = self.normalize(image);
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut acts: Vec<FeatureMap> = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let x = acts.last().unwrap_or(&input);
            let (mut out, col) = conv.forward(x);
            relu_inplace(&mut out.data);
            cols.push(col);
            acts.push(out);
        }
        SampleTrace { input, cols, acts }
    }

    fn forward_trace(&self, images: &[&Image]) -> Result<BatchTrace> {
        for img in images {
            self.check_image(img)?;
        }
        let samples: Vec<SampleTrace> = images.par_iter().map(|img| self.conv_forward(img)).collect();
        let batch = images.len();
        let flat_len = self.arch.flat_features();
        let mut flat = Vec::with_capacity(batch * flat_len);
        for s in &samples {
            flat.extend_from_slice(&s.acts.last().unwrap().data);
        }
        let mut hidden = self.hidden.forward(&flat, batch);
        relu_inplace(&mut hidden);
        let exist_logits = self.exist_head.forward(&hidden, batch);
        let coord_norm = self
            .coord_head
            .forward(&hidden, batch)
            .into_iter()
            .map(sigmoid)
            .collect();
        Ok(BatchTrace {
            samples,
            flat,
            hidden,
            exist_logits,
            coord_norm,
        })
    }

    fn prediction_at(&self, trace: &BatchTrace, b: usize) -> Prediction {
        let (n, m) = (self.arch.lanes, self.arch.anchors);
        Prediction {
            exist_logits: trace.exist_logits[b * n..(b + 1) * n].to_vec(),
            coord_norm: trace.coord_norm[b * n * m..(b + 1) * n * m].to_vec(),
            lanes: n,
            anchors: m,
            width: self.arch.input_width,
            threshold: 0.5,
        }
    }

    pub fn forward(&self, image: &Image) -> Result<Prediction> {
        let trace = self.forward_trace(&[image])?;
        Ok(self.prediction_at(&trace, 0))
    }

    /// Forward pass over many images, processed in chunks.
    pub fn forward_many(&self, images: &[&Image]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let trace = self.forward_trace(chunk)?;
            out.extend((0..chunk.len()).map(|b| self.prediction_at(&trace, b)));
        }
        Ok(out)
    }

    /// Mean absolute activation of each channel of the last convolution.
    pub fn last_conv_activation_means(&self, images: &[&Image]) -> Result<Vec<f64>> {
        let c = *self.arch.conv_channels.last().unwrap();
        let mut sums = vec![0.0; c];
        for img in images {
            self.check_image(img)?;
            let t = self.conv_forward(img);
            let act = t.acts.last().unwrap();
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += act.plane(ch).iter().map(|v| v.abs()).sum::<f64>() / act.plane(ch).len() as f64;
            }
        }
        let n = images.len().max(1) as f64;
        Ok(sums.into_iter().map(|s| s / n).collect())
    }

    /// Zeroes the listed channels of the last convolution, so they output 0.
    pub fn prune_last_conv(&mut self, channels: &[usize]) -> Result<()> {
        let conv = self.convs.last_mut().unwrap();
        let k = conv.k();
        for &ch in channels {
            if ch >= conv.out_ch {
                return Err(Error::Range(format!(
                    "channel {ch} >= {} channels",
                    conv.out_ch
                )));
            }
            conv.weight[ch * k..(ch + 1) * k].fill(0.0);
            conv.bias[ch] = 0.0;
        }
        Ok(())
    }

    /// Batch loss (mean over samples) and, optionally, parameter gradients
    /// and per-sample input gradients of the selected term.
    fn backward_batch(
        &self,
        images: &[&Image],
        targets: &[&LaneLabel],
        weights: &LossWeights,
        selector: LossSelector,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Vec<LossBreakdown>, Vec<Prediction>, Option<DetectorGrad>, Vec<Latent>)> {
        if images.len() != targets.len() || images.is_empty() {
            return Err(Error::Shape("images and targets must pair up".into()));
        }
        let batch = images.len();
        let trace = self.forward_trace(images)?;
        let (n, m) = (self.arch.lanes, self.arch.anchors);
        let (cls_scale, reg_scale) = selector_scales(selector, weights);
        let inv_b = 1.0 / batch as f64;

        let mut losses = Vec::with_capacity(batch);
        let mut preds = Vec::with_capacity(batch);
        let mut d_exist = vec![0.0; batch * n];
        let mut d_coord = vec![0.0; batch * n * m];
        for b in 0..batch {
            let pred = self.prediction_at(&trace, b);
            let (l, ge, gc) = loss_and_grad(&pred, targets[b], weights)?;
            for (dst, g) in d_exist[b * n..(b + 1) * n].iter_mut().zip(&ge) {
                *dst = cls_scale * g * inv_b;
            }
            for (dst, g) in d_coord[b * n * m..(b + 1) * n * m].iter_mut().zip(&gc) {
                *dst = reg_scale * g * inv_b;
            }
            losses.push(l);
            preds.push(pred);
        }

        let mut grads = want_params.then(|| self.zero_grad());
        let d_hidden_e = self.exist_head.backward(
            &trace.hidden,
            &d_exist,
            batch,
            grads.as_mut().map(|g| &mut g.exist_head),
            true,
        );
        let d_hidden_c = self.coord_head.backward(
            &trace.hidden,
            &d_coord,
            batch,
            grads.as_mut().map(|g| &mut g.coord_head),
            true,
        );
        let mut d_hidden: Vec<f64> = d_hidden_e
            .unwrap()
            .iter()
            .zip(d_hidden_c.unwrap())
            .map(|(a, b)| a + b)
            .collect();
        relu_backward(&trace.hidden, &mut d_hidden);
        let d_flat = self
            .hidden
            .backward(
                &trace.flat,
                &d_hidden,
                batch,
                grads.as_mut().map(|g| &mut g.hidden),
                true,
            )
            .unwrap();

        let flat_len = self.arch.flat_features();
        let per_sample: Vec<(Option<Vec<ConvGrad>>, Option<Latent>)> = trace
            .samples
            .par_iter()
            .enumerate()
            .map(|(b, s)| {
                let mut conv_grads = want_params.then(|| {
                    self.convs.iter().map(Conv2d::zero_grad).collect::<Vec<_>>()
                });
                let mut grad = d_flat[b * flat_len..(b + 1) * flat_len].to_vec();
                let last = self.convs.len() - 1;
                for li in (0..self.convs.len()).rev() {
                    relu_backward(&s.acts[li].data, &mut grad);
                    let x = if li == 0 { &s.input } else { &s.acts[li - 1] };
                    let need_input = li > 0 || want_input;
                    let gi = self.convs[li].backward(
                        &grad,
                        &s.cols[li],
                        (x.height, x.width),
                        conv_grads.as_mut().map(|g| &mut g[li]),
                        need_input,
                    );
                    match gi {
                        Some(g) => grad = g.data,
                        None => {
                            debug_assert!(li == 0 && li <= last);
                            grad.clear();
                        }
                    }
                }
                let input_grad = want_input.then(|| self.input_grad_to_hwc(&grad));
                (conv_grads, input_grad)
            })
            .collect();

        let mut input_grads = Vec::new();
        for (cg, ig) in per_sample {
            if let (Some(total), Some(cg)) = (grads.as_mut(), cg) {
                for (acc, g) in total.convs.iter_mut().zip(cg) {
                    for (a, v) in acc.weight.iter_mut().zip(&g.weight) {
                        *a += v;
                    }
                    for (a, v) in acc.bias.iter_mut().zip(&g.bias) {
                        *a += v;
                    }
                }
            }
            if let Some(ig) = ig {
                input_grads.push(ig);
            }
        }
        Ok((losses, preds, grads, input_grads))
    }

    fn input_grad_to_hwc(&self, chw: &[f64]) -> Latent {
        let a = &self.arch;
        let (h, w, c) = (a.input_height, a.input_width, a.input_channels);
        let mut out = Latent::zeros(h, w, c);
        for ch in 0..c {
            let inv = 1.0 / self.norm_std[ch];
            for p in 0..h * w {
                out.data[p * c + ch] = chw[ch * h * w + p] * inv;
            }
        }
        out
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn param_gradient(
        &self,
        images: &[&Image],
        targets: &[&LaneLabel],
        weights: &LossWeights,
        selector: LossSelector,
    ) -> Result<(LossBreakdown, DetectorGrad)> {
        let (losses, _, grads, _) =
            self.backward_batch(images, targets, weights, selector, true, false)?;
        Ok((mean_loss(&losses), grads.unwrap()))
    }

    /// Exact gradient of the selected loss with respect to every input pixel,
    /// laid out like the image (`row, col, channel`).
    pub fn input_gradient(
        &self,
        image: &Image,
        target: &LaneLabel,
        weights: &LossWeights,
        selector: LossSelector,
    ) -> Result<Latent> {
        let (_, _, _, mut g) =
            self.backward_batch(&[image], &[target], weights, selector, false, true)?;
        Ok(g.pop().unwrap())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let header = serde_json::json!({
            "arch": self.arch,
            "norm_mean": self.norm_mean,
            "norm_std": self.norm_std,
            "seed": self.seed,
        });
        write_container(path, CHECKPOINT_KIND, header, &self.params_flat())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (header, params) = read_container(path, CHECKPOINT_KIND)?;
        let arch: Architecture = serde_json::from_value(header["arch"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad architecture: {e}")))?;
        let mut state = Self::zeros(arch)?;
        state.norm_mean = serde_json::from_value(header["norm_mean"].clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        state.norm_std = serde_json::from_value(header["norm_std"].clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        state.seed = header["seed"].as_u64().unwrap_or(0);
        state
            .set_params_flat(&params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(state)
    }
}

pub fn mean_loss(losses: &[LossBreakdown]) -> LossBreakdown {
    let n = losses.len().max(1) as f64;
    let mut out = LossBreakdown {
        cls_loss: 0.0,
        reg_loss: 0.0,
        total: 0.0,
    };
    for l in losses {
        out.cls_loss += l.cls_loss / n;
        out.reg_loss += l.reg_loss / n;
        out.total += l.total / n;
    }
    out
}

//! Training loop: a cross-entropy-only first epoch, then cross-entropy plus
//! the weighted distance regularizer, with a hyperplane refit after every
//! epoch's validation pass.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::checkpoint::{self, NamedTensor};
use crate::data::{LabeledImage, TrainSample};
use crate::distance::{self, check_gamma, check_k, fit_hyperplane, Hyperplane, ScorePoint};
use crate::error::{Error, Result};
use crate::masking::{check_groups, BankGrads, MaskBank, PartGrad};
use crate::model::{argmax, ModelConfig, Vit};
use crate::optim::{Adam, StepRule};
use crate::rng::substream;
use crate::tensor::{Real, Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub groups: usize,
    pub k: usize,
    pub epochs: usize,
    pub threshold: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// When false the bank stays at its initial values.
    pub adapt_masks: bool,
    /// Fraction of the labelled data used for training; the rest validates.
    pub val_ratio: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma: 0.5,
            groups: 10,
            k: 2,
            epochs: 20,
            threshold: 1e-3,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            adapt_masks: true,
            val_ratio: 0.9,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        check_gamma(self.gamma)?;
        check_groups(self.groups)?;
        check_k(self.k)?;
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::config(format!(
                "threshold must be non-negative, got {}",
                self.threshold
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return Err(Error::config(format!("val_ratio {} outside (0, 1)", self.val_ratio)));
        }
        self.model.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_ce: f64,
    /// Absent in epoch 0.
    pub mean_dist: Option<f64>,
    pub total: f64,
    pub omega: f64,
    pub beta: f64,
    pub fitted: bool,
    pub val_acc: f64,
}

impl EpochStats {
    /// One line of space-separated `key=value` pairs.
    pub fn to_kv(&self) -> String {
        let mut s = format!("epoch={} ce={:e}", self.epoch, self.mean_ce);
        match self.mean_dist {
            Some(d) => write!(s, " dist={d:e}").unwrap(),
            None => s.push_str(" dist=none"),
        }
        write!(
            s,
            " total={:e} omega={:e} beta={:e} fitted={} val_acc={:e}",
            self.total, self.omega, self.beta, self.fitted, self.val_acc
        )
        .unwrap();
        s
    }
}

/// Model, bank, hyperplane and optimizer state carried across epochs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub model: Vit<T>,
    pub bank: MaskBank<T>,
    pub plane: Hyperplane,
    params_opt: Adam,
    bank_opt: Adam,
}

impl<T: Real> TrainState<T> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Vit::init(&cfg.model, &mut substream(cfg.seed, "init"))?;
        let bank = MaskBank::init(&cfg.model, cfg.groups)?;
        Ok(Self::from_parts(model, bank, Hyperplane::unfitted(), cfg.lr))
    }

    pub fn from_parts(model: Vit<T>, bank: MaskBank<T>, plane: Hyperplane, lr: f64) -> Self {
        Self {
            model,
            bank,
            plane,
            params_opt: Adam::new(lr),
            bank_opt: Adam::new(lr),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            bank: self.bank.clone(),
            plane: self.plane,
        }
    }
}

/// Gradient contributions of one training sample.
#[derive(Clone, Debug)]
pub struct SampleGrads<T> {
    pub ce: f64,
    pub dist: Option<f64>,
    /// Aligned with `ModelParams::slots`.
    pub params: Vec<Tensor<T>>,
    pub bank: BankGrads<T>,
}

/// Forward and backward for one sample. With `plane = Some` the loss is
/// `L_ce + α·L_dist`, otherwise `L_ce`. Bank gradients are routed to the
/// sample's part only.
pub fn sample_gradients<T: Real>(
    model: &Vit<T>,
    bank: &MaskBank<T>,
    sample: &TrainSample,
    plane: Option<&Hyperplane>,
    cfg: &TrainConfig,
) -> Result<SampleGrads<T>> {
    let y = usize::from(sample.y);
    let mut tape = Tape::new();
    let tr = model.trace(&mut tape, &sample.image, Some(bank), true)?;
    let ce = tape.cross_entropy(tr.scores, y)?;
    let ce_value = tape.value(ce).data()[0].as_f64();
    let (root, dist) = match plane {
        Some(p) => {
            let d = distance::distance_loss_on_tape(&mut tape, tr.scores, y, cfg.k, p, cfg.gamma)?;
            let d_value = tape.value(d).data()[0].as_f64();
            let weighted = tape.scale(d, T::of(cfg.alpha));
            (tape.add(ce, weighted)?, Some(d_value))
        }
        None => (ce, None),
    };
    let grads = tape.backward(root)?;
    let params = tr
        .params
        .slots()
        .into_iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.value(v).dims()))
        })
        .collect();

    let g = sample.part;
    let mut masks = Vec::with_capacity(tr.heads.len());
    let mut weight = T::zero();
    for ht in &tr.heads {
        let attn = tape.value(ht.attn);
        let up = grads
            .get(ht.output)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(attn.dims()));
        masks.push(bank.mask_gradient(&up, attn, ht.layer, ht.head, g, g)?);
        weight = weight + bank.weight_gradient(&up, attn, ht.layer, ht.head, g, g)?;
    }
    let mut bank_grads = BankGrads::new(bank.groups());
    bank_grads.add(g, PartGrad { masks, weight });
    Ok(SampleGrads {
        ce: ce_value,
        dist,
        params,
        bank: bank_grads,
    })
}

/// One pass over `train` in shuffled mini-batches.
///
/// Epoch 0 trains only the model parameters on cross-entropy. Later epochs add
/// the distance term and, when `cfg.adapt_masks`, update the touched parts of
/// the bank. The returned stats carry no validation fields yet.
pub fn train_epoch<T: Real>(
    state: &mut TrainState<T>,
    train: &[TrainSample],
    cfg: &TrainConfig,
    h: usize,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    for s in train {
        if s.part.get() > cfg.groups {
            return Err(Error::contract(format!("sample routed to part {} of {}", s.part, cfg.groups)));
        }
    }
    let plane = if h == 0 {
        None
    } else {
        Some(state.plane)
    };
    let update_bank = h > 0 && cfg.adapt_masks;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut substream(cfg.seed, &format!("shuffle-epoch-{h}")));

    let (mut ce_sum, mut dist_sum) = (0.0, 0.0);
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let model = &state.model;
        let bank = &state.bank;
        let per_sample: Vec<SampleGrads<T>> = chunk
            .par_iter()
            .map(|&i| sample_gradients(model, bank, &train[i], plane.as_ref(), cfg))
            .collect::<Result<_>>()?;

        let n = per_sample.len();
        let mut batch_ce = 0.0;
        let mut batch_dist = 0.0;
        let mut iter = per_sample.into_iter();
        let first = iter.next().expect("non-empty batch");
        batch_ce += first.ce;
        batch_dist += first.dist.unwrap_or(0.0);
        let mut params = first.params;
        let mut bank_grads = first.bank;
        for sg in iter {
            batch_ce += sg.ce;
            batch_dist += sg.dist.unwrap_or(0.0);
            for (a, g) in params.iter_mut().zip(&sg.params) {
                a.add_assign(g);
            }
            bank_grads.merge(sg.bank);
        }
        let batch_loss = (batch_ce + cfg.alpha * batch_dist) / n as f64;
        let finite = batch_loss.is_finite() && params.iter().all(Tensor::is_finite);
        if !finite {
            return Err(Error::NonFinite { epoch: h, batch: b });
        }
        ce_sum += batch_ce;
        dist_sum += batch_dist;

        let inv = T::of(1.0 / n as f64);
        for (slot, (p, g)) in state.model.params.slots_mut().into_iter().zip(&mut params).enumerate() {
            g.scale_in_place(inv);
            state.params_opt.step(slot, p.data_mut(), g.data());
        }
        if update_bank {
            bank_grads.scale(inv);
            state.bank.apply_updates(&bank_grads, &mut state.bank_opt);
        }
    }

    let n = train.len() as f64;
    let mean_ce = ce_sum / n;
    let mean_dist = plane.map(|_| dist_sum / n);
    Ok(EpochStats {
        epoch: h,
        mean_ce,
        mean_dist,
        total: distance::total_loss(mean_ce, mean_dist, cfg.alpha),
        omega: state.plane.omega,
        beta: state.plane.beta,
        fitted: state.plane.fitted,
        val_acc: f64::NAN,
    })
}

/// Score points and plain accuracy on the validation set.
pub fn validate<T: Real>(
    model: &Vit<T>,
    bank: &MaskBank<T>,
    val: &[LabeledImage],
    k: usize,
) -> Result<(Vec<ScorePoint>, f64)> {
    check_k(k)?;
    if val.is_empty() {
        return Err(Error::contract("validation set is empty"));
    }
    let scored: Vec<(ScorePoint, bool)> = val
        .par_iter()
        .map(|s| {
            let scores = model.forward(&s.image, bank)?;
            let y = usize::from(s.y);
            Ok((distance::score_point(&scores, y, k), argmax(&scores) == y))
        })
        .collect::<Result<_>>()?;
    let correct = scored.iter().filter(|(_, ok)| *ok).count();
    let points = scored.into_iter().map(|(p, _)| p).collect();
    Ok((points, correct as f64 / val.len() as f64))
}

#[derive(Clone, Debug)]
pub struct FitOutput<T> {
    pub state: TrainState<T>,
    pub history: Vec<EpochStats>,
}

/// Runs epochs while `h < E` and the previous epoch's mean loss exceeds the
/// threshold. `observer` sees every finished epoch and the state after it.
pub fn fit<T: Real>(
    train: &[TrainSample],
    val: &[LabeledImage],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &TrainState<T>) -> Result<()>,
) -> Result<FitOutput<T>> {
    let mut state = TrainState::new(cfg)?;
    let mut history = Vec::new();
    let mut loss = f64::INFINITY;
    let mut h = 0;
    while h < cfg.epochs && loss > cfg.threshold {
        let mut stats = train_epoch(&mut state, train, cfg, h)?;
        let (points, acc) = validate(&state.model, &state.bank, val, cfg.k)?;
        state.plane = fit_hyperplane(&points, &state.plane);
        stats.val_acc = acc;
        stats.omega = state.plane.omega;
        stats.beta = state.plane.beta;
        stats.fitted = state.plane.fitted;
        loss = stats.total;
        observer(&stats, &state)?;
        history.push(stats);
        h += 1;
    }
    Ok(FitOutput { state, history })
}

/// Everything needed to run inference or resume evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Vit<T>,
    pub bank: MaskBank<T>,
    pub plane: Hyperplane,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let c = &self.model.config;
        let header = [
            c.image_size,
            c.channels,
            c.patch_size,
            c.layers,
            c.heads,
            c.head_dim,
            c.ffn_hidden,
            c.num_classes,
            self.bank.groups(),
        ]
        .map(|v| v as f32);
        let mut out = vec![(
            "config".to_owned(),
            Tensor::new(vec![header.len()], header.to_vec()).expect("header dims"),
        )];
        out.extend(self.model.to_named());
        out.extend(self.bank.to_named());
        let plane = [
            self.plane.omega as f32,
            self.plane.beta as f32,
            f32::from(u8::from(self.plane.fitted)),
        ];
        out.push(("plane".to_owned(), Tensor::new(vec![3], plane.to_vec()).expect("plane dims")));
        out
    }

    pub fn from_named(mut tensors: Vec<NamedTensor>) -> Result<Self> {
        let header = checkpoint::take(&mut tensors, "config")?;
        let h: Vec<usize> = header
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Format(format!("config entry {v} is not a count")))
                }
            })
            .collect::<Result<_>>()?;
        if h.len() != 9 {
            return Err(Error::Format(format!("config tensor has {} entries, expected 9", h.len())));
        }
        let config = ModelConfig {
            image_size: h[0],
            channels: h[1],
            patch_size: h[2],
            layers: h[3],
            heads: h[4],
            head_dim: h[5],
            ffn_hidden: h[6],
            num_classes: h[7],
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("stored model config: {e}")))?;
        let model = Vit::from_named(&config, &mut tensors)?;
        let bank = MaskBank::from_named(&config, h[8], &mut tensors)?;
        let p = checkpoint::take(&mut tensors, "plane")?;
        if p.len() != 3 {
            return Err(Error::Format("plane tensor must hold 3 values".into()));
        }
        let plane = Hyperplane {
            omega: p.data()[0] as f64,
            beta: p.data()[1] as f64,
            fitted: p.data()[2] != 0.0,
        };
        if let Some((name, _)) = tensors.first() {
            return Err(Error::Format(format!("unexpected tensor {name}")));
        }
        Ok(Self { model, bank, plane })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save(path, &self.to_named())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_named(checkpoint::load(path)?)
    }
}

/// Hard predictions for a batch of images, never consulting sensitive labels.
pub fn predict<T: Real>(
    model: &Vit<T>,
    bank: &MaskBank<T>,
    images: &[crate::data::Image],
) -> Result<Vec<usize>> {
    images
        .par_iter()
        .map(|im| model.forward(im, bank).map(|s| argmax(&s)))
        .collect()
}

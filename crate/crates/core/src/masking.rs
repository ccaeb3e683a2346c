//! Group-routed adaptive attention masks.
//!
//! Every attention head `(l, h)` owns `G` masks of shape `p×d`, one per data
//! part, and all heads share the `G` part weights. Forward passes see only the
//! weighted sum of the masks; the gradient of a training sample is routed to
//! the masks and weight of the part that sample was assigned to.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::StepRule;
use crate::tensor::{Real, Tensor};

pub const WEIGHT_EPS: f64 = 1e-8;
pub const WEIGHT_MAX: f64 = 4.0;
pub const MASK_BOUND: f64 = 1.0;
pub const INIT_WEIGHT: f64 = 2.0;

/// 1-based part index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartIndex(usize);

impl PartIndex {
    pub fn new(g: usize, groups: usize) -> Result<Self> {
        if g == 0 || g > groups {
            return Err(Error::contract(format!("part {g} outside 1..={groups}")));
        }
        Ok(Self(g))
    }

    pub fn get(self) -> usize {
        self.0
    }

    fn slot(self) -> usize {
        self.0 - 1
    }
}

impl fmt::Display for PartIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn check_groups(groups: usize) -> Result<()> {
    if groups < 2 || !groups.is_multiple_of(2) {
        return Err(Error::config(format!(
            "part count G must be even and at least 2, got {groups}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskBank<T> {
    groups: usize,
    layers: usize,
    heads: usize,
    tokens: usize,
    head_dim: usize,
    /// Indexed by `(l * heads + h) * groups + (i - 1)`.
    masks: Vec<Tensor<T>>,
    weights: Vec<T>,
}

/// Routed gradients for one part, summed over the samples that hit it.
#[derive(Clone, Debug)]
pub struct PartGrad<T> {
    /// One `p×d` tensor per `(l, h)`, layer-major.
    pub masks: Vec<Tensor<T>>,
    pub weight: T,
}

/// Per-part gradient buffers. Parts that no sample touched stay `None`.
#[derive(Clone, Debug)]
pub struct BankGrads<T> {
    parts: Vec<Option<PartGrad<T>>>,
}

impl<T: Real> BankGrads<T> {
    pub fn new(groups: usize) -> Self {
        Self {
            parts: (0..groups).map(|_| None).collect(),
        }
    }

    pub fn part(&self, g: PartIndex) -> Option<&PartGrad<T>> {
        self.parts.get(g.slot()).and_then(Option::as_ref)
    }

    pub fn touched(&self) -> impl Iterator<Item = PartIndex> + '_ {
        self.parts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_some())
            .map(|(i, _)| PartIndex(i + 1))
    }

    pub fn add(&mut self, g: PartIndex, grad: PartGrad<T>) {
        match &mut self.parts[g.slot()] {
            Some(acc) => {
                for (a, b) in acc.masks.iter_mut().zip(&grad.masks) {
                    a.add_assign(b);
                }
                acc.weight = acc.weight + grad.weight;
            }
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn merge(&mut self, other: BankGrads<T>) {
        for (i, p) in other.parts.into_iter().enumerate() {
            if let Some(p) = p {
                self.add(PartIndex(i + 1), p);
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for p in self.parts.iter_mut().flatten() {
            for m in &mut p.masks {
                m.scale_in_place(c);
            }
            p.weight = p.weight * c;
        }
    }
}

fn clamp_open<T: Real>(v: T, lo: T, hi: T) -> T {
    if v <= lo {
        lo.step_up()
    } else if v >= hi {
        hi.step_down()
    } else {
        v
    }
}

impl<T: Real> MaskBank<T> {
    /// Masks at `1/(2G)` and weights at 2, so the weighted mask is all ones.
    pub fn init(config: &ModelConfig, groups: usize) -> Result<Self> {
        check_groups(groups)?;
        config.validate()?;
        let (p, d) = (config.tokens(), config.head_dim);
        let fill = T::of(1.0 / (2.0 * groups as f64));
        let n = config.layers * config.heads * groups;
        Ok(Self {
            groups,
            layers: config.layers,
            heads: config.heads,
            tokens: p,
            head_dim: d,
            masks: vec![Tensor::full(&[p, d], fill); n],
            weights: vec![T::of(INIT_WEIGHT); groups],
        })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn mask_dims(&self) -> [usize; 2] {
        [self.tokens, self.head_dim]
    }

    fn index(&self, l: usize, h: usize, i: PartIndex) -> usize {
        assert!(l < self.layers && h < self.heads, "head ({l}, {h}) out of range");
        (l * self.heads + h) * self.groups + i.slot()
    }

    pub fn part(&self, i: usize) -> Result<PartIndex> {
        PartIndex::new(i, self.groups)
    }

    pub fn mask(&self, l: usize, h: usize, i: PartIndex) -> &Tensor<T> {
        &self.masks[self.index(l, h, i)]
    }

    pub fn mask_mut(&mut self, l: usize, h: usize, i: PartIndex) -> &mut Tensor<T> {
        let idx = self.index(l, h, i);
        &mut self.masks[idx]
    }

    pub fn weight(&self, i: PartIndex) -> T {
        self.weights[i.slot()]
    }

    pub fn set_weight(&mut self, i: PartIndex, w: T) {
        self.weights[i.slot()] = w;
    }

    /// `Σ_i ς_i · M_{l,h,i}`, accumulated in `f64`.
    pub fn weighted_mask(&self, l: usize, h: usize) -> Tensor<T> {
        let [p, d] = self.mask_dims();
        let mut acc = vec![0.0f64; p * d];
        for i in 1..=self.groups {
            let i = PartIndex(i);
            let w = self.weight(i).as_f64();
            for (a, &m) in acc.iter_mut().zip(self.mask(l, h, i).data()) {
                *a += w * m.as_f64();
            }
        }
        Tensor::new(vec![p, d], acc.into_iter().map(T::of).collect()).expect("mask dims")
    }

    fn check_pair(&self, upstream: &Tensor<T>, attn: &Tensor<T>) -> Result<()> {
        let want = self.mask_dims();
        for (what, t) in [("upstream", upstream), ("attention", attn)] {
            if t.dims() != want {
                return Err(Error::shape(format!(
                    "{what} gradient input {:?}, mask is {want:?}",
                    t.dims()
                )));
            }
        }
        Ok(())
    }

    /// Routed gradient of `M_{l,h,i}` for a sample of part `g`:
    /// `(∂L/∂HA ⊙ Attn) · ς_i` when `i == g`, zero otherwise.
    pub fn mask_gradient(
        &self,
        upstream: &Tensor<T>,
        attn: &Tensor<T>,
        l: usize,
        h: usize,
        i: PartIndex,
        g: PartIndex,
    ) -> Result<Tensor<T>> {
        self.check_pair(upstream, attn)?;
        let _ = self.index(l, h, i);
        if i != g {
            return Ok(Tensor::zeros(upstream.dims()));
        }
        let w = self.weight(i);
        upstream.zip_map(attn, |u, a| u * a * w)
    }

    /// Routed gradient of `ς_i` from head `(l, h)` for a sample of part `g`:
    /// `Σ (∂L/∂HA ⊙ Attn ⊙ M_{l,h,i})` when `i == g`, zero otherwise.
    pub fn weight_gradient(
        &self,
        upstream: &Tensor<T>,
        attn: &Tensor<T>,
        l: usize,
        h: usize,
        i: PartIndex,
        g: PartIndex,
    ) -> Result<T> {
        self.check_pair(upstream, attn)?;
        let m = self.mask(l, h, i);
        if i != g {
            return Ok(T::zero());
        }
        Ok(upstream
            .data()
            .iter()
            .zip(attn.data())
            .zip(m.data())
            .map(|((&u, &a), &m)| u * a * m)
            .sum())
    }

    /// Gradient step on every touched part, then clamp into the valid ranges.
    /// Untouched parts keep both their values and their optimizer state.
    pub fn apply_updates(&mut self, grads: &BankGrads<T>, rule: &mut dyn StepRule<T>) {
        let per_part = self.layers * self.heads;
        for g in grads.touched().collect::<Vec<_>>() {
            let pg = grads.part(g).expect("touched part");
            for lh in 0..per_part {
                let (l, h) = (lh / self.heads, lh % self.heads);
                let slot = mask_slot(self.groups, l * self.heads + h, g);
                let m = self.mask_mut(l, h, g);
                rule.step(slot, m.data_mut(), pg.masks[lh].data());
            }
            let mut w = [self.weight(g)];
            rule.step(weight_slot(self.groups, per_part, g), &mut w, &[pg.weight]);
            self.set_weight(g, w[0]);
        }
        self.clamp();
    }

    pub fn clamp(&mut self) {
        let (mlo, mhi) = (T::of(-MASK_BOUND), T::of(MASK_BOUND));
        for m in &mut self.masks {
            for v in m.data_mut() {
                *v = clamp_open(*v, mlo, mhi);
            }
        }
        let (wlo, whi) = (T::of(WEIGHT_EPS), T::of(WEIGHT_MAX - WEIGHT_EPS));
        for w in &mut self.weights {
            *w = clamp_open(*w, wlo, whi);
        }
    }

    /// Checks every clamp invariant.
    pub fn within_bounds(&self) -> bool {
        let (mlo, mhi) = (T::of(-MASK_BOUND), T::of(MASK_BOUND));
        let (wlo, whi) = (T::of(WEIGHT_EPS), T::of(WEIGHT_MAX - WEIGHT_EPS));
        self.masks
            .iter()
            .flat_map(|m| m.data())
            .all(|&v| v > mlo && v < mhi)
            && self.weights.iter().all(|&w| w > wlo && w < whi)
    }

    pub fn cast<U: Real>(&self) -> MaskBank<U> {
        MaskBank {
            groups: self.groups,
            layers: self.layers,
            heads: self.heads,
            tokens: self.tokens,
            head_dim: self.head_dim,
            masks: self.masks.iter().map(Tensor::cast).collect(),
            weights: self.weights.iter().map(|w| U::of(w.as_f64())).collect(),
        }
    }

    /// Tensors named `mask.l{l}.h{h}.i{i}` and `sigma.i{i}`.
    pub fn to_named(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = Vec::with_capacity(self.masks.len() + self.groups);
        for l in 0..self.layers {
            for h in 0..self.heads {
                for i in 1..=self.groups {
                    let m = self.mask(l, h, PartIndex(i));
                    out.push((format!("mask.l{l}.h{h}.i{i}"), m.cast()));
                }
            }
        }
        for i in 1..=self.groups {
            let w = self.weight(PartIndex(i)).as_f64() as f32;
            out.push((format!("sigma.i{i}"), Tensor::scalar(w)));
        }
        out
    }

    pub fn from_named(
        config: &ModelConfig,
        groups: usize,
        tensors: &mut Vec<(String, Tensor<f32>)>,
    ) -> Result<Self> {
        let mut bank = Self::init(config, groups)?;
        let dims = bank.mask_dims();
        for l in 0..bank.layers {
            for h in 0..bank.heads {
                for i in 1..=groups {
                    let t = crate::checkpoint::take(tensors, &format!("mask.l{l}.h{h}.i{i}"))?;
                    if t.dims() != dims {
                        return Err(Error::Format(format!(
                            "mask.l{l}.h{h}.i{i} has dims {:?}, expected {dims:?}",
                            t.dims()
                        )));
                    }
                    *bank.mask_mut(l, h, PartIndex(i)) = t.cast();
                }
            }
        }
        for i in 1..=groups {
            let t = crate::checkpoint::take(tensors, &format!("sigma.i{i}"))?;
            if t.len() != 1 {
                return Err(Error::Format(format!("sigma.i{i} is not a scalar")));
            }
            bank.set_weight(PartIndex(i), T::of(t.data()[0] as f64));
        }
        Ok(bank)
    }
}

fn mask_slot(groups: usize, head: usize, g: PartIndex) -> usize {
    BANK_SLOT_BASE + head * groups + g.slot()
}

fn weight_slot(groups: usize, heads_total: usize, g: PartIndex) -> usize {
    BANK_SLOT_BASE + heads_total * groups + g.slot()
}

/// Optimizer slots at and above this value belong to the mask bank.
pub const BANK_SLOT_BASE: usize = 1 << 20;

//! Pre-norm vision transformer whose attention heads take a multiplicative
//! `p×d` mask on their output.

use rand_distr::{Distribution, Normal};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::masking::MaskBank;
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 1,
            patch_size: 8,
            layers: 2,
            heads: 2,
            head_dim: 16,
            ffn_hidden: 64,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Token count including the class token.
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid() + 1
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<P> {
    pub ln1_gain: P,
    pub ln1_bias: P,
    pub query: Vec<P>,
    pub key: Vec<P>,
    pub value: Vec<P>,
    pub out_proj: P,
    pub out_bias: P,
    pub ln2_gain: P,
    pub ln2_bias: P,
    pub ffn_in: P,
    pub ffn_in_bias: P,
    pub ffn_out: P,
    pub ffn_out_bias: P,
}

/// All trainable model tensors. Generic over the slot type so the same layout
/// holds values, tape handles, or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub patch_proj: P,
    pub patch_bias: P,
    pub class_token: P,
    pub positions: P,
    pub layers: Vec<LayerParams<P>>,
    pub final_gain: P,
    pub final_bias: P,
    pub head: P,
    pub head_bias: P,
}

impl<P> ModelParams<P> {
    /// Builds every slot in canonical order from its name and shape.
    pub fn try_build(
        config: &ModelConfig,
        mut make: impl FnMut(&str, &[usize]) -> Result<P>,
    ) -> Result<Self> {
        let (dm, d, f, c) = (
            config.model_dim(),
            config.head_dim,
            config.ffn_hidden,
            config.num_classes,
        );
        let patch_proj = make("patch.proj", &[config.patch_dim(), dm])?;
        let patch_bias = make("patch.bias", &[dm])?;
        let class_token = make("cls", &[1, dm])?;
        let positions = make("pos", &[config.tokens(), dm])?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let heads = |make: &mut dyn FnMut(&str, &[usize]) -> Result<P>, what: &str| {
                (0..config.heads)
                    .map(|h| make(&format!("layer{l}.head{h}.{what}"), &[dm, d]))
                    .collect::<Result<Vec<_>>>()
            };
            layers.push(LayerParams {
                ln1_gain: make(&format!("layer{l}.ln1.gain"), &[dm])?,
                ln1_bias: make(&format!("layer{l}.ln1.bias"), &[dm])?,
                query: heads(&mut make, "query")?,
                key: heads(&mut make, "key")?,
                value: heads(&mut make, "value")?,
                out_proj: make(&format!("layer{l}.attn.out"), &[dm, dm])?,
                out_bias: make(&format!("layer{l}.attn.out_bias"), &[dm])?,
                ln2_gain: make(&format!("layer{l}.ln2.gain"), &[dm])?,
                ln2_bias: make(&format!("layer{l}.ln2.bias"), &[dm])?,
                ffn_in: make(&format!("layer{l}.ffn.in"), &[dm, f])?,
                ffn_in_bias: make(&format!("layer{l}.ffn.in_bias"), &[f])?,
                ffn_out: make(&format!("layer{l}.ffn.out"), &[f, dm])?,
                ffn_out_bias: make(&format!("layer{l}.ffn.out_bias"), &[dm])?,
            });
        }
        Ok(Self {
            patch_proj,
            patch_bias,
            class_token,
            positions,
            layers,
            final_gain: make("final.gain", &[dm])?,
            final_bias: make("final.bias", &[dm])?,
            head: make("head", &[dm, c])?,
            head_bias: make("head.bias", &[c])?,
        })
    }

    /// Slots in canonical order.
    pub fn slots(&self) -> Vec<&P> {
        let mut out = vec![
            &self.patch_proj,
            &self.patch_bias,
            &self.class_token,
            &self.positions,
        ];
        for l in &self.layers {
            out.extend([&l.ln1_gain, &l.ln1_bias]);
            out.extend(l.query.iter());
            out.extend(l.key.iter());
            out.extend(l.value.iter());
            out.extend([
                &l.out_proj,
                &l.out_bias,
                &l.ln2_gain,
                &l.ln2_bias,
                &l.ffn_in,
                &l.ffn_in_bias,
                &l.ffn_out,
                &l.ffn_out_bias,
            ]);
        }
        out.extend([
            &self.final_gain,
            &self.final_bias,
            &self.head,
            &self.head_bias,
        ]);
        out
    }

    pub fn slots_mut(&mut self) -> Vec<&mut P> {
        let mut out = vec![
            &mut self.patch_proj,
            &mut self.patch_bias,
            &mut self.class_token,
            &mut self.positions,
        ];
        for l in &mut self.layers {
            out.extend([&mut l.ln1_gain, &mut l.ln1_bias]);
            out.extend(l.query.iter_mut());
            out.extend(l.key.iter_mut());
            out.extend(l.value.iter_mut());
            out.extend([
                &mut l.out_proj,
                &mut l.out_bias,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.ffn_in,
                &mut l.ffn_in_bias,
                &mut l.ffn_out,
                &mut l.ffn_out_bias,
            ]);
        }
        out.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.head,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> ModelParams<Q> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerParams {
                ln1_gain: f(&l.ln1_gain),
                ln1_bias: f(&l.ln1_bias),
                query: l.query.iter().map(&mut f).collect(),
                key: l.key.iter().map(&mut f).collect(),
                value: l.value.iter().map(&mut f).collect(),
                out_proj: f(&l.out_proj),
                out_bias: f(&l.out_bias),
                ln2_gain: f(&l.ln2_gain),
                ln2_bias: f(&l.ln2_bias),
                ffn_in: f(&l.ffn_in),
                ffn_in_bias: f(&l.ffn_in_bias),
                ffn_out: f(&l.ffn_out),
                ffn_out_bias: f(&l.ffn_out_bias),
            })
            .collect();
        ModelParams {
            patch_proj: f(&self.patch_proj),
            patch_bias: f(&self.patch_bias),
            class_token: f(&self.class_token),
            positions: f(&self.positions),
            layers,
            final_gain: f(&self.final_gain),
            final_bias: f(&self.final_bias),
            head: f(&self.head),
            head_bias: f(&self.head_bias),
        }
    }
}

/// Canonical tensor names, in slot order.
pub fn param_names(config: &ModelConfig) -> Vec<String> {
    ModelParams::try_build(config, |name, _| Ok(name.to_owned()))
        .expect("infallible")
        .slots()
        .into_iter()
        .cloned()
        .collect()
}

/// Tape handles recorded for one attention head.
#[derive(Clone, Copy, Debug)]
pub struct HeadTrace {
    pub layer: usize,
    pub head: usize,
    /// Attention probabilities `softmax(QKᵀ/√d)`, `p×p`.
    pub probs: Var,
    /// Unmasked head output `softmax(QKᵀ/√d)V`, `p×d`.
    pub attn: Var,
    /// Masked head output, `p×d`. Equal to `attn` when no mask is applied.
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub params: ModelParams<Var>,
    pub heads: Vec<HeadTrace>,
    /// Raw class scores, length `C`.
    pub scores: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vit<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor<T>>,
}

impl<T: Real> Vit<T> {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::try_build(config, |name, dims| {
            let n: usize = dims.iter().product();
            let data: Vec<T> = if name.ends_with("gain") {
                vec![T::one(); n]
            } else if name.contains("bias") {
                vec![T::zero(); n]
            } else {
                let std = if name == "cls" || name == "pos" {
                    0.02
                } else {
                    let (fan_in, fan_out) = (dims[0], dims[1]);
                    (2.0 / (fan_in + fan_out) as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| T::of(normal.sample(rng))).collect()
            };
            Tensor::new(dims.to_vec(), data)
        })?;
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.slots().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Vit<U> {
        Vit {
            config: self.config.clone(),
            params: self.params.map(Tensor::cast),
        }
    }

    /// Flattened patches, `(p-1) × patch_dim`, row-major over the patch grid.
    pub fn patch_matrix(&self, image: &Image) -> Result<Tensor<T>> {
        let c = &self.config;
        if image.channels != c.channels || image.height != c.image_size || image.width != c.image_size
        {
            return Err(Error::shape(format!(
                "image is {}x{}x{}, model expects {}x{}x{}",
                image.channels, image.height, image.width, c.channels, c.image_size, c.image_size
            )));
        }
        let (grid, ps) = (c.grid(), c.patch_size);
        let mut data = Vec::with_capacity(grid * grid * c.patch_dim());
        for gy in 0..grid {
            for gx in 0..grid {
                for ch in 0..c.channels {
                    for py in 0..ps {
                        for px in 0..ps {
                            data.push(T::of(
                                image.pixel(ch, gy * ps + py, gx * ps + px) as f64,
                            ));
                        }
                    }
                }
            }
        }
        Tensor::new(vec![grid * grid, c.patch_dim()], data)
    }

    fn register(&self, tape: &mut Tape<T>, track_grads: bool) -> ModelParams<Var> {
        self.params.map(|t| tape.leaf(t.clone(), track_grads))
    }

    /// Class token followed by projected patches, plus positional embeddings.
    pub fn patch_embed(
        &self,
        tape: &mut Tape<T>,
        vars: &ModelParams<Var>,
        image: &Image,
    ) -> Result<Var> {
        let patches = tape.constant(self.patch_matrix(image)?);
        let projected = tape.matmul(patches, vars.patch_proj)?;
        let projected = tape.add_row(projected, vars.patch_bias)?;
        let tokens = tape.concat_rows(&[vars.class_token, projected])?;
        tape.add(tokens, vars.positions)
    }

    /// One head: `M̃ ⊙ softmax(QKᵀ/√d)V` on already-normalized tokens.
    pub fn head_attention(
        &self,
        tape: &mut Tape<T>,
        normed: Var,
        vars: &ModelParams<Var>,
        layer: usize,
        head: usize,
        mask: Option<&Tensor<T>>,
    ) -> Result<HeadTrace> {
        let lv = &vars.layers[layer];
        let q = tape.matmul(normed, lv.query[head])?;
        let k = tape.matmul(normed, lv.key[head])?;
        let v = tape.matmul(normed, lv.value[head])?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, T::one() / T::of(self.config.head_dim as f64).sqrt());
        let probs = tape.softmax_rows(logits);
        let attn = tape.matmul(probs, v)?;
        let output = match mask {
            Some(m) => tape.mul_const(attn, m)?,
            None => attn,
        };
        Ok(HeadTrace {
            layer,
            head,
            probs,
            attn,
            output,
        })
    }

    /// Records the full forward pass. With `bank = None` the heads are
    /// unmasked. The weighted mask is always used: no sample-specific input
    /// reaches the forward pass.
    pub fn trace(
        &self,
        tape: &mut Tape<T>,
        image: &Image,
        bank: Option<&MaskBank<T>>,
        track_grads: bool,
    ) -> Result<ForwardTrace> {
        let c = &self.config;
        if let Some(b) = bank {
            if b.layers() != c.layers
                || b.heads() != c.heads
                || b.mask_dims() != [c.tokens(), c.head_dim]
            {
                return Err(Error::shape(format!(
                    "mask bank {}x{} heads of {:?} does not fit model {}x{} heads of {:?}",
                    b.layers(),
                    b.heads(),
                    b.mask_dims(),
                    c.layers,
                    c.heads,
                    [c.tokens(), c.head_dim]
                )));
            }
        }
        let vars = self.register(tape, track_grads);
        let mut x = self.patch_embed(tape, &vars, image)?;
        let eps = T::of(LN_EPS);
        let mut heads = Vec::with_capacity(c.layers * c.heads);
        for (l, lv) in vars.layers.iter().enumerate() {
            let normed = tape.layer_norm(x, lv.ln1_gain, lv.ln1_bias, eps)?;
            let mut outputs = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let mask = bank.map(|b| b.weighted_mask(l, h));
                let ht = self.head_attention(tape, normed, &vars, l, h, mask.as_ref())?;
                outputs.push(ht.output);
                heads.push(ht);
            }
            let mha = tape.concat_cols(&outputs)?;
            let projected = tape.matmul(mha, lv.out_proj)?;
            let projected = tape.add_row(projected, lv.out_bias)?;
            x = tape.add(x, projected)?;

            let normed = tape.layer_norm(x, lv.ln2_gain, lv.ln2_bias, eps)?;
            let hidden = tape.matmul(normed, lv.ffn_in)?;
            let hidden = tape.add_row(hidden, lv.ffn_in_bias)?;
            let hidden = tape.gelu(hidden);
            let out = tape.matmul(hidden, lv.ffn_out)?;
            let out = tape.add_row(out, lv.ffn_out_bias)?;
            x = tape.add(x, out)?;
        }
        let x = tape.layer_norm(x, vars.final_gain, vars.final_bias, eps)?;
        let cls = tape.row(x, 0)?;
        let cls = tape.reshape(cls, vec![1, c.model_dim()])?;
        let scores = tape.matmul(cls, vars.head)?;
        let scores = tape.add_row(scores, vars.head_bias)?;
        let scores = tape.reshape(scores, vec![c.num_classes])?;
        Ok(ForwardTrace {
            params: vars,
            heads,
            scores,
        })
    }

    /// Raw class scores under the bank's weighted masks.
    pub fn forward(&self, image: &Image, bank: &MaskBank<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let tr = self.trace(&mut tape, image, Some(bank), false)?;
        Ok(tape.value(tr.scores).data().to_vec())
    }

    /// Raw class scores with no masking at all.
    pub fn forward_unmasked(&self, image: &Image) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let tr = self.trace(&mut tape, image, None, false)?;
        Ok(tape.value(tr.scores).data().to_vec())
    }

    pub fn to_named(&self) -> Vec<(String, Tensor<f32>)> {
        param_names(&self.config)
            .into_iter()
            .zip(self.params.slots())
            .map(|(n, t)| (n, t.cast()))
            .collect()
    }

    pub fn from_named(config: &ModelConfig, tensors: &mut Vec<(String, Tensor<f32>)>) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::try_build(config, |name, dims| {
            let t = crate::checkpoint::take(tensors, name)?;
            if t.dims() != dims {
                return Err(Error::Format(format!(
                    "{name} has dims {:?}, expected {dims:?}",
                    t.dims()
                )));
            }
            Ok(t.cast())
        })?;
        Ok(Self {
            config: config.clone(),
            params,
        })
    }
}

/// Index of the largest score; ties go to the lower index.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng as _;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            channels: 1,
            patch_size: 8,
            layers: 2,
            heads: 2,
            head_dim: 4,
            ffn_hidden: 8,
            num_classes: 2,
        }
    }

    fn noise_image(cfg: &ModelConfig, seed: u64) -> Image {
        let mut rng = substream(seed, "img");
        let n = cfg.channels * cfg.image_size * cfg.image_size;
        Image::new(
            cfg.channels,
            cfg.image_size,
            cfg.image_size,
            (0..n).map(|_| rng.random::<f32>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn config_invariants() {
        assert_eq!(small().tokens(), 5);
        let bad = ModelConfig {
            patch_size: 5,
            ..small()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_image_embeds_to_bias_plus_positions() {
        let cfg = small();
        let vit = Vit::<f64>::init(&cfg, &mut substream(1, "init")).unwrap();
        let img = Image::new(1, 16, 16, vec![0.0; 256]).unwrap();
        let mut tape = Tape::new();
        let vars = vit.params.map(|t| tape.leaf(t.clone(), false));
        let emb = vit.patch_embed(&mut tape, &vars, &img).unwrap();
        let emb = tape.value(emb);
        assert_eq!(emb.dims(), &[5, 8]);
        let pos = &vit.params.positions;
        for j in 0..8 {
            assert_eq!(emb.at(0, j), vit.params.class_token.at(0, j) + pos.at(0, j));
            for i in 1..5 {
                assert_eq!(emb.at(i, j), vit.params.patch_bias.data()[j] + pos.at(i, j));
            }
        }
    }

    #[test]
    fn one_patch_change_touches_one_row() {
        let cfg = small();
        let vit = Vit::<f64>::init(&cfg, &mut substream(2, "init")).unwrap();
        let a = noise_image(&cfg, 3);
        let mut b = a.clone();
        // pixel (row 9, col 2) lies in patch (1, 0) -> token 3
        b.data[9 * 16 + 2] += 0.5;
        let embed = |img: &Image| {
            let mut tape = Tape::new();
            let vars = vit.params.map(|t| tape.leaf(t.clone(), false));
            let e = vit.patch_embed(&mut tape, &vars, img).unwrap();
            tape.value(e).clone()
        };
        let (ea, eb) = (embed(&a), embed(&b));
        for i in 0..5 {
            let same = ea.row(i) == eb.row(i);
            assert_eq!(same, i != 3, "row {i}");
        }
    }

    #[test]
    fn image_shape_mismatch() {
        let cfg = small();
        let vit = Vit::<f32>::init(&cfg, &mut substream(1, "init")).unwrap();
        let bank = MaskBank::init(&cfg, 2).unwrap();
        let img = Image::new(1, 8, 8, vec![0.0; 64]).unwrap();
        assert!(matches!(vit.forward(&img, &bank), Err(Error::Shape(_))));
    }

    fn hand_head() -> (Vit<f64>, Tape<f64>, Var, ModelParams<Var>) {
        // p = 2 tokens, d = 1; normed tokens are fed directly.
        let cfg = ModelConfig {
            image_size: 1,
            patch_size: 1,
            layers: 1,
            heads: 1,
            head_dim: 1,
            ffn_hidden: 1,
            ..small()
        };
        let mut vit = Vit::<f64>::init(&cfg, &mut substream(0, "init")).unwrap();
        let l = &mut vit.params.layers[0];
        l.query[0] = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        l.key[0] = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        l.value[0] = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let mut tape = Tape::new();
        let vars = vit.params.map(|t| tape.leaf(t.clone(), false));
        let x = tape.constant(Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap());
        (vit, tape, x, vars)
    }

    #[test]
    fn hand_computed_masked_head() {
        let (vit, mut tape, x, vars) = hand_head();
        let mask = Tensor::new(vec![2, 1], vec![0.5, 2.0]).unwrap();
        let ht = vit.head_attention(&mut tape, x, &vars, 0, 0, Some(&mask)).unwrap();
        // Q = [0, 1], K = [0, 2], V = [0, 3]; logits row0 = [0, 0], row1 = [0, 2]
        let e2 = 2f64.exp();
        let want = [0.5 * 1.5, 2.0 * 3.0 * e2 / (1.0 + e2)];
        let got = tape.value(ht.output).data();
        assert!((got[0] - want[0]).abs() < 1e-12);
        assert!((got[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn trivial_masks() {
        let (vit, mut tape, x, vars) = hand_head();
        let ones = Tensor::full(&[2, 1], 1.0);
        let plain = vit.head_attention(&mut tape, x, &vars, 0, 0, None).unwrap();
        let masked = vit.head_attention(&mut tape, x, &vars, 0, 0, Some(&ones)).unwrap();
        assert_eq!(tape.value(plain.output), tape.value(masked.output));
        let zeros = Tensor::zeros(&[2, 1]);
        let zeroed = vit.head_attention(&mut tape, x, &vars, 0, 0, Some(&zeros)).unwrap();
        assert!(tape.value(zeroed.output).data().iter().all(|&v| v == 0.0));
        let wrong = Tensor::zeros(&[3, 1]);
        assert!(vit.head_attention(&mut tape, x, &vars, 0, 0, Some(&wrong)).is_err());
    }

    #[test]
    fn forward_shapes_and_attention_rows() {
        let cfg = small();
        let vit = Vit::<f32>::init(&cfg, &mut substream(5, "init")).unwrap();
        let bank = MaskBank::init(&cfg, 4).unwrap();
        let img = noise_image(&cfg, 9);
        let mut tape = Tape::new();
        let tr = vit.trace(&mut tape, &img, Some(&bank), false).unwrap();
        assert_eq!(tape.value(tr.scores).dims(), &[2]);
        assert_eq!(tr.heads.len(), 4);
        for h in &tr.heads {
            assert_eq!(tape.value(h.output).dims(), &[5, 4]);
            let probs = tape.value(h.probs);
            for i in 0..5 {
                let s: f32 = probs.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
        assert_eq!(vit.forward(&img, &bank).unwrap(), vit.forward(&img, &bank).unwrap());
    }

    #[test]
    fn fresh_bank_is_transparent() {
        let cfg = small();
        let vit = Vit::<f32>::init(&cfg, &mut substream(6, "init")).unwrap();
        let img = noise_image(&cfg, 10);
        for g in [2, 4, 10] {
            let bank = MaskBank::init(&cfg, g).unwrap();
            assert_eq!(vit.forward(&img, &bank).unwrap(), vit.forward_unmasked(&img).unwrap());
        }
    }

    #[test]
    fn named_round_trip() {
        let cfg = small();
        let vit = Vit::<f32>::init(&cfg, &mut substream(6, "init")).unwrap();
        let mut named = vit.to_named();
        assert_eq!(named.len(), vit.params.slots().len());
        let back = Vit::<f32>::from_named(&cfg, &mut named).unwrap();
        assert_eq!(back, vit);
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}

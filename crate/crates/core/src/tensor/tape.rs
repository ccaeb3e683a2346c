use super::{softmax_rows, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor<T>),
    Scale(Var, T),
    AddScalar(Var),
    /// Elementwise map with its local derivative saved at forward time.
    Unary(Var, Vec<T>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass. Node order is a topological order, so backward
/// is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root w.r.t. every node that required them,
/// intermediates included.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let n = av.cols();
        if rv.len() != n {
            return Err(Error::shape(format!(
                "row broadcast {:?} + {:?}",
                av.dims(),
                rv.dims()
            )));
        }
        let mut out = av.clone();
        for chunk in out.data_mut().chunks_mut(n) {
            for (o, &r) in chunk.iter_mut().zip(rv.data()) {
                *o = *o + r;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(&mut self, a: Var, k: &Tensor<T>) -> Result<Var> {
        let out = self.value(a).zip_map(k, |x, y| x * y)?;
        Ok(self.push(out, Op::MulConst(a, k.clone()), &[a]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// Elementwise `f`, where `f` returns `(value, derivative)`.
    pub fn unary(&mut self, a: Var, f: impl Fn(T) -> (T, T)) -> Var {
        let src = self.value(a);
        let mut vals = Vec::with_capacity(src.len());
        let mut derivs = Vec::with_capacity(src.len());
        for &x in src.data() {
            let (y, dy) = f(x);
            vals.push(y);
            derivs.push(dy);
        }
        let out = Tensor {
            dims: src.dims().to_vec(),
            data: vals,
        };
        self.push(out, Op::Unary(a, derivs), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::of((2.0 / std::f64::consts::PI).sqrt());
        let k = T::of(0.044715);
        let half = T::of(0.5);
        let three = T::of(3.0);
        self.unary(a, |x| {
            let inner = c * (x + k * x * x * x);
            let t = inner.tanh();
            let y = half * x * (T::one() + t);
            let d_inner = c * (T::one() + three * k * x * x);
            let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * d_inner;
            (y, dy)
        })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance, then applies
    /// per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape(format!(
                "layer norm over {n} columns with gain {:?} and bias {:?}",
                self.value(gain).dims(),
                self.value(bias).dims()
            )));
        }
        let nf = T::of(n as f64);
        let mut normed = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            inv_std.push(r);
            normed.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let data = normed
            .chunks(n)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let out = Tensor {
            dims: xv.dims().to_vec(),
            data,
        };
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).dims().len() != 2 {
            return Err(Error::shape("transpose needs a matrix"));
        }
        let out = self.value(a).transpose();
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("empty concat"))?;
        let m = self.value(*first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::shape("concat_cols row mismatch"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor {
            dims: vec![m, total],
            data,
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("empty concat"))?;
        let n = self.value(*first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            return Err(Error::shape("concat_rows column mismatch"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor {
            dims: vec![data.len() / n, n],
            data,
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `i` of a matrix as a 1-D tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let av = self.value(a);
        if i >= av.rows() {
            return Err(Error::shape(format!("row {i} of {:?}", av.dims())));
        }
        let out = Tensor {
            dims: vec![av.cols()],
            data: av.row(i).to_vec(),
        };
        Ok(self.push(out, Op::Row(a, i), &[a]))
    }

    /// Picks flat elements into a 1-D tensor. Indices may repeat.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= av.len()) {
            return Err(Error::shape(format!(
                "gather {indices:?} from {:?}",
                av.dims()
            )));
        }
        let out = Tensor {
            dims: vec![indices.len()],
            data: indices.iter().map(|&i| av.data()[i]).collect(),
        };
        Ok(self.push(out, Op::Gather(a, indices.to_vec()), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// `logsumexp(logits) - logits[target]` for a single score vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(Error::contract(format!(
                "target {target} outside {} classes",
                lv.len()
            )));
        }
        let row = Tensor {
            dims: vec![1, lv.len()],
            data: lv.data().to_vec(),
        };
        let probs = softmax_rows(&row).into_data();
        let max = lv.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max
            + lv.data()
                .iter()
                .map(|&v| (v - max).exp())
                .sum::<T>()
                .ln();
        let out = Tensor::scalar(lse - lv.data()[target]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    pub fn reshape(&mut self, a: Var, dims: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(dims)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::contract("backward root is not on this tape"))?;
        if node.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got {:?}",
                node.value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Tensor::full(node.value.dims(), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    let bt = self.value(*b).transpose();
                    self.accumulate(grads, *a, g.matmul(&bt).expect("matmul grad"));
                }
                if self.requires_grad(*b) {
                    let at = self.value(*a).transpose();
                    self.accumulate(grads, *b, at.matmul(g).expect("matmul grad"));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    let n = g.cols();
                    let mut col_sums = vec![T::zero(); n];
                    for chunk in g.data().chunks(n) {
                        for (s, &v) in col_sums.iter_mut().zip(chunk) {
                            *s = *s + v;
                        }
                    }
                    let dims = self.value(*row).dims().to_vec();
                    self.accumulate(grads, *row, Tensor { dims, data: col_sums });
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y).expect("mul grad");
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y).expect("mul grad");
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulConst(a, k) => {
                self.accumulate(grads, *a, g.zip_map(k, |x, y| x * y).expect("mul grad"));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let dims = self.value(*a).dims().to_vec();
                let ga = Tensor {
                    dims,
                    data: g.data().to_vec(),
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Unary(a, derivs) => {
                let data = g.data().iter().zip(derivs).map(|(&x, &d)| x * d).collect();
                let dims = g.dims().to_vec();
                self.accumulate(grads, *a, Tensor { dims, data });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut data = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    data.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                let dims = y.dims().to_vec();
                self.accumulate(grads, *a, Tensor { dims, data });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let n = g.cols();
                let nf = T::of(n as f64);
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) || self.requires_grad(*bias) {
                    let mut dg = vec![T::zero(); n];
                    let mut db = vec![T::zero(); n];
                    for (gr, hr) in g.data().chunks(n).zip(normed.chunks(n)) {
                        for j in 0..n {
                            dg[j] = dg[j] + gr[j] * hr[j];
                            db[j] = db[j] + gr[j];
                        }
                    }
                    let gdims = self.value(*gain).dims().to_vec();
                    let bdims = self.value(*bias).dims().to_vec();
                    self.accumulate(grads, *gain, Tensor { dims: gdims, data: dg });
                    self.accumulate(grads, *bias, Tensor { dims: bdims, data: db });
                }
                if self.requires_grad(*x) {
                    let mut data = Vec::with_capacity(g.len());
                    for ((gr, hr), &r) in g.data().chunks(n).zip(normed.chunks(n)).zip(inv_std) {
                        let dh: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / nf;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        data.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(&d, &h)| r * (d - mean_dh - h * mean_dh_h)),
                        );
                    }
                    let dims = g.dims().to_vec();
                    self.accumulate(grads, *x, Tensor { dims, data });
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose());
            }
            Op::ConcatCols(parts) => {
                let m = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(m * w);
                        for i in 0..m {
                            data.extend_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        let dims = self.value(p).dims().to_vec();
                        self.accumulate(grads, p, Tensor { dims, data });
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        let dims = self.value(p).dims().to_vec();
                        let data = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, p, Tensor { dims, data });
                    }
                    offset += len;
                }
            }
            Op::Row(a, i) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.dims());
                let n = av.cols();
                ga.data_mut()[i * n..(i + 1) * n].copy_from_slice(g.data());
                self.accumulate(grads, *a, ga);
            }
            Op::Gather(a, indices) => {
                let mut ga = Tensor::zeros(self.value(*a).dims());
                for (&i, &v) in indices.iter().zip(g.data()) {
                    ga.data_mut()[i] = ga.data_mut()[i] + v;
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let up = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).dims(), up));
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let up = g.data()[0];
                let mut data: Vec<T> = probs.iter().map(|&p| p * up).collect();
                data[*target] = data[*target] - up;
                let dims = self.value(*logits).dims().to_vec();
                self.accumulate(grads, *logits, Tensor { dims, data });
            }
        }
    }
}

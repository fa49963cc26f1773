use std::hash::{DefaultHasher, Hash, Hasher};

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{ParameterStore, Real};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// One layer of a sequential network. All layers act row-wise on a batch
/// matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    /// `y = x W + b` with `W` stored as `input x output`.
    Dense {
        name: String,
        input: usize,
        output: usize,
    },
    /// `x tanh(softplus(x))`.
    Mish,
    /// Per-row normalization with learned gain and bias.
    LayerNorm { name: String, dim: usize },
    /// Appends the conditioning matrix passed to `forward`.
    ConcatCond { dim: usize },
    /// Replaces the last column (a step index) with a sinusoidal embedding
    /// of width `dim`.
    TimeEmbed { dim: usize },
}

impl LayerSpec {
    pub fn dense(name: impl Into<String>, input: usize, output: usize) -> Self {
        LayerSpec::Dense {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn layer_norm(name: impl Into<String>, dim: usize) -> Self {
        LayerSpec::LayerNorm {
            name: name.into(),
            dim,
        }
    }
}

/// Validated sequence of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    cond_dim: usize,
    output_dim: usize,
    id: u64,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Dense {
        input: Array2<T>,
    },
    Mish {
        input: Array2<T>,
    },
    LayerNorm {
        normalized: Array2<T>,
        inv_std: Vec<T>,
    },
    ConcatCond {
        split: usize,
    },
    TimeEmbed,
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    network: u64,
    version: u64,
    rows: usize,
}

impl<T> Tape<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

pub fn mish<T: Real>(x: T) -> T {
    // tanh(softplus(x)) = ((1 + e^x)^2 - 1) / ((1 + e^x)^2 + 1)
    if x > T::of(20.0) {
        return x;
    }
    let e = x.exp();
    let w = (T::one() + e) * (T::one() + e);
    x * (w - T::one()) / (w + T::one())
}

pub fn mish_grad<T: Real>(x: T) -> T {
    if x > T::of(20.0) {
        return T::one();
    }
    let e = x.exp();
    let w = (T::one() + e) * (T::one() + e);
    let t = (w - T::one()) / (w + T::one());
    let sigmoid = e / (T::one() + e);
    t + x * (T::one() - t * t) * sigmoid
}

/// Sinusoidal embedding of a scalar step index: `dim / 2` sines followed by
/// `dim / 2` cosines at geometrically spaced frequencies from 1 to 1e-4.
pub fn time_embedding<T: Real>(k: f64, dim: usize, out: &mut [T]) {
    let half = dim / 2;
    for i in 0..half {
        let freq = if half > 1 {
            (-(10_000f64.ln()) * i as f64 / (half - 1) as f64).exp()
        } else {
            1.0
        };
        out[i] = T::of((k * freq).sin());
        out[half + i] = T::of((k * freq).cos());
    }
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut width = input_dim;
        let mut cond_dim = 0;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { input, output, .. } => {
                    if *input != width || *output == 0 {
                        return Err(Error::DimensionMismatch(format!(
                            "layer {i}: dense expects {input} inputs, previous width is {width}"
                        )));
                    }
                    width = *output;
                }
                LayerSpec::Mish => {}
                LayerSpec::LayerNorm { dim, .. } => {
                    if *dim != width {
                        return Err(Error::DimensionMismatch(format!(
                            "layer {i}: layer norm over {dim}, previous width is {width}"
                        )));
                    }
                }
                LayerSpec::ConcatCond { dim } => {
                    if cond_dim != 0 && cond_dim != *dim {
                        return Err(Error::DimensionMismatch(format!(
                            "layer {i}: conditioning width {dim} differs from earlier {cond_dim}"
                        )));
                    }
                    cond_dim = *dim;
                    width += dim;
                }
                LayerSpec::TimeEmbed { dim } => {
                    if width == 0 || *dim < 2 || dim % 2 != 0 {
                        return Err(Error::DimensionMismatch(format!(
                            "layer {i}: time embedding needs an even width >= 2 and a step column"
                        )));
                    }
                    width = width - 1 + dim;
                }
            }
        }
        let mut h = DefaultHasher::new();
        input_dim.hash(&mut h);
        layers.hash(&mut h);
        Ok(Self {
            id: h.finish(),
            layers,
            input_dim,
            cond_dim,
            output_dim: width,
        })
    }

    /// Dense stack `input -> hidden[0] -> ... -> output` with Mish between
    /// layers and no activation after the last one.
    pub fn mlp(prefix: &str, input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(LayerSpec::dense(format!("{prefix}.{i}"), width, h));
            layers.push(LayerSpec::Mish);
            width = h;
        }
        layers.push(LayerSpec::dense(
            format!("{prefix}.{}", hidden.len()),
            width,
            output,
        ));
        Self::new(input, layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Registers this network's parameters. Dense weights are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases start at zero, layer
    /// norms at unit gain.
    pub fn init_params<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense {
                    name,
                    input,
                    output,
                } => {
                    let bound = 1.0 / (*input as f64).sqrt();
                    store.add_uniform(&format!("{name}.weight"), *input, *output, bound, rng)?;
                    store.add_vector(&format!("{name}.bias"), vec![T::zero(); *output])?;
                }
                LayerSpec::LayerNorm { name, dim } => {
                    store.add_vector(&format!("{name}.gain"), vec![T::one(); *dim])?;
                    store.add_vector(&format!("{name}.bias"), vec![T::zero(); *dim])?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Names of every parameter this network reads.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { name, .. } => {
                    out.push(format!("{name}.weight"));
                    out.push(format!("{name}.bias"));
                }
                LayerSpec::LayerNorm { name, .. } => {
                    out.push(format!("{name}.gain"));
                    out.push(format!("{name}.bias"));
                }
                _ => {}
            }
        }
        out
    }

    pub fn forward<T: Real>(
        &self,
        params: &ParameterStore<T>,
        input: ArrayView2<T>,
        cond: Option<ArrayView2<T>>,
    ) -> Result<(Array2<T>, Tape<T>)> {
        let rows = input.nrows();
        if input.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                input.ncols()
            )));
        }
        if self.cond_dim > 0 {
            match cond {
                Some(c) if c.ncols() == self.cond_dim && c.nrows() == rows => {}
                _ => {
                    return Err(Error::DimensionMismatch(format!(
                        "network expects a {rows} x {} conditioning input",
                        self.cond_dim
                    )))
                }
            }
        }
        let mut x = input.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { name, output, .. } => {
                    let w = &params.get(&format!("{name}.weight"))?.value;
                    let b = &params.get(&format!("{name}.bias"))?.value;
                    let mut y = Array2::zeros((rows, *output));
                    y.assign(&b.row(0));
                    general_mat_mul(T::one(), &x, w, T::one(), &mut y);
                    caches.push(Cache::Dense { input: x });
                    x = y;
                }
                LayerSpec::Mish => {
                    let y = x.mapv(mish);
                    caches.push(Cache::Mish { input: x });
                    x = y;
                }
                LayerSpec::LayerNorm { name, dim } => {
                    let gain = &params.get(&format!("{name}.gain"))?.value;
                    let bias = &params.get(&format!("{name}.bias"))?.value;
                    let n = T::of(*dim as f64);
                    let mut normalized = Array2::zeros((rows, *dim));
                    let mut inv_std = Vec::with_capacity(rows);
                    for (r, row) in x.rows().into_iter().enumerate() {
                        let mean = row.sum() / n;
                        let var = row.fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                        let is = T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt();
                        inv_std.push(is);
                        normalized
                            .row_mut(r)
                            .zip_mut_with(&row, |o, &v| *o = (v - mean) * is);
                    }
                    let mut y = normalized.clone();
                    y *= &gain.row(0);
                    y += &bias.row(0);
                    caches.push(Cache::LayerNorm {
                        normalized,
                        inv_std,
                    });
                    x = y;
                }
                LayerSpec::ConcatCond { .. } => {
                    let c = cond.expect("checked above");
                    let split = x.ncols();
                    x = ndarray::concatenate(Axis(1), &[x.view(), c]).expect("row counts match");
                    caches.push(Cache::ConcatCond { split });
                }
                LayerSpec::TimeEmbed { dim } => {
                    let keep = x.ncols() - 1;
                    let mut y = Array2::zeros((rows, keep + dim));
                    y.slice_mut(s![.., ..keep]).assign(&x.slice(s![.., ..keep]));
                    let mut buf = vec![T::zero(); *dim];
                    for r in 0..rows {
                        time_embedding(x[[r, keep]].as_f64(), *dim, &mut buf);
                        y.slice_mut(s![r, keep..])
                            .iter_mut()
                            .zip(&buf)
                            .for_each(|(o, b)| *o = *b);
                    }
                    caches.push(Cache::TimeEmbed);
                    x = y;
                }
            }
        }
        Ok((
            x,
            Tape {
                caches,
                network: self.id,
                version: params.version(),
                rows,
            },
        ))
    }

    /// Accumulates parameter gradients for `upstream = dL/d output` and
    /// returns `(dL/d input, dL/d cond)`. The step column of a time
    /// embedding receives zero gradient.
    pub fn backward<T: Real>(
        &self,
        params: &mut ParameterStore<T>,
        tape: &Tape<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(Array2<T>, Option<Array2<T>>)> {
        if tape.network != self.id || tape.caches.len() != self.layers.len() {
            return Err(Error::DimensionMismatch(
                "tape was recorded by a different network".into(),
            ));
        }
        if tape.version != params.version() {
            return Err(Error::StaleTape);
        }
        if upstream.dim() != (tape.rows, self.output_dim) {
            return Err(Error::DimensionMismatch(format!(
                "upstream gradient is {:?}, expected ({}, {})",
                upstream.dim(),
                tape.rows,
                self.output_dim
            )));
        }
        let mut g = upstream.to_owned();
        let mut cond_grad: Option<Array2<T>> = None;
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            match (layer, cache) {
                (LayerSpec::Dense { name, .. }, Cache::Dense { input }) => {
                    let wi = params.index_of(&format!("{name}.weight"))?;
                    let bi = params.index_of(&format!("{name}.bias"))?;
                    {
                        let wp = params.by_index_mut(wi);
                        general_mat_mul(T::one(), &input.t(), &g, T::one(), &mut wp.grad);
                    }
                    {
                        let bp = params.by_index_mut(bi);
                        let colsum = g.sum_axis(Axis(0));
                        bp.grad.row_mut(0).zip_mut_with(&colsum, |a, &b| *a += b);
                    }
                    let w = &params.by_index(wi).value;
                    let mut dx = Array2::zeros((tape.rows, w.nrows()));
                    general_mat_mul(T::one(), &g, &w.t(), T::zero(), &mut dx);
                    g = dx;
                }
                (LayerSpec::Mish, Cache::Mish { input }) => {
                    g.zip_mut_with(input, |gv, &x| *gv *= mish_grad(x));
                }
                (
                    LayerSpec::LayerNorm { name, dim },
                    Cache::LayerNorm {
                        normalized,
                        inv_std,
                    },
                ) => {
                    let gi = params.index_of(&format!("{name}.gain"))?;
                    let bi = params.index_of(&format!("{name}.bias"))?;
                    let gain = params.by_index(gi).value.row(0).to_owned();
                    {
                        let dgain = (&g * normalized).sum_axis(Axis(0));
                        params
                            .by_index_mut(gi)
                            .grad
                            .row_mut(0)
                            .zip_mut_with(&dgain, |a, &b| *a += b);
                        let dbias = g.sum_axis(Axis(0));
                        params
                            .by_index_mut(bi)
                            .grad
                            .row_mut(0)
                            .zip_mut_with(&dbias, |a, &b| *a += b);
                    }
                    let n = T::of(*dim as f64);
                    let mut dx = Array2::zeros((tape.rows, *dim));
                    for r in 0..tape.rows {
                        let dxhat: Vec<T> = g
                            .row(r)
                            .iter()
                            .zip(gain.iter())
                            .map(|(&a, &b)| a * b)
                            .collect();
                        let xhat = normalized.row(r);
                        let mean_d = dxhat.iter().fold(T::zero(), |a, &b| a + b) / n;
                        let mean_dx = dxhat
                            .iter()
                            .zip(xhat.iter())
                            .fold(T::zero(), |a, (&d, &x)| a + d * x)
                            / n;
                        for c in 0..*dim {
                            dx[[r, c]] = inv_std[r] * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                        }
                    }
                    g = dx;
                }
                (LayerSpec::ConcatCond { .. }, Cache::ConcatCond { split }) => {
                    let dc = g.slice(s![.., *split..]).to_owned();
                    match &mut cond_grad {
                        Some(acc) => *acc += &dc,
                        None => cond_grad = Some(dc),
                    }
                    g = g.slice(s![.., ..*split]).to_owned();
                }
                (LayerSpec::TimeEmbed { dim }, Cache::TimeEmbed) => {
                    let keep = g.ncols() - dim;
                    let mut dx = Array2::zeros((tape.rows, keep + 1));
                    dx.slice_mut(s![.., ..keep])
                        .assign(&g.slice(s![.., ..keep]));
                    g = dx;
                }
                _ => unreachable!("tape layout checked against network id"),
            }
        }
        Ok((g, cond_grad))
    }
}

//! ResolvNet layers and networks, node-weighted readout, hand-written
//! reverse-mode gradients, and the training loop.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{WeightedGraph, WeightedNormContext};
use crate::spectral::{lambda_max, ResolventFactorization};

/// A linear propagation operator on node signals together with the node
/// weights of the graph it lives on.
pub trait Propagator {
    fn dim(&self) -> usize;
    fn mu(&self) -> &DVector<f64>;
    /// The resolvent parameter, if the operator is a resolvent.
    fn z(&self) -> Option<f64>;
    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Euclidean transpose, used to pull gradients back through the operator.
    fn apply_transpose(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl Propagator for ResolventFactorization {
    fn dim(&self) -> usize {
        ResolventFactorization::dim(self)
    }

    fn mu(&self) -> &DVector<f64> {
        self.context().mu()
    }

    fn z(&self) -> Option<f64> {
        Some(ResolventFactorization::z(self))
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ResolventFactorization::apply(self, x)
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ResolventFactorization::apply_transpose(self, x)
    }
}

/// Row-compressed shift operator, for baselines that propagate with a
/// sparse matrix instead of a resolvent.
#[derive(Clone, Debug)]
pub struct SparseShift {
    rows: Vec<Vec<(usize, f64)>>,
    mu: DVector<f64>,
}

impl SparseShift {
    pub fn from_dense(a: &DMatrix<f64>, mu: DVector<f64>) -> Result<Self> {
        if a.nrows() != mu.len() || a.ncols() != mu.len() {
            return Err(Error::Dimension {
                expected: mu.len(),
                got: a.nrows(),
            });
        }
        let rows = a
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Ok(Self { rows, mu })
    }

    fn check(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.rows.len() {
            return Err(Error::Dimension {
                expected: self.rows.len(),
                got: x.nrows(),
            });
        }
        Ok(())
    }
}

impl Propagator for SparseShift {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    fn z(&self) -> Option<f64> {
        None
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut y = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            let xc = x.column(c);
            for (i, row) in self.rows.iter().enumerate() {
                y[(i, c)] = row.iter().map(|&(j, v)| v * xc[j]).sum();
            }
        }
        Ok(y)
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut y = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            for (i, row) in self.rows.iter().enumerate() {
                let xi = x[(i, c)];
                for &(j, v) in row {
                    y[(j, c)] += v * xi;
                }
            }
        }
        Ok(y)
    }
}

/// X ↦ ReLU(Σ_{k=a}^{K} R^k X W_k + 𝟙βᵀ).
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvNetLayer {
    pub a: usize,
    pub k_max: usize,
    pub z: f64,
    /// W_a, …, W_K.
    pub weights: Vec<DMatrix<f64>>,
    pub beta: DVector<f64>,
}

impl ResolvNetLayer {
    pub fn validate(&self) -> Result<()> {
        if !(self.z < 0.0) {
            return Err(Error::NonNegativeZ(self.z));
        }
        if self.a > 1 || self.k_max < self.a {
            return Err(Error::InvalidModel(format!(
                "invalid filter range a = {}, K = {}",
                self.a, self.k_max
            )));
        }
        if self.weights.len() != self.k_max - self.a + 1 {
            return Err(Error::InvalidModel(format!(
                "expected {} weight matrices, got {}",
                self.k_max - self.a + 1,
                self.weights.len()
            )));
        }
        let (fi, fo) = self.weights[0].shape();
        if self.weights.iter().any(|w| w.shape() != (fi, fo)) {
            return Err(Error::InvalidModel("weight matrices differ in shape".into()));
        }
        if self.beta.len() != fo {
            return Err(Error::InvalidModel(format!(
                "bias has length {}, expected {fo}",
                self.beta.len()
            )));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn weight(&self, k: usize) -> &DMatrix<f64> {
        &self.weights[k - self.a]
    }

    /// R^k X for k = a..K.
    pub fn powers(&self, p: &dyn Propagator, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if let Some(z) = p.z() {
            if z != self.z {
                return Err(Error::ZMismatch {
                    spec: self.z,
                    factorization: z,
                });
            }
        }
        if x.ncols() != self.in_dim() {
            return Err(Error::Dimension {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        let mut out = Vec::with_capacity(self.weights.len());
        let mut cur = if self.a == 0 { x.clone() } else { p.apply(x)? };
        out.push(cur.clone());
        for _ in (self.a + 1)..=self.k_max {
            cur = p.apply(&cur)?;
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn pre_activation(&self, powers: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = powers[0].nrows();
        let mut z = DMatrix::zeros(n, self.out_dim());
        for (p, w) in powers.iter().zip(&self.weights) {
            z += p * w;
        }
        for mut row in z.row_iter_mut() {
            row += self.beta.transpose();
        }
        z
    }
}

pub fn relu(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.map(|v| v.max(0.0))
}

pub fn layer_forward(layer: &ResolvNetLayer, p: &dyn Propagator, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    layer.validate()?;
    Ok(relu(&layer.pre_activation(&layer.powers(p, x)?)))
}

/// Ψ(X)_j = Σ_i |X_ij| μ_i.
pub fn aggregate(x: &DMatrix<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != mu.len() {
        return Err(Error::Dimension {
            expected: mu.len(),
            got: x.nrows(),
        });
    }
    Ok(DVector::from_fn(x.ncols(), |j, _| {
        (0..x.nrows()).map(|i| x[(i, j)].abs() * mu[i]).sum()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }
}

/// Optional hidden ReLU layer followed by a linear output map.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub hidden: Option<Linear>,
    pub out: Linear,
}

impl Head {
    pub fn in_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weight.nrows(),
            None => self.out.weight.nrows(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out.weight.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NodeClassification,
    GraphRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvNetModel {
    pub layers: Vec<ResolvNetLayer>,
    pub head: Head,
    pub mode: Mode,
    /// Laplacian rescale as a fraction of ‖Δ‖; `None` keeps Δ as is.
    pub c_nf: Option<f64>,
}

/// Shape of a freshly initialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    /// Output width of each resolvent layer.
    pub layer_dims: Vec<usize>,
    pub a: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub z: f64,
    pub mode: Mode,
    #[serde(default)]
    pub head_hidden: Option<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub c_nf: Option<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let s = 1.0 / (rows.max(1) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
}

impl ResolvNetModel {
    pub fn new(layers: Vec<ResolvNetLayer>, head: Head, mode: Mode, c_nf: Option<f64>) -> Result<Self> {
        let m = Self {
            layers,
            head,
            mode,
            c_nf,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut fin = spec.input_dim;
        for &fo in &spec.layer_dims {
            let weights = (spec.a..=spec.k_max)
                .map(|_| uniform_matrix(&mut rng, fin, fo))
                .collect();
            layers.push(ResolvNetLayer {
                a: spec.a,
                k_max: spec.k_max,
                z: spec.z,
                weights,
                beta: DVector::zeros(fo),
            });
            fin = fo;
        }
        let hidden = spec.head_hidden.map(|h| {
            let l = Linear {
                weight: uniform_matrix(&mut rng, fin, h),
                bias: DVector::zeros(h),
            };
            fin = h;
            l
        });
        let out = Linear {
            weight: uniform_matrix(&mut rng, fin, spec.output_dim),
            bias: DVector::zeros(spec.output_dim),
        };
        Self::new(layers, Head { hidden, out }, spec.mode, spec.c_nf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("at least one layer is required".into()));
        }
        for l in &self.layers {
            l.validate()?;
        }
        let first = &self.layers[0];
        for w in self.layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::InvalidModel(format!(
                    "layer widths do not chain: {} then {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        if self.layers.iter().any(|l| l.z != first.z || l.a != first.a) {
            return Err(Error::InvalidModel("layers must share z and filter type".into()));
        }
        let last = self.layers.last().unwrap().out_dim();
        if self.head.in_dim() != last {
            return Err(Error::InvalidModel(format!(
                "head expects width {}, last layer has {last}",
                self.head.in_dim()
            )));
        }
        if let Some(h) = &self.head.hidden {
            if h.weight.ncols() != self.head.out.weight.nrows() || h.bias.len() != h.weight.ncols() {
                return Err(Error::InvalidModel("head hidden layer does not chain".into()));
            }
        }
        if self.head.out.bias.len() != self.head.out_dim() {
            return Err(Error::InvalidModel("head bias has the wrong length".into()));
        }
        if let Some(c) = self.c_nf {
            if !(c > 0.0) {
                return Err(Error::InvalidModel(format!("c_nf must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn z(&self) -> f64 {
        self.layers[0].z
    }

    pub fn a(&self) -> usize {
        self.layers[0].a
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Δ, divided by c_nf·‖Δ‖ when a rescale is configured.
    pub fn operator(&self, g: &WeightedGraph) -> Result<DMatrix<f64>> {
        let lap = g.laplacian();
        match self.c_nf {
            None => Ok(lap),
            Some(c) => {
                let norm = lambda_max(&lap, &g.norm_context())?;
                if norm > 0.0 {
                    Ok(lap / (c * norm))
                } else {
                    Ok(lap)
                }
            }
        }
    }

    pub fn factorize(&self, g: &WeightedGraph) -> Result<ResolventFactorization> {
        ResolventFactorization::new(&self.operator(g)?, &g.norm_context(), self.z())
    }

    /// Factorizes the graph operator and caches the first layer's propagated input.
    pub fn prepare(&self, g: &WeightedGraph, x: &DMatrix<f64>) -> Result<Prepared> {
        Prepared::new(Box::new(self.factorize(g)?), x.clone(), &self.layers[0])
    }

    pub fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Every parameter block in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            for w in &l.weights {
                out.push(w.as_slice());
            }
            out.push(l.beta.as_slice());
        }
        if let Some(h) = &self.head.hidden {
            out.push(h.weight.as_slice());
            out.push(h.bias.as_slice());
        }
        out.push(self.head.out.weight.as_slice());
        out.push(self.head.out.bias.as_slice());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            for w in &mut l.weights {
                out.push(w.as_mut_slice());
            }
            out.push(l.beta.as_mut_slice());
        }
        if let Some(h) = &mut self.head.hidden {
            out.push(h.weight.as_mut_slice());
            out.push(h.bias.as_mut_slice());
        }
        out.push(self.head.out.weight.as_mut_slice());
        out.push(self.head.out.bias.as_mut_slice());
        out
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for s in g.param_slices_mut() {
            s.fill(0.0);
        }
        g
    }

    fn check_input(&self, prep: &Prepared) -> Result<()> {
        if prep.x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: prep.x.ncols(),
            });
        }
        let first = &self.layers[0];
        if prep.first_range != (first.a, first.k_max) {
            return Err(Error::InvalidModel(
                "prepared input was built for a different filter range".into(),
            ));
        }
        Ok(())
    }

    /// Node features X^L after the last resolvent layer.
    pub fn features(&self, prep: &Prepared) -> Result<DMatrix<f64>> {
        Ok(self.run(prep, None)?.features)
    }

    /// Head output: n×C logits in node mode, 1×T prediction in graph mode.
    pub fn forward(&self, prep: &Prepared) -> Result<DMatrix<f64>> {
        Ok(self.run(prep, None)?.output)
    }

    /// Forward pass that keeps what backward needs. Dropout, when given,
    /// is applied to hidden representations only.
    pub fn forward_train(&self, prep: &Prepared, dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<ForwardPass> {
        self.run(prep, dropout)
    }

    fn run(&self, prep: &Prepared, mut dropout: Option<(f64, &mut ChaCha8Rng)>) -> Result<ForwardPass> {
        self.check_input(prep)?;
        let p = prep.prop.as_ref();
        let mut powers = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len() + 1);
        let mut h = DMatrix::zeros(0, 0);
        for (li, layer) in self.layers.iter().enumerate() {
            let pw = if li == 0 {
                masks.push(None);
                prep.first_powers.clone()
            } else {
                let mask = dropout.as_mut().map(|(q, rng)| dropout_mask(&h, *q, rng));
                if let Some(m) = &mask {
                    h.component_mul_assign(m);
                }
                masks.push(mask);
                layer.powers(p, &h)?
            };
            let z = layer.pre_activation(&pw);
            h = relu(&z);
            powers.push(pw);
            pre.push(z);
        }
        let features = h.clone();
        let head_mask = dropout.as_mut().map(|(q, rng)| dropout_mask(&h, *q, rng));
        if let Some(m) = &head_mask {
            h.component_mul_assign(m);
        }
        masks.push(head_mask);
        let dropped = h;
        let head_in = match self.mode {
            Mode::NodeClassification => dropped.clone(),
            Mode::GraphRegression => {
                let psi = aggregate(&dropped, p.mu())?;
                DMatrix::from_row_slice(1, psi.len(), psi.as_slice())
            }
        };
        let (hidden_pre, hidden_out) = match &self.head.hidden {
            Some(l) => {
                let z = l.forward(&head_in);
                let o = relu(&z);
                (Some(z), Some(o))
            }
            None => (None, None),
        };
        let output = self.head.out.forward(hidden_out.as_ref().unwrap_or(&head_in));
        Ok(ForwardPass {
            powers,
            pre,
            masks,
            features,
            dropped,
            head_in,
            hidden_pre,
            hidden_out,
            output,
        })
    }

    /// Gradients of a scalar loss given ∂loss/∂output.
    pub fn backward(&self, prep: &Prepared, pass: &ForwardPass, d_out: &DMatrix<f64>) -> Result<ResolvNetModel> {
        if pass.pre.len() != self.layers.len() || pass.masks.len() != self.layers.len() + 1 {
            return Err(Error::MissingCache);
        }
        if d_out.shape() != pass.output.shape() {
            return Err(Error::Dimension {
                expected: pass.output.nrows(),
                got: d_out.nrows(),
            });
        }
        let p = prep.prop.as_ref();
        let mut grads = self.zeros_like();

        let out_in = pass.hidden_out.as_ref().unwrap_or(&pass.head_in);
        grads.head.out.weight = out_in.transpose() * d_out;
        grads.head.out.bias = column_sums(d_out);
        let mut d = d_out * self.head.out.weight.transpose();
        if let (Some(l), Some(z)) = (&self.head.hidden, &pass.hidden_pre) {
            let g = relu_gate(&d, z);
            let gh = grads.head.hidden.as_mut().unwrap();
            gh.weight = pass.head_in.transpose() * &g;
            gh.bias = column_sums(&g);
            d = g * l.weight.transpose();
        }
        let mut d_h = match self.mode {
            Mode::NodeClassification => d,
            Mode::GraphRegression => {
                let mu = p.mu();
                DMatrix::from_fn(pass.dropped.nrows(), pass.dropped.ncols(), |i, j| {
                    d[(0, j)] * sign(pass.dropped[(i, j)]) * mu[i]
                })
            }
        };
        if let Some(m) = &pass.masks[self.layers.len()] {
            d_h.component_mul_assign(m);
        }

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = relu_gate(&d_h, &pass.pre[li]);
            let gl = &mut grads.layers[li];
            for (k, pk) in pass.powers[li].iter().enumerate() {
                gl.weights[k] = pk.transpose() * &g;
            }
            gl.beta = column_sums(&g);
            if li == 0 {
                break;
            }
            // Σ_k (Rᵀ)^k G W_kᵀ by Horner in Rᵀ.
            let kk = layer.k_max;
            let mut y = &g * layer.weight(kk).transpose();
            for k in (layer.a..kk).rev() {
                y = p.apply_transpose(&y)? + &g * layer.weight(k).transpose();
            }
            if layer.a == 1 {
                y = p.apply_transpose(&y)?;
            }
            if let Some(m) = &pass.masks[li] {
                y.component_mul_assign(m);
            }
            d_h = y;
        }
        Ok(grads)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn relu_gate(d: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    d.zip_map(z, |g, v| if v > 0.0 { g } else { 0.0 })
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum())
}

/// Inverted dropout: kept entries are scaled by 1/(1 − q).
fn dropout_mask(like: &DMatrix<f64>, q: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let keep = 1.0 / (1.0 - q);
    DMatrix::from_fn(like.nrows(), like.ncols(), |_, _| {
        if rng.random::<f64>() < q {
            0.0
        } else {
            keep
        }
    })
}

/// A graph operator plus input features, with the first layer's
/// propagated inputs R^k X cached.
pub struct Prepared {
    prop: Box<dyn Propagator>,
    x: DMatrix<f64>,
    first_powers: Vec<DMatrix<f64>>,
    first_range: (usize, usize),
}

impl Prepared {
    pub fn new(prop: Box<dyn Propagator>, x: DMatrix<f64>, first: &ResolvNetLayer) -> Result<Self> {
        if x.nrows() != prop.dim() {
            return Err(Error::Dimension {
                expected: prop.dim(),
                got: x.nrows(),
            });
        }
        let first_powers = first.powers(prop.as_ref(), &x)?;
        Ok(Self {
            prop,
            x,
            first_powers,
            first_range: (first.a, first.k_max),
        })
    }

    pub fn propagator(&self) -> &dyn Propagator {
        self.prop.as_ref()
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    powers: Vec<Vec<DMatrix<f64>>>,
    pre: Vec<DMatrix<f64>>,
    masks: Vec<Option<DMatrix<f64>>>,
    pub features: DMatrix<f64>,
    dropped: DMatrix<f64>,
    head_in: DMatrix<f64>,
    hidden_pre: Option<DMatrix<f64>>,
    hidden_out: Option<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

/// Mean softmax cross-entropy over `idx` and its gradient in the logits.
pub fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize], idx: &[usize]) -> (f64, DMatrix<f64>) {
    let mut grad = DMatrix::zeros(logits.nrows(), logits.ncols());
    if idx.is_empty() {
        return (0.0, grad);
    }
    let inv = 1.0 / idx.len() as f64;
    let mut loss = 0.0;
    for &i in idx {
        let row = logits.row(i);
        let m = row.max();
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        loss -= (exps[labels[i]] / s).ln();
        for (c, e) in exps.iter().enumerate() {
            grad[(i, c)] = inv * (e / s - if c == labels[i] { 1.0 } else { 0.0 });
        }
    }
    (loss * inv, grad)
}

pub fn predict_classes(logits: &DMatrix<f64>) -> Vec<usize> {
    logits.row_iter().map(|r| r.transpose().argmax().0).collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / idx.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub dropout_p: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 1000,
            patience: 100,
            weight_decay: 1e-4,
            dropout_p: 0.5,
            seed: 0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout_p)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle into train/val/test fractions, remainder to test.
    pub fn random(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let nt = (train_frac * n as f64).round() as usize;
        let nv = (val_frac * n as f64).round() as usize;
        let mut s = Self {
            train: idx[..nt].to_vec(),
            val: idx[nt..nt + nv].to_vec(),
            test: idx[nt + nv..].to_vec(),
        };
        s.train.sort_unstable();
        s.val.sort_unstable();
        s.test.sort_unstable();
        s
    }
}

pub enum Dataset<'a> {
    Nodes {
        graph: &'a Prepared,
        labels: &'a [usize],
        split: &'a Split,
    },
    Graphs {
        train: &'a [(Prepared, f64)],
        val: &'a [(Prepared, f64)],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_metric\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_metric));
        }
        s
    }
}

/// Mean absolute error of graph-level predictions.
pub fn graph_mae(model: &ResolvNetModel, graphs: &[(Prepared, f64)]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::EmptySplit("graphs"));
    }
    let mut acc = 0.0;
    for (p, y) in graphs {
        acc += (model.forward(p)?[(0, 0)] - y).abs();
    }
    Ok(acc / graphs.len() as f64)
}

struct OptState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptState {
    fn new(model: &ResolvNetModel) -> Self {
        let shapes: Vec<Vec<f64>> = model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Self {
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    fn update(&mut self, model: &mut ResolvNetModel, grads: &ResolvNetModel, cfg: &TrainConfig) {
        self.step += 1;
        let lr = cfg.learning_rate;
        let wd = cfg.weight_decay;
        let gs = grads.param_slices();
        for (bi, ps) in model.param_slices_mut().into_iter().enumerate() {
            let g = gs[bi];
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, &gi) in ps.iter_mut().zip(g) {
                        *p -= lr * (gi + wd * *p);
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    for (j, (p, &gi)) in ps.iter_mut().zip(g).enumerate() {
                        let gt = gi + wd * *p;
                        let m = &mut self.m[bi][j];
                        let v = &mut self.v[bi][j];
                        *m = beta1 * *m + (1.0 - beta1) * gt;
                        *v = beta2 * *v + (1.0 - beta2) * gt * gt;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Full-batch training with early stopping. Returns with `model` set to the
/// best-validation parameters.
pub fn train(model: &mut ResolvNetModel, data: &Dataset, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    model.validate()?;
    match data {
        Dataset::Nodes { split, labels, graph } => {
            if model.mode != Mode::NodeClassification {
                return Err(Error::InvalidModel("node dataset needs a node-classification model".into()));
            }
            if split.train.is_empty() {
                return Err(Error::EmptySplit("train"));
            }
            if split.val.is_empty() {
                return Err(Error::EmptySplit("val"));
            }
            if labels.len() != graph.n() {
                return Err(Error::Dimension {
                    expected: graph.n(),
                    got: labels.len(),
                });
            }
            let classes = model.head.out_dim();
            if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
                return Err(Error::InvalidModel(format!("label {bad} exceeds {classes} classes")));
            }
        }
        Dataset::Graphs { train, val } => {
            if model.mode != Mode::GraphRegression {
                return Err(Error::InvalidModel("graph dataset needs a graph-regression model".into()));
            }
            if train.is_empty() {
                return Err(Error::EmptySplit("train"));
            }
            if val.is_empty() {
                return Err(Error::EmptySplit("val"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(model);
    let mut history = History::default();
    let mut best = model.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut bad_epochs = 0;
    let q = cfg.dropout_p;

    for epoch in 0..cfg.max_epochs {
        let (loss, grads) = match data {
            Dataset::Nodes { graph, labels, split } => {
                let drop = (q > 0.0).then_some((q, &mut rng));
                let pass = model.forward_train(graph, drop)?;
                let (loss, d) = cross_entropy(&pass.output, labels, &split.train);
                (loss, model.backward(graph, &pass, &d)?)
            }
            Dataset::Graphs { train, .. } => {
                let mut total = model.zeros_like();
                let mut loss = 0.0;
                let inv = 1.0 / train.len() as f64;
                for (p, y) in train.iter() {
                    let drop = (q > 0.0).then_some((q, &mut rng));
                    let pass = model.forward_train(p, drop)?;
                    let r = pass.output[(0, 0)] - y;
                    loss += r.abs() * inv;
                    let d = DMatrix::from_element(1, 1, sign(r) * inv);
                    let g = model.backward(p, &pass, &d)?;
                    for (t, s) in total.param_slices_mut().into_iter().zip(g.param_slices()) {
                        for (a, b) in t.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                }
                (loss, total)
            }
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        opt.update(model, &grads, cfg);

        // Higher key is better: (accuracy, −loss) or (−MAE, 0).
        let (val_metric, key) = match data {
            Dataset::Nodes { graph, labels, split } => {
                let out = model.forward(graph)?;
                let acc = accuracy(&predict_classes(&out), labels, &split.val);
                let (vl, _) = cross_entropy(&out, labels, &split.val);
                (acc, (acc, vl))
            }
            Dataset::Graphs { val, .. } => {
                let mae = graph_mae(model, val)?;
                (mae, (-mae, 0.0))
            }
        };
        if !val_metric.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_metric,
        });
        if key.0 > best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best_key = key;
            best = model.clone();
            history.best_epoch = epoch;
            history.best_val_metric = val_metric;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
    }
    *model = best;
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerDoc {
    a: usize,
    #[serde(rename = "K")]
    k_max: usize,
    z: f64,
    #[serde(rename = "W_k")]
    w_k: Vec<Vec<Vec<f64>>>,
    beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointDoc {
    layers: Vec<LayerDoc>,
    head: Vec<Vec<f64>>,
    head_bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_hidden: Option<Dense>,
    mode: Mode,
    c_nf: Option<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::InvalidModel("ragged matrix in checkpoint".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ResolvNetModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = CheckpointDoc {
            layers: self
                .layers
                .iter()
                .map(|l| LayerDoc {
                    a: l.a,
                    k_max: l.k_max,
                    z: l.z,
                    w_k: l.weights.iter().map(rows_of).collect(),
                    beta: l.beta.iter().copied().collect(),
                })
                .collect(),
            head: rows_of(&self.head.out.weight),
            head_bias: self.head.out.bias.iter().copied().collect(),
            head_hidden: self.head.hidden.as_ref().map(|h| Dense {
                weight: rows_of(&h.weight),
                bias: h.bias.iter().copied().collect(),
            }),
            mode: self.mode,
            c_nf: self.c_nf,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                Ok(ResolvNetLayer {
                    a: l.a,
                    k_max: l.k_max,
                    z: l.z,
                    weights: l.w_k.iter().map(|w| matrix_of(w)).collect::<Result<_>>()?,
                    beta: DVector::from_vec(l.beta.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = doc
            .head_hidden
            .map(|h| {
                Ok::<_, Error>(Linear {
                    weight: matrix_of(&h.weight)?,
                    bias: DVector::from_vec(h.bias),
                })
            })
            .transpose()?;
        let head = Head {
            hidden,
            out: Linear {
                weight: matrix_of(&doc.head)?,
                bias: DVector::from_vec(doc.head_bias),
            },
        };
        Self::new(layers, head, doc.mode, doc.c_nf)
    }
}

/// Node-weight context of a prepared graph.
pub fn prepared_context(p: &Prepared) -> WeightedNormContext {
    WeightedNormContext::new(p.propagator().mu().clone())
}

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, NodeState};
use crate::masker::{merge, MaskedSample};
use crate::rng::SplitMix64;
use crate::scenario::Sample;

use super::loss::{pf_loss_grad, sce_loss_grad, LossBreakdown};
use super::tensor::{add_bias, col_sum_acc, matmul, matmul_nt, matmul_tn_acc};
use super::NnError;

/// Node input width: four (masked) features plus a bus-type one-hot.
const NODE_IN: usize = 7;
const EDGE_IN: usize = 2;
const OUT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    /// Derivative from the pre-activation value.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    fn map(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

fn default_gamma() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda_pf: f64,
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            n_encoder_layers: 4,
            n_decoder_layers: 1,
            gamma: 2.0,
            lambda_pf: 1.0,
            activation: Activation::Tanh,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.hidden_dim < 4 {
            return bad(format!("hidden_dim must be >= 4, got {}", self.hidden_dim));
        }
        if self.n_encoder_layers < 1 {
            return bad("n_encoder_layers must be >= 1".into());
        }
        if !(self.gamma >= 1.0) {
            return bad(format!("gamma must be >= 1, got {}", self.gamma));
        }
        if !(self.lambda_pf >= 0.0) {
            return bad(format!("lambda_pf must be >= 0, got {}", self.lambda_pf));
        }
        Ok(())
    }

    fn n_layers(&self) -> usize {
        self.n_encoder_layers + self.n_decoder_layers
    }

    /// Names and shapes of every parameter tensor in declared order.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let h = self.hidden_dim;
        let mut out = vec![
            ("input.weight".to_string(), NODE_IN, h),
            ("input.bias".to_string(), 1, h),
            ("mask_token".to_string(), 4, h),
            ("edge.weight".to_string(), EDGE_IN, h),
            ("edge.bias".to_string(), 1, h),
        ];
        for l in 0..self.n_layers() {
            let prefix = if l < self.n_encoder_layers {
                format!("encoder.{l}")
            } else {
                format!("decoder.{}", l - self.n_encoder_layers)
            };
            out.push((format!("{prefix}.message.weight"), h, h));
            out.push((format!("{prefix}.message.bias"), 1, h));
            out.push((format!("{prefix}.update.weight"), 2 * h, h));
            out.push((format!("{prefix}.update.bias"), 1, h));
        }
        out.push(("output.weight".to_string(), h, OUT));
        out.push(("output.bias".to_string(), 1, OUT));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Parameter (or gradient) tensors in the order given by [`ModelConfig::layout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

pub type Gradients = Params;

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            tensors: cfg.layout().iter().map(|(n, r, c)| Tensor::zeros(n, *r, *c)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, t.rows, t.cols))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols)
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Per-feature standardisation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub node_mean: [f64; 4],
    pub node_std: [f64; 4],
    pub edge_mean: [f64; 2],
    pub edge_std: [f64; 2],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            node_mean: [0.0; 4],
            node_std: [1.0; 4],
            edge_mean: [0.0; 2],
            edge_std: [1.0; 2],
        }
    }

    /// Pooled mean and standard deviation over every bus (and branch) of the
    /// samples. Constant features get unit scale.
    pub fn from_samples(samples: &[Sample]) -> Self {
        fn finish<const K: usize>(sum: [f64; K], sq: [f64; K], n: f64) -> ([f64; K], [f64; K]) {
            if n == 0.0 {
                return ([0.0; K], [1.0; K]);
            }
            let mean: [f64; K] = std::array::from_fn(|f| sum[f] / n);
            let std = std::array::from_fn(|f| {
                let s = (sq[f] / n - mean[f] * mean[f]).max(0.0).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            });
            (mean, std)
        }
        let (mut ns, mut nq, mut nn) = ([0.0; 4], [0.0; 4], 0.0);
        let (mut es, mut eq, mut en) = ([0.0; 2], [0.0; 2], 0.0);
        for s in samples {
            for st in &s.state {
                for (f, v) in st.to_array().into_iter().enumerate() {
                    ns[f] += v;
                    nq[f] += v * v;
                }
                nn += 1.0;
            }
            for (r, x) in s.r.iter().zip(&s.x_react) {
                for (f, v) in [*r, *x].into_iter().enumerate() {
                    es[f] += v;
                    eq[f] += v * v;
                }
                en += 1.0;
            }
        }
        let (node_mean, node_std) = finish(ns, nq, nn);
        let (edge_mean, edge_std) = finish(es, eq, en);
        Self {
            node_mean,
            node_std,
            edge_mean,
            edge_std,
        }
    }

    pub fn standardize(&self, x: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|f| (x[f] - self.node_mean[f]) / self.node_std[f])
    }

    pub fn destandardize(&self, x: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|f| x[f] * self.node_std[f] + self.node_mean[f])
    }
}

/// Masked graph autoencoder.
///
/// Encoder input for bus `i` is `[x_i * (1 - m_i), onehot(type_i)] W_in + b_in
/// + m_i T`, where `T` holds one learnable token row per feature. Each layer
/// sends `act(W_msg h_u + b_msg) * e_k` along both directions of branch `k`
/// (`e_k` is the embedded, standardised `(r, x)`), sums at the receiver and
/// applies `h <- h + act([h, agg] W_upd + b_upd)`. Between encoder and
/// decoder the token is added again at masked positions. A linear head maps
/// to standardised `(p, q, v, delta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub params: Params,
}

struct LayerCache {
    h_in: Vec<f64>,
    msg_pre: Vec<f64>,
    msg: Vec<f64>,
    cat: Vec<f64>,
    upd_pre: Vec<f64>,
}

struct ForwardCache {
    node_in: Vec<f64>,
    mask_f: Vec<f64>,
    edge_in: Vec<f64>,
    edge_pre: Vec<f64>,
    edge: Vec<f64>,
    layers: Vec<LayerCache>,
    head_in: Vec<f64>,
    /// Standardised output, `n x 4`.
    out: Vec<f64>,
}

/// Parameter indices within [`Params::tensors`].
const W_IN: usize = 0;
const B_IN: usize = 1;
const TOKEN: usize = 2;
const W_EDGE: usize = 3;
const B_EDGE: usize = 4;
const LAYER0: usize = 5;

impl Model {
    pub fn new(config: ModelConfig, norm: NormStats) -> Result<Self, NnError> {
        config.validate()?;
        let mut params = Params::zeros(&config);
        for (k, t) in params.tensors.iter_mut().enumerate() {
            if t.name.ends_with(".bias") {
                continue;
            }
            let mut rng = SplitMix64::from_stream(config.init_seed, &[k as u64]);
            let bound = if t.name == "mask_token" {
                0.1
            } else {
                (6.0 / (t.rows + t.cols) as f64).sqrt()
            };
            t.data.iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        }
        Ok(Self { config, norm, params })
    }

    pub fn from_parts(config: ModelConfig, norm: NormStats, params: Params) -> Result<Self, NnError> {
        config.validate()?;
        if !params.same_shape(&Params::zeros(&config)) {
            return Err(NnError::ShapeMismatch("parameters do not match config layout".into()));
        }
        if !params.all_finite() {
            return Err(NnError::NonFinite("parameters".into()));
        }
        Ok(Self { config, norm, params })
    }

    fn t(&self, k: usize) -> &[f64] {
        &self.params.tensors[k].data
    }

    fn layer_idx(l: usize) -> [usize; 4] {
        let base = LAYER0 + 4 * l;
        [base, base + 1, base + 2, base + 3]
    }

    fn head_idx(&self) -> (usize, usize) {
        let base = LAYER0 + 4 * self.config.n_layers();
        (base, base + 1)
    }

    fn check(&self, input: &MaskedSample<'_>) -> Result<(), NnError> {
        let s = input.sample;
        let n = s.n_buses();
        if input.mask.n_buses() != n || s.bus_types.len() != n {
            return Err(NnError::ShapeMismatch(format!(
                "sample has {n} buses, mask {}, bus types {}",
                input.mask.n_buses(),
                s.bus_types.len()
            )));
        }
        if s.r.len() != s.edges.len() || s.x_react.len() != s.edges.len() {
            return Err(NnError::ShapeMismatch("edge arrays differ in length".into()));
        }
        if s.edges.iter().any(|&(a, b)| a >= n || b >= n) {
            return Err(NnError::ShapeMismatch("edge endpoint out of range".into()));
        }
        Ok(())
    }

    fn run(&self, input: &MaskedSample<'_>) -> ForwardCache {
        let s = input.sample;
        let n = s.n_buses();
        let h = self.config.hidden_dim;
        let act = self.config.activation;

        let mut node_in = Vec::with_capacity(n * NODE_IN);
        let mut mask_f = Vec::with_capacity(n * 4);
        for ((st, bits), ty) in s.state.iter().zip(&input.mask.bits).zip(&s.bus_types) {
            let xs = self.norm.standardize(st.to_array());
            for f in 0..4 {
                node_in.push(if bits[f] { 0.0 } else { xs[f] });
                mask_f.push(if bits[f] { 1.0 } else { 0.0 });
            }
            node_in.extend(ty.one_hot());
        }
        let mut h0 = matmul(&node_in, self.t(W_IN), n, NODE_IN, h);
        add_bias(&mut h0, self.t(B_IN));
        let tok = matmul(&mask_f, self.t(TOKEN), n, 4, h);
        h0.iter_mut().zip(&tok).for_each(|(a, b)| *a += b);

        let e_count = s.edges.len();
        let mut edge_in = Vec::with_capacity(e_count * EDGE_IN);
        for (r, x) in s.r.iter().zip(&s.x_react) {
            edge_in.push((r - self.norm.edge_mean[0]) / self.norm.edge_std[0]);
            edge_in.push((x - self.norm.edge_mean[1]) / self.norm.edge_std[1]);
        }
        let mut edge_pre = matmul(&edge_in, self.t(W_EDGE), e_count, EDGE_IN, h);
        add_bias(&mut edge_pre, self.t(B_EDGE));
        let edge = act.map(&edge_pre);

        let mut layers = Vec::with_capacity(self.config.n_layers());
        let mut cur = h0;
        for l in 0..self.config.n_layers() {
            if l == self.config.n_encoder_layers {
                // Re-mask before decoding.
                cur.iter_mut().zip(&tok).for_each(|(a, b)| *a += b);
            }
            let [wm, bm, wu, bu] = Self::layer_idx(l);
            let mut msg_pre = matmul(&cur, self.t(wm), n, h, h);
            add_bias(&mut msg_pre, self.t(bm));
            let msg = act.map(&msg_pre);
            let mut agg = vec![0.0; n * h];
            for (k, &(a, b)) in s.edges.iter().enumerate() {
                let ek = &edge[k * h..(k + 1) * h];
                for c in 0..h {
                    agg[b * h + c] += msg[a * h + c] * ek[c];
                }
                for c in 0..h {
                    agg[a * h + c] += msg[b * h + c] * ek[c];
                }
            }
            let mut cat = Vec::with_capacity(n * 2 * h);
            for i in 0..n {
                cat.extend_from_slice(&cur[i * h..(i + 1) * h]);
                cat.extend_from_slice(&agg[i * h..(i + 1) * h]);
            }
            let mut upd_pre = matmul(&cat, self.t(wu), n, 2 * h, h);
            add_bias(&mut upd_pre, self.t(bu));
            let next: Vec<f64> = cur.iter().zip(&upd_pre).map(|(x, u)| x + act.apply(*u)).collect();
            layers.push(LayerCache {
                h_in: cur,
                msg_pre,
                msg,
                cat,
                upd_pre,
            });
            cur = next;
        }
        if self.config.n_decoder_layers == 0 {
            cur.iter_mut().zip(&tok).for_each(|(a, b)| *a += b);
        }
        let (wo, bo) = self.head_idx();
        let mut out = matmul(&cur, self.t(wo), n, h, OUT);
        add_bias(&mut out, self.t(bo));
        ForwardCache {
            node_in,
            mask_f,
            edge_in,
            edge_pre,
            edge,
            layers,
            head_in: cur,
            out,
        }
    }

    fn physical(&self, out: &[f64]) -> Vec<[f64; 4]> {
        out.chunks_exact(4)
            .map(|r| self.norm.destandardize([r[0], r[1], r[2], r[3]]))
            .collect()
    }

    /// Reconstruction of all four features at every bus, in physical units.
    pub fn forward(&self, input: &MaskedSample<'_>) -> Result<Vec<[f64; 4]>, NnError> {
        self.check(input)?;
        Ok(self.physical(&self.run(input).out))
    }

    /// Loss of one sample and the gradient of `sce + lambda * pf` w.r.t. the
    /// standardised output rows.
    fn sample_loss(
        &self,
        input: &MaskedSample<'_>,
        out: &[f64],
        grid: &Grid,
    ) -> Result<(LossBreakdown, Vec<f64>), NnError> {
        let s = input.sample;
        let std_out: Vec<[f64; 4]> = out.chunks_exact(4).map(|r| [r[0], r[1], r[2], r[3]]).collect();
        let target: Vec<[f64; 4]> = s.state.iter().map(|st| self.norm.standardize(st.to_array())).collect();
        let (sce, g_sce) = sce_loss_grad(&std_out, &target, &input.mask, self.config.gamma)?;

        let pred = self.physical(out);
        let merged: Vec<NodeState> = merge(input, &pred)?;
        let (pf, g_pf) = pf_loss_grad(&merged, grid)?;
        let lambda = self.config.lambda_pf;
        let mut d_out = vec![0.0; out.len()];
        for i in 0..s.n_buses() {
            for f in 0..4 {
                let mut g = g_sce[i][f];
                if input.mask.bits[i][f] {
                    g += lambda * g_pf[i][f] * self.norm.node_std[f];
                }
                d_out[i * 4 + f] = g;
            }
        }
        Ok((
            LossBreakdown {
                sce: sce.loss,
                pf,
                total: sce.loss + lambda * pf,
            },
            d_out,
        ))
    }

    /// Reconstruction together with the sample's loss terms.
    pub fn forward_with_loss(&self, input: &MaskedSample<'_>) -> Result<(Vec<[f64; 4]>, LossBreakdown), NnError> {
        self.check(input)?;
        let cache = self.run(input);
        let (l, _) = self.sample_loss(input, &cache.out, &input.sample.grid())?;
        Ok((self.physical(&cache.out), l))
    }

    /// Average loss over a batch.
    pub fn loss(&self, batch: &[MaskedSample<'_>]) -> Result<LossBreakdown, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut acc = LossBreakdown::default();
        for input in batch {
            self.check(input)?;
            let cache = self.run(input);
            let (l, _) = self.sample_loss(input, &cache.out, &input.sample.grid())?;
            acc.sce += l.sce;
            acc.pf += l.pf;
        }
        Ok(self.average(acc, batch.len()))
    }

    fn average(&self, acc: LossBreakdown, n: usize) -> LossBreakdown {
        let sce = acc.sce / n as f64;
        let pf = acc.pf / n as f64;
        LossBreakdown {
            sce,
            pf,
            total: sce + self.config.lambda_pf * pf,
        }
    }

    /// Average loss and its exact gradient w.r.t. every parameter.
    pub fn backward(&self, batch: &[MaskedSample<'_>]) -> Result<(LossBreakdown, Gradients), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut grads = self.params.zeros_like();
        let mut acc = LossBreakdown::default();
        for input in batch {
            self.check(input)?;
            let cache = self.run(input);
            let (l, d_out) = self.sample_loss(input, &cache.out, &input.sample.grid())?;
            if !l.total.is_finite() {
                return Err(NnError::NonFinite("loss".into()));
            }
            acc.sce += l.sce;
            acc.pf += l.pf;
            self.backprop(input, &cache, &d_out, &mut grads);
        }
        grads.scale(1.0 / batch.len() as f64);
        Ok((self.average(acc, batch.len()), grads))
    }

    fn backprop(&self, input: &MaskedSample<'_>, c: &ForwardCache, d_out: &[f64], grads: &mut Gradients) {
        let s = input.sample;
        let n = s.n_buses();
        let h = self.config.hidden_dim;
        let act = self.config.activation;
        let g = &mut grads.tensors;

        let (wo, bo) = self.head_idx();
        matmul_tn_acc(&c.head_in, d_out, n, h, OUT, &mut g[wo].data);
        col_sum_acc(d_out, &mut g[bo].data);
        let mut dh = matmul_nt(d_out, self.t(wo), n, OUT, h);

        if self.config.n_decoder_layers == 0 {
            matmul_tn_acc(&c.mask_f, &dh, n, 4, h, &mut g[TOKEN].data);
        }
        let mut d_edge = vec![0.0; c.edge.len()];
        for l in (0..self.config.n_layers()).rev() {
            let lc = &c.layers[l];
            let [wm, bm, wu, bu] = Self::layer_idx(l);
            let d_upd: Vec<f64> = dh
                .iter()
                .zip(&lc.upd_pre)
                .map(|(d, u)| d * act.derivative(*u))
                .collect();
            matmul_tn_acc(&lc.cat, &d_upd, n, 2 * h, h, &mut g[wu].data);
            col_sum_acc(&d_upd, &mut g[bu].data);
            let d_cat = matmul_nt(&d_upd, self.t(wu), n, h, 2 * h);
            // Residual path plus the `h` half of the concatenation.
            let mut d_in = dh;
            let mut d_agg = vec![0.0; n * h];
            for i in 0..n {
                for k in 0..h {
                    d_in[i * h + k] += d_cat[i * 2 * h + k];
                    d_agg[i * h + k] = d_cat[i * 2 * h + h + k];
                }
            }
            let mut d_msg = vec![0.0; n * h];
            for (k, &(a, b)) in s.edges.iter().enumerate() {
                let ek = &c.edge[k * h..(k + 1) * h];
                let dek = &mut d_edge[k * h..(k + 1) * h];
                for ch in 0..h {
                    d_msg[a * h + ch] += d_agg[b * h + ch] * ek[ch];
                    dek[ch] += d_agg[b * h + ch] * lc.msg[a * h + ch];
                    d_msg[b * h + ch] += d_agg[a * h + ch] * ek[ch];
                    dek[ch] += d_agg[a * h + ch] * lc.msg[b * h + ch];
                }
            }
            let d_msg_pre: Vec<f64> = d_msg
                .iter()
                .zip(&lc.msg_pre)
                .map(|(d, p)| d * act.derivative(*p))
                .collect();
            matmul_tn_acc(&lc.h_in, &d_msg_pre, n, h, h, &mut g[wm].data);
            col_sum_acc(&d_msg_pre, &mut g[bm].data);
            let back = matmul_nt(&d_msg_pre, self.t(wm), n, h, h);
            d_in.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
            if l == self.config.n_encoder_layers {
                matmul_tn_acc(&c.mask_f, &d_in, n, 4, h, &mut g[TOKEN].data);
            }
            dh = d_in;
        }

        let d_edge_pre: Vec<f64> = d_edge
            .iter()
            .zip(&c.edge_pre)
            .map(|(d, p)| d * act.derivative(*p))
            .collect();
        let e_count = s.edges.len();
        matmul_tn_acc(&c.edge_in, &d_edge_pre, e_count, EDGE_IN, h, &mut g[W_EDGE].data);
        col_sum_acc(&d_edge_pre, &mut g[B_EDGE].data);

        matmul_tn_acc(&c.node_in, &dh, n, NODE_IN, h, &mut g[W_IN].data);
        col_sum_acc(&dh, &mut g[B_IN].data);
        matmul_tn_acc(&c.mask_f, &dh, n, 4, h, &mut g[TOKEN].data);
    }
}

//! Shallow multi-branch network: one MLP per input branch (ego features,
//! positional embeddings, optionally propagated soft labels), a residual
//! combiner and an aggregation MLP ending in a class head.
//!
//! The combiner computes
//! `z = relu(W * dropout([h_x; h_p; h_y]) + b + h_x + h_p + h_y)`
//! and the aggregation MLP maps `z` to `c` logits. Backpropagation is written
//! out by hand; every cached activation needed for the exact gradient lives in
//! [`Forward`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{softmax_rows, DenseMatrix, FeatureMatrix};
use super::NnError;

/// Floor applied inside `log` in the cross-entropy.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub w: DenseMatrix,
    pub b: Vec<f64>,
    #[serde(skip)]
    gw: Option<DenseMatrix>,
    #[serde(skip)]
    gb: Vec<f64>,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            w: DenseMatrix::from_vec(fan_in, fan_out, w).expect("shape"),
            b,
            gw: None,
            gb: Vec::new(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    fn forward(&self, input: &FeatureMatrix) -> DenseMatrix {
        let mut out = input.matmul(&self.w);
        let k = out.cols();
        for row in out.data_mut().chunks_mut(k) {
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        out
    }

    fn zero_grad(&mut self) {
        match &mut self.gw {
            Some(g) if g.rows() == self.w.rows() && g.cols() == self.w.cols() => {
                g.data_mut().iter_mut().for_each(|v| *v = 0.0)
            }
            _ => self.gw = Some(DenseMatrix::zeros(self.w.rows(), self.w.cols())),
        }
        self.gb.clear();
        self.gb.resize(self.b.len(), 0.0);
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward(
        &mut self,
        input: &FeatureMatrix,
        dout: &DenseMatrix,
        need_input_grad: bool,
    ) -> Option<DenseMatrix> {
        if self.gw.is_none() {
            self.zero_grad();
        }
        input.t_matmul_into(dout, self.gw.as_mut().unwrap());
        for row in dout.data().chunks(dout.cols().max(1)) {
            for (g, d) in self.gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        need_input_grad.then(|| dout.matmul_t(&self.w))
    }

    fn visit<F: FnMut(&[f64], &[f64])>(&self, f: &mut F) {
        let zeros_w;
        let gw = match &self.gw {
            Some(g) => g.data(),
            None => {
                zeros_w = vec![0.0; self.w.data().len()];
                &zeros_w
            }
        };
        f(self.w.data(), gw);
        let zeros_b;
        let gb = if self.gb.len() == self.b.len() {
            &self.gb
        } else {
            zeros_b = vec![0.0; self.b.len()];
            &zeros_b
        };
        f(&self.b, gb);
    }

    fn visit_mut<F: FnMut(&mut [f64], &[f64])>(&mut self, f: &mut F) {
        if self.gw.is_none() {
            self.zero_grad();
        }
        f(self.w.data_mut(), self.gw.as_ref().unwrap().data());
        f(&mut self.b, &self.gb);
    }
}

/// Stack of linear layers with ReLU between them and no activation after
/// the last one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

struct MlpCache {
    /// Input of each layer; entry 0 is the raw branch input.
    inputs: Vec<FeatureMatrix>,
}

impl Mlp {
    /// `depth` layers: `in -> hidden -> ... -> out`.
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, depth: usize, rng: &mut R) -> Self {
        assert!(depth >= 1, "mlp depth must be at least 1");
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { input } else { hidden };
            let fan_out = if l + 1 == depth { output } else { hidden };
            layers.push(Linear::new(fan_in, fan_out, rng));
        }
        Self { layers }
    }

    fn forward(&self, input: FeatureMatrix) -> (DenseMatrix, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(input);
        let mut out = self.layers[0].forward(&inputs[0]);
        for layer in &self.layers[1..] {
            relu_in_place(&mut out);
            inputs.push(FeatureMatrix::Dense(out));
            out = layer.forward(inputs.last().unwrap());
        }
        (out, MlpCache { inputs })
    }

    fn backward(&mut self, cache: &MlpCache, dout: DenseMatrix, need_input_grad: bool) -> Option<DenseMatrix> {
        let mut d = dout;
        for l in (0..self.layers.len()).rev() {
            let need = l > 0 || need_input_grad;
            let din = self.layers[l].backward(&cache.inputs[l], &d, need);
            if l == 0 {
                return din;
            }
            let mut din = din.unwrap();
            // relu derivative: the next layer's input is relu(pre) > 0 iff pre > 0
            if let FeatureMatrix::Dense(act) = &cache.inputs[l] {
                for (g, a) in din.data_mut().iter_mut().zip(act.data()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d = din;
        }
        None
    }
}

fn relu_in_place(m: &mut DenseMatrix) {
    for v in m.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Which branches exist and their sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Ego-feature input width; `None` drops the branch.
    pub x_dim: Option<usize>,
    /// Positional-embedding input width; `None` drops the branch.
    pub p_dim: Option<usize>,
    /// Propagated soft-label width (the class count); `None` drops the branch.
    pub y_dim: Option<usize>,
    pub layers_x: usize,
    pub layers_p: usize,
    pub layers_y: usize,
    pub layers_agg: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl NetConfig {
    pub fn branch_count(&self) -> usize {
        [self.x_dim, self.p_dim, self.y_dim].iter().filter(|d| d.is_some()).count()
    }
}

/// Branch inputs for one batch. A branch's input must be present iff the
/// branch exists.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub x: Option<FeatureMatrix>,
    pub p: Option<FeatureMatrix>,
    pub y: Option<FeatureMatrix>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        [&self.x, &self.p, &self.y]
            .iter()
            .find_map(|m| m.as_ref().map(FeatureMatrix::rows))
            .unwrap_or(0)
    }
}

/// Network with up to three input branches, residual combiner and head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoBranchNet {
    pub config: NetConfig,
    pub x: Option<Mlp>,
    pub p: Option<Mlp>,
    pub y: Option<Mlp>,
    pub combine: Linear,
    pub agg: Mlp,
}

/// Activations cached by a forward pass.
pub struct Forward {
    pub logits: DenseMatrix,
    pub probs: DenseMatrix,
    branch_caches: Vec<MlpCache>,
    branch_out_count: usize,
    combine_input: FeatureMatrix,
    dropout_scale: Option<Vec<f64>>,
    combined: DenseMatrix,
    agg_cache: MlpCache,
}

impl TwoBranchNet {
    pub fn new<R: Rng>(config: NetConfig, rng: &mut R) -> Result<Self, NnError> {
        if config.branch_count() == 0 {
            return Err(NnError::NoBranches);
        }
        if config.classes < 2 || config.hidden == 0 {
            return Err(NnError::Shape("need classes >= 2 and hidden > 0".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(NnError::Shape(format!("dropout {} not in [0, 1)", config.dropout)));
        }
        let h = config.hidden;
        let mk = |dim: Option<usize>, depth: usize, rng: &mut R| dim.map(|d| Mlp::new(d, h, h, depth.max(1), rng));
        let x = mk(config.x_dim, config.layers_x, rng);
        let p = mk(config.p_dim, config.layers_p, rng);
        let y = mk(config.y_dim, config.layers_y, rng);
        let combine = Linear::new(config.branch_count() * h, h, rng);
        let agg = Mlp::new(h, h, config.classes, config.layers_agg.max(1), rng);
        Ok(Self {
            config,
            x,
            p,
            y,
            combine,
            agg,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    fn check_input(&self, name: &str, branch: bool, m: Option<&FeatureMatrix>, dim: Option<usize>) -> Result<(), NnError> {
        match (branch, m) {
            (true, Some(m)) => {
                if Some(m.cols()) != dim {
                    return Err(NnError::Shape(format!(
                        "{name} input has {} columns, branch expects {:?}",
                        m.cols(),
                        dim
                    )));
                }
                if !m.is_finite() {
                    return Err(NnError::NonFinite(format!("{name} input")));
                }
                Ok(())
            }
            (true, None) => Err(NnError::Shape(format!("missing {name} input"))),
            (false, Some(_)) => Err(NnError::Shape(format!("{name} input given but branch absent"))),
            (false, None) => Ok(()),
        }
    }

    /// Forward pass. Dropout is applied only when `dropout_rng` is given.
    pub fn forward<R: Rng>(&self, batch: &Batch, dropout_rng: Option<&mut R>) -> Result<Forward, NnError> {
        self.check_input("x", self.x.is_some(), batch.x.as_ref(), self.config.x_dim)?;
        self.check_input("p", self.p.is_some(), batch.p.as_ref(), self.config.p_dim)?;
        self.check_input("y", self.y.is_some(), batch.y.as_ref(), self.config.y_dim)?;
        let rows = batch.rows();

        let mut outs = Vec::new();
        let mut branch_caches = Vec::new();
        for (mlp, input) in [(&self.x, &batch.x), (&self.p, &batch.p), (&self.y, &batch.y)] {
            if let (Some(mlp), Some(input)) = (mlp, input) {
                if input.rows() != rows {
                    return Err(NnError::Shape("branch inputs disagree on batch size".into()));
                }
                let (out, cache) = mlp.forward(input.clone());
                outs.push(out);
                branch_caches.push(cache);
            }
        }
        let refs: Vec<&DenseMatrix> = outs.iter().collect();
        let mut u = DenseMatrix::hconcat(&refs)?;
        let dropout_scale = match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let scale: Vec<f64> = (0..u.data().len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (v, s) in u.data_mut().iter_mut().zip(&scale) {
                    *v *= s;
                }
                Some(scale)
            }
            _ => None,
        };
        let combine_input = FeatureMatrix::Dense(u);
        let mut s = self.combine.forward(&combine_input);
        for out in &outs {
            for (v, o) in s.data_mut().iter_mut().zip(out.data()) {
                *v += o;
            }
        }
        relu_in_place(&mut s);
        let combined = s;
        let (logits, agg_cache) = self.agg.forward(FeatureMatrix::Dense(combined.clone()));
        let probs = softmax_rows(&logits);
        Ok(Forward {
            logits,
            probs,
            branch_out_count: outs.len(),
            branch_caches,
            combine_input,
            dropout_scale,
            combined,
            agg_cache,
        })
    }

    /// Eval-mode forward returning only probabilities.
    pub fn predict(&self, batch: &Batch) -> Result<DenseMatrix, NnError> {
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(batch, None)?.probs)
    }

    /// Mean soft-target cross-entropy
    /// `-(1/B) sum_i sum_l t_il log max(p_il, LOG_CLAMP)`.
    pub fn soft_ce(probs: &DenseMatrix, targets: &DenseMatrix) -> f64 {
        let b = probs.rows().max(1) as f64;
        let mut loss = 0.0;
        for (p, t) in probs.data().iter().zip(targets.data()) {
            if *t != 0.0 {
                loss -= t * p.max(LOG_CLAMP).ln();
            }
        }
        loss / b
    }

    pub fn zero_grad(&mut self) {
        self.visit_linears_mut(&mut |l| l.zero_grad());
    }

    /// Computes the soft-target cross-entropy of a cached forward pass and
    /// writes exact parameter gradients into the gradient buffers
    /// (overwriting them). Target rows must sum to one.
    pub fn backward(&mut self, fwd: &Forward, targets: &DenseMatrix) -> Result<f64, NnError> {
        if targets.rows() != fwd.probs.rows() || targets.cols() != fwd.probs.cols() {
            return Err(NnError::Shape("targets do not match predictions".into()));
        }
        let loss = Self::soft_ce(&fwd.probs, targets);
        self.zero_grad();
        let b = fwd.probs.rows().max(1) as f64;
        let mut dlogits = fwd.probs.clone();
        for (d, t) in dlogits.data_mut().iter_mut().zip(targets.data()) {
            *d = (*d - t) / b;
        }
        let mut ds = self
            .agg
            .backward(&fwd.agg_cache, dlogits, true)
            .expect("input grad requested");
        for (g, z) in ds.data_mut().iter_mut().zip(fwd.combined.data()) {
            if *z <= 0.0 {
                *g = 0.0;
            }
        }
        let mut du = self
            .combine
            .backward(&fwd.combine_input, &ds, true)
            .expect("input grad requested");
        if let Some(scale) = &fwd.dropout_scale {
            for (g, s) in du.data_mut().iter_mut().zip(scale) {
                *g *= s;
            }
        }
        let h = self.config.hidden;
        let k = fwd.branch_out_count;
        let mut caches = fwd.branch_caches.iter();
        let mut block = 0;
        for mlp in [&mut self.x, &mut self.p, &mut self.y].into_iter().flatten() {
            let cache = caches.next().expect("cache per branch");
            let mut dh = DenseMatrix::zeros(ds.rows(), h);
            for i in 0..ds.rows() {
                let src = &du.row(i)[block * h..(block + 1) * h];
                for ((o, a), s) in dh.row_mut(i).iter_mut().zip(src).zip(ds.row(i)) {
                    *o = a + s;
                }
            }
            mlp.backward(cache, dh, false);
            block += 1;
        }
        debug_assert_eq!(block, k);
        Ok(loss)
    }

    fn visit_linears_mut(&mut self, f: &mut dyn FnMut(&mut Linear)) {
        for mlp in [&mut self.x, &mut self.p, &mut self.y].into_iter().flatten() {
            mlp.layers.iter_mut().for_each(&mut *f);
        }
        f(&mut self.combine);
        self.agg.layers.iter_mut().for_each(f);
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut v = Vec::new();
        for mlp in [&self.x, &self.p, &self.y].into_iter().flatten() {
            v.extend(mlp.layers.iter());
        }
        v.push(&self.combine);
        v.extend(self.agg.layers.iter());
        v
    }

    /// Visits `(params, grads)` for every tensor in a fixed order.
    pub fn visit_params<F: FnMut(&[f64], &[f64])>(&self, mut f: F) {
        for l in self.linears() {
            l.visit(&mut f);
        }
    }

    /// Mutable variant of [`visit_params`](Self::visit_params).
    pub fn visit_params_mut<F: FnMut(&mut [f64], &[f64])>(&mut self, mut f: F) {
        self.visit_linears_mut(&mut |l| l.visit_mut(&mut f));
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|p, _| n += p.len());
        n
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.visit_params(|p, _| v.extend_from_slice(p));
        v
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.visit_params(|_, g| v.extend_from_slice(g));
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_params_mut(|p, _| {
            p.copy_from_slice(&flat[offset..offset + p.len()]);
            offset += p.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    /// FNV-1a digest over the bit patterns of every parameter.
    pub fn param_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        self.visit_params(|p, _| {
            for v in p {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        });
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(y: bool) -> NetConfig {
        NetConfig {
            x_dim: Some(3),
            p_dim: Some(4),
            y_dim: y.then_some(3),
            layers_x: 2,
            layers_p: 1,
            layers_y: 1,
            layers_agg: 2,
            hidden: 5,
            classes: 3,
            dropout: 0.5,
        }
    }

    fn batch(rows: usize, y: bool, rng: &mut ChaCha8Rng) -> Batch {
        let mut mk = |c: usize| {
            FeatureMatrix::Dense(
                DenseMatrix::from_vec(rows, c, (0..rows * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            )
        };
        Batch {
            x: Some(mk(3)),
            p: Some(mk(4)),
            y: if y { Some(mk(3)) } else { None },
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = TwoBranchNet::new(cfg(true), &mut rng).unwrap();
        net.visit_params_mut(|p, _| p.iter_mut().for_each(|v| *v = 0.0));
        let b = batch(4, true, &mut rng);
        let probs = net.predict(&b).unwrap();
        for v in probs.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = TwoBranchNet::new(cfg(false), &mut rng).unwrap();
        let b = batch(8, false, &mut rng);
        let probs = net.predict(&b).unwrap();
        for i in 0..8 {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_single_branch_forward() {
        // x branch: one layer, identity weights, zero bias; combiner W = 0, b = 0,
        // so z = relu(h_x); agg: identity.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = NetConfig {
            x_dim: Some(2),
            p_dim: None,
            y_dim: None,
            layers_x: 1,
            layers_p: 1,
            layers_y: 1,
            layers_agg: 1,
            hidden: 2,
            classes: 2,
            dropout: 0.0,
        };
        let mut net = TwoBranchNet::new(config, &mut rng).unwrap();
        let eye = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        net.x.as_mut().unwrap().layers[0].w = eye.clone();
        net.x.as_mut().unwrap().layers[0].b = vec![0.0, 0.0];
        net.combine.w = DenseMatrix::zeros(2, 2);
        net.combine.b = vec![0.0, 0.0];
        net.agg.layers[0].w = eye;
        net.agg.layers[0].b = vec![0.0, 0.0];
        let x = DenseMatrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let b = Batch {
            x: Some(FeatureMatrix::Dense(x)),
            ..Default::default()
        };
        let fwd = net.forward::<ChaCha8Rng>(&b, None).unwrap();
        // row 0: relu([1, -2]) = [1, 0]; row 1: [0.5, 3]
        assert_eq!(fwd.logits.data(), &[1.0, 0.0, 0.5, 3.0]);
        let e = 1f64.exp();
        assert!((fwd.probs.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn loss_special_cases() {
        let uniform = DenseMatrix::from_vec(1, 4, vec![0.25; 4]).unwrap();
        assert!((TwoBranchNet::soft_ce(&uniform, &uniform) - 4f64.ln()).abs() < 1e-15);
        let onehot = DenseMatrix::from_vec(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(TwoBranchNet::soft_ce(&onehot, &onehot), 0.0);
        let zero = DenseMatrix::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let t = DenseMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!((TwoBranchNet::soft_ce(&zero, &t) + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = TwoBranchNet::new(cfg(true), &mut rng).unwrap();
        let b = batch(6, true, &mut rng);
        let a = net.predict(&b).unwrap();
        let c = net.predict(&b).unwrap();
        assert_eq!(a, c);
        let mut drng = ChaCha8Rng::seed_from_u64(5);
        let d = net.forward(&b, Some(&mut drng)).unwrap().probs;
        assert_ne!(a, d);
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = TwoBranchNet::new(cfg(false), &mut rng).unwrap();
        let mut b = batch(2, true, &mut rng);
        assert!(net.predict(&b).is_err());
        b.y = None;
        b.x = Some(FeatureMatrix::Dense(DenseMatrix::zeros(2, 7)));
        assert!(net.predict(&b).is_err());
        let mut none = cfg(false);
        none.x_dim = None;
        none.p_dim = None;
        assert!(matches!(TwoBranchNet::new(none, &mut rng), Err(NnError::NoBranches)));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = TwoBranchNet::new(cfg(true), &mut rng).unwrap();
        let flat = net.flat_params();
        assert_eq!(flat.len(), net.param_count());
        let d = net.param_digest();
        let mut changed = flat.clone();
        changed[0] += 1.0;
        net.set_flat_params(&changed);
        assert_ne!(net.param_digest(), d);
        net.set_flat_params(&flat);
        assert_eq!(net.param_digest(), d);
    }
}

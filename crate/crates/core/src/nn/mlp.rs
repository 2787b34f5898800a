//! Tanh MLP with categorical and Bernoulli output heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NetScalar, NnError};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSpec {
    /// Softmax over `m` classes.
    Categorical(usize),
    /// One logit; the probability of outcome 1.
    Bernoulli,
}

impl HeadSpec {
    pub fn width(self) -> usize {
        match self {
            HeadSpec::Categorical(m) => m,
            HeadSpec::Bernoulli => 1,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            HeadSpec::Categorical(m) => m,
            HeadSpec::Bernoulli => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl MlpSpec {
    pub fn output(&self) -> usize {
        self.heads.iter().map(|h| h.width()).sum()
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output());
        w
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(NnError::BadSpec("layer widths must be positive".into()));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| matches!(h, HeadSpec::Categorical(m) if *m < 1)) {
            return Err(NnError::BadSpec("need at least one head, categorical heads need classes".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Network parameters: `[W_0, b_0, W_1, b_1, ...]` with `W_l` stored
/// row-major as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: Vec<T>,
}

/// Reusable activation buffers for batched passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    acts: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
    /// Nonzero inputs `(row, column)` when the first layer ran sparse.
    sparse: Vec<(usize, usize)>,
}

/// Records the nonzero entries of `x` when at most a quarter of it is
/// nonzero; returns whether the sparse path applies.
fn sparse_input<T: NetScalar>(nz: &mut Vec<(usize, usize)>, x: &[T], n_in: usize) -> bool {
    nz.clear();
    let limit = x.len() / 4;
    for (k, &v) in x.iter().enumerate() {
        if v != T::zero() {
            if nz.len() == limit {
                nz.clear();
                return false;
            }
            nz.push((k / n_in, k % n_in));
        }
    }
    true
}

impl<T: NetScalar> Mlp<T> {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights and biases.
    pub fn new(spec: MlpSpec, rng: &mut StreamRng) -> Result<Self, NnError> {
        spec.validate()?;
        let mut params = Vec::with_capacity(spec.parameter_count());
        for w in spec.widths().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(T::lit(rng.random_range(-bound..bound)));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let n = spec.parameter_count();
        Ok(Mlp { spec, params: vec![T::zero(); n] })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<T>) -> Result<Self, NnError> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(NnError::WidthMismatch { expected: spec.parameter_count(), got: params.len() });
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        let net: Self = serde_json::from_str(s).map_err(|e| NnError::BadSpec(e.to_string()))?;
        Self::from_params(net.spec, net.params)
    }

    /// Little-endian `f64` dump of the parameters.
    pub fn to_flat_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_f64_lossy().to_le_bytes()).collect()
    }

    fn forward_into(&self, x: &[T], batch: usize, ws: &mut Workspace<T>) {
        let widths = self.spec.widths();
        let layers = widths.len() - 1;
        ws.acts.resize_with(layers + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(x);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let z = &mut rest[0];
            z.clear();
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            if l == 0 && sparse_input(&mut ws.sparse, x, n_in) {
                // one-hot inputs: add the columns of W for nonzero entries only
                for &(r, i) in &ws.sparse {
                    let v = x[r * n_in + i];
                    for (o, zo) in z[r * n_out..(r + 1) * n_out].iter_mut().enumerate() {
                        *zo += v * w[o * n_in + i];
                    }
                }
            } else {
                // Z (B x out) += A (B x in) * W^T
                T::gemm(
                    batch, n_in, n_out,
                    &prev[l], n_in as isize, 1,
                    w, 1, n_in as isize,
                    T::one(),
                    z, n_out as isize, 1,
                );
            }
            if l + 1 < layers {
                for v in z.iter_mut() {
                    *v = tanh(*v);
                }
            }
        }
    }

    fn check_input(&self, x: &[T]) -> Result<usize, NnError> {
        let n = self.spec.input;
        if x.is_empty() || x.len() % n != 0 {
            return Err(NnError::WidthMismatch { expected: n, got: x.len() });
        }
        Ok(x.len() / n)
    }

    /// Raw output logits for a batch laid out row by row.
    pub fn logits(&self, x: &[T], ws: &mut Workspace<T>) -> Result<Vec<T>, NnError> {
        let batch = self.check_input(x)?;
        self.forward_into(x, batch, ws);
        Ok(ws.acts.last().expect("output layer").clone())
    }

    /// Per-head probability vectors for one input: a full softmax for
    /// categorical heads, `[1 - p, p]` for Bernoulli heads.
    pub fn forward(&self, x: &[T]) -> Result<Vec<Vec<T>>, NnError> {
        if x.len() != self.spec.input {
            return Err(NnError::WidthMismatch { expected: self.spec.input, got: x.len() });
        }
        let mut ws = Workspace::default();
        let out = self.logits(x, &mut ws)?;
        let mut res = Vec::with_capacity(self.spec.heads.len());
        let mut o = 0;
        for &h in &self.spec.heads {
            let z = &out[o..o + h.width()];
            o += h.width();
            res.push(match h {
                HeadSpec::Categorical(_) => softmax(z),
                HeadSpec::Bernoulli => {
                    let p = sigmoid(z[0]);
                    vec![T::one() - p, p]
                }
            });
        }
        Ok(res)
    }

    /// Probability the network assigns to `targets` (one class per head),
    /// head by head.
    pub fn target_probs(&self, x: &[T], targets: &[u32], ws: &mut Workspace<T>) -> Result<Vec<T>, NnError> {
        if x.len() != self.spec.input {
            return Err(NnError::WidthMismatch { expected: self.spec.input, got: x.len() });
        }
        self.check_targets(targets, 1)?;
        self.forward_into(x, 1, ws);
        let out = ws.acts.last().expect("output layer");
        let mut res = Vec::with_capacity(targets.len());
        let mut o = 0;
        for (&h, &t) in self.spec.heads.iter().zip(targets) {
            let z = &out[o..o + h.width()];
            o += h.width();
            res.push(match h {
                HeadSpec::Categorical(_) => (z[t as usize] - logsumexp(z)).fast_exp(),
                HeadSpec::Bernoulli if t == 1 => sigmoid(z[0]),
                HeadSpec::Bernoulli => sigmoid(-z[0]),
            });
        }
        Ok(res)
    }

    fn check_targets(&self, targets: &[u32], batch: usize) -> Result<(), NnError> {
        let heads = self.spec.heads.len();
        if targets.len() != heads * batch {
            return Err(NnError::WidthMismatch { expected: heads * batch, got: targets.len() });
        }
        for (i, &t) in targets.iter().enumerate() {
            let h = self.spec.heads[i % heads];
            if t as usize >= h.classes() {
                return Err(NnError::TargetOutOfRange { head: i % heads, target: t as usize });
            }
        }
        Ok(())
    }

    /// Mean over the batch of the summed per-head negative log-likelihoods.
    pub fn loss(&self, x: &[T], targets: &[u32]) -> Result<T, NnError> {
        let batch = self.check_input(x)?;
        self.check_targets(targets, batch)?;
        let mut ws = Workspace::default();
        self.forward_into(x, batch, &mut ws);
        let out = ws.acts.last().expect("output layer");
        let width = self.spec.output();
        let heads = self.spec.heads.len();
        let mut total = T::zero();
        for b in 0..batch {
            let l = self.sample_loss(&out[b * width..(b + 1) * width], &targets[b * heads..(b + 1) * heads], None);
            if !l.is_finite() {
                return Err(NnError::NonFiniteLoss { index: b });
            }
            total += l;
        }
        Ok(total / T::count(batch))
    }

    /// Per-sample loss; writes `d loss / d logits` into `grad` when given.
    fn sample_loss(&self, z: &[T], targets: &[u32], mut grad: Option<&mut [T]>) -> T {
        let mut loss = T::zero();
        let mut o = 0;
        for (&h, &t) in self.spec.heads.iter().zip(targets) {
            let w = h.width();
            let zh = &z[o..o + w];
            match h {
                HeadSpec::Categorical(_) => {
                    let lse = logsumexp(zh);
                    loss += lse - zh[t as usize];
                    if let Some(g) = grad.as_deref_mut() {
                        for (k, gk) in g[o..o + w].iter_mut().enumerate() {
                            *gk = (zh[k] - lse).fast_exp();
                        }
                        g[o + t as usize] -= T::one();
                    }
                }
                HeadSpec::Bernoulli => {
                    let y = T::count(t as usize);
                    loss += softplus(zh[0]) - y * zh[0];
                    if let Some(g) = grad.as_deref_mut() {
                        g[o] = sigmoid(zh[0]) - y;
                    }
                }
            }
            o += w;
        }
        loss
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        x: &[T],
        targets: &[u32],
        grad: &mut Vec<T>,
        ws: &mut Workspace<T>,
    ) -> Result<T, NnError> {
        let batch = self.check_input(x)?;
        self.check_targets(targets, batch)?;
        self.forward_into(x, batch, ws);
        let widths = self.spec.widths();
        let layers = widths.len() - 1;
        let out_w = self.spec.output();
        let heads = self.spec.heads.len();
        let scale = T::one() / T::count(batch);

        let mut delta = std::mem::take(&mut ws.delta);
        delta.clear();
        delta.resize(batch * out_w, T::zero());
        let mut loss = T::zero();
        {
            let out = ws.acts.last().expect("output layer");
            for b in 0..batch {
                let l = self.sample_loss(
                    &out[b * out_w..(b + 1) * out_w],
                    &targets[b * heads..(b + 1) * heads],
                    Some(&mut delta[b * out_w..(b + 1) * out_w]),
                );
                if !l.is_finite() {
                    ws.delta = delta;
                    return Err(NnError::NonFiniteLoss { index: b });
                }
                loss += l;
            }
        }
        for d in delta.iter_mut() {
            *d *= scale;
        }

        grad.clear();
        grad.resize(self.params.len(), T::zero());
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta_prev = std::mem::take(&mut ws.delta_prev);
        for l in (0..layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let a = &ws.acts[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                if l == 0 && !ws.sparse.is_empty() {
                    gw.fill(T::zero());
                    for &(r, i) in &ws.sparse {
                        let v = a[r * n_in + i];
                        for (o, &d) in delta[r * n_out..(r + 1) * n_out].iter().enumerate() {
                            gw[o * n_in + i] += d * v;
                        }
                    }
                } else {
                    // dW (out x in) = delta^T (out x B) * A (B x in)
                    T::gemm(
                        n_out, batch, n_in,
                        &delta, 1, n_out as isize,
                        a, n_in as isize, 1,
                        T::zero(),
                        gw, n_in as isize, 1,
                    );
                }
                for b in 0..batch {
                    for (g, &d) in gb.iter_mut().zip(&delta[b * n_out..(b + 1) * n_out]) {
                        *g += d;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                delta_prev.clear();
                delta_prev.resize(batch * n_in, T::zero());
                // dA (B x in) = delta (B x out) * W (out x in)
                T::gemm(
                    batch, n_out, n_in,
                    &delta, n_out as isize, 1,
                    w, n_in as isize, 1,
                    T::zero(),
                    &mut delta_prev, n_in as isize, 1,
                );
                for (d, &h) in delta_prev.iter_mut().zip(a.iter()) {
                    *d *= T::one() - h * h;
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
        ws.delta = delta;
        ws.delta_prev = delta_prev;
        Ok(loss * scale)
    }
}

/// `tanh` through one `exp`; several times faster than the libm call and
/// accurate to a few ulps in absolute terms.
#[inline]
fn tanh<T: NetScalar>(x: T) -> T {
    let e = (T::lit(2.0) * x.abs().min(T::lit(20.0))).fast_exp();
    let two = T::lit(2.0);
    (T::one() - two / (e + T::one())).copysign(x)
}

const LANES: usize = 8;

/// Max over `z` with independent lanes so the reduction vectorizes.
#[inline]
fn lane_max<T: NetScalar>(z: &[T]) -> T {
    let mut acc = [T::neg_infinity(); LANES];
    let chunks = z.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            acc[i] = acc[i].max(c[i]);
        }
    }
    tail.iter().chain(acc.iter()).copied().fold(T::neg_infinity(), T::max)
}

/// `sum_i exp(z_i - shift)`, lane-parallel.
#[inline]
fn lane_exp_sum<T: NetScalar>(z: &[T], shift: T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = z.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..LANES {
            acc[i] += (c[i] - shift).fast_exp();
        }
    }
    let mut s = T::zero();
    for &v in tail {
        s += (v - shift).fast_exp();
    }
    acc.iter().fold(s, |a, &b| a + b)
}

fn logsumexp<T: NetScalar>(z: &[T]) -> T {
    let m = lane_max(z);
    m + lane_exp_sum(z, m).ln()
}

fn softmax<T: NetScalar>(z: &[T]) -> Vec<T> {
    let lse = logsumexp(z);
    z.iter().map(|&v| (v - lse).fast_exp()).collect()
}

fn sigmoid<T: NetScalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).fast_exp())
    } else {
        let e = z.fast_exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: NetScalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec() -> MlpSpec {
        MlpSpec { input: 3, hidden: vec![5, 4], heads: vec![HeadSpec::Categorical(4), HeadSpec::Bernoulli] }
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Mlp::<f64>::zeros(spec()).unwrap();
        let p = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p[0], vec![0.25; 4]);
        assert_eq!(p[1], vec![0.5, 0.5]);
    }

    #[test]
    fn heads_are_normalized() {
        let mut r = rng::stream(3, &[]);
        let net = Mlp::<f64>::new(spec(), &mut r).unwrap();
        for i in 0..20 {
            let x = [i as f64 * 0.1, -0.5, 3.0 - i as f64];
            for head in net.forward(&x).unwrap() {
                assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let net = Mlp::<f64>::zeros(spec()).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(NnError::WidthMismatch { .. })));
        assert!(net.loss(&[1.0, 2.0, 3.0], &[4, 0]).is_err());
    }

    #[test]
    fn target_probs_match_forward() {
        let mut r = rng::stream(5, &[]);
        let net = Mlp::<f64>::new(spec(), &mut r).unwrap();
        let x = [0.2, 0.1, -0.4];
        let full = net.forward(&x).unwrap();
        let mut ws = Workspace::default();
        let t = net.target_probs(&x, &[2, 1], &mut ws).unwrap();
        assert!((t[0] - full[0][2]).abs() < 1e-15);
        assert!((t[1] - full[1][1]).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_gradient_pass() {
        let mut r = rng::stream(9, &[]);
        let net = Mlp::<f64>::new(spec(), &mut r).unwrap();
        let x = [0.1, 0.2, 0.3, -1.0, 0.0, 1.0];
        let t = [1, 0, 3, 1];
        let mut g = Vec::new();
        let mut ws = Workspace::default();
        let l = net.loss_and_grad(&x, &t, &mut g, &mut ws).unwrap();
        assert!((l - net.loss(&x, &t).unwrap()).abs() < 1e-14);
        assert_eq!(g.len(), spec().parameter_count());
    }

    #[test]
    fn one_hot_batches_take_the_sparse_path_with_exact_gradients() {
        let spec = MlpSpec { input: 12, hidden: vec![6], heads: vec![HeadSpec::Categorical(3), HeadSpec::Bernoulli] };
        let mut r = rng::stream(4, &[]);
        let mut net = Mlp::<f64>::new(spec, &mut r).unwrap();
        let mut x = vec![0.0; 36];
        x[2] = 1.0;
        x[12 + 7] = 1.0;
        x[24 + 11] = 0.5;
        let t = [0, 1, 2, 0, 1, 1];
        let (mut g, mut ws) = (Vec::new(), Workspace::default());
        net.loss_and_grad(&x, &t, &mut g, &mut ws).unwrap();
        assert_eq!(ws.sparse.len(), 3);
        let h = 1e-6;
        for k in 0..g.len() {
            let p = net.params()[k];
            net.params_mut()[k] = p + h;
            let up = net.loss(&x, &t).unwrap();
            net.params_mut()[k] = p - h;
            let down = net.loss(&x, &t).unwrap();
            net.params_mut()[k] = p;
            let fd = (up - down) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-8, "param {k}: {} vs {fd}", g[k]);
        }
    }

    #[test]
    fn json_round_trip() {
        let mut r = rng::stream(1, &[]);
        let net = Mlp::<f32>::new(spec(), &mut r).unwrap();
        let back = Mlp::<f32>::from_json(&net.to_json()).unwrap();
        assert_eq!(net, back);
        assert_eq!(net.to_flat_bytes().len(), 8 * spec().parameter_count());
    }

    #[test]
    fn tanh_matches_libm() {
        for i in -4000..4000 {
            let x = i as f64 * 0.01;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }
}

//! Small feedforward networks, Adam and a replay buffer.

pub mod adam;
pub mod mlp;
pub mod replay;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use mlp::{HeadSpec, Mlp, MlpSpec, Workspace};
pub use replay::ReplayBuffer;

use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite loss at batch index {index}")]
    NonFiniteLoss { index: usize },
    #[error("target {target} out of range for head {head}")]
    TargetOutOfRange { head: usize, target: usize },
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid network: {0}")]
    BadSpec(String),
}

/// Scalars with a dense matrix-multiply kernel.
pub trait NetScalar: Scalar + serde::Serialize + serde::de::DeserializeOwned {
    /// `C <- A B + beta C` over strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize, k: usize, n: usize,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self], rsc: isize, csc: isize,
    );

    /// `e^x` for activations and softmax; may trade the last ulp for speed.
    #[inline(always)]
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

macro_rules! impl_gemm {
    ($t:ty, $f:path $(, fast_exp = $e:path)?) => {
        impl NetScalar for $t {
            $(
                #[inline(always)]
                fn fast_exp(self) -> Self {
                    $e(self)
                }
            )?

            #[allow(clippy::too_many_arguments)]
            fn gemm(
                m: usize, k: usize, n: usize,
                a: &[Self], rsa: isize, csa: isize,
                b: &[Self], rsb: isize, csb: isize,
                beta: Self,
                c: &mut [Self], rsc: isize, csc: isize,
            ) {
                let last = |r: usize, c: usize, rs: isize, cs: isize| {
                    if r == 0 || c == 0 { 0 } else { (r - 1) as isize * rs + (c - 1) as isize * cs + 1 }
                };
                assert!(last(m, k, rsa, csa) <= a.len() as isize);
                assert!(last(k, n, rsb, csb) <= b.len() as isize);
                assert!(last(m, n, rsc, csc) <= c.len() as isize);
                // SAFETY: the asserts above keep every strided access in bounds,
                // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
                unsafe {
                    $f(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc)
                }
            }
        }
    };
}

impl_gemm!(f32, matrixmultiply::sgemm, fast_exp = exp_f32);
impl_gemm!(f64, matrixmultiply::dgemm);

/// Branch-free `expf` (range reduction plus a degree-6 polynomial, as in
/// Cephes). Rounding uses the 1.5 * 2^23 shift trick and the exponent is
/// assembled with integer ops, so loops over it vectorize.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const SHIFT: f32 = 12_582_912.0;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.max(-87.0).min(88.0);
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_2e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let e = p * r * r + r + 1.0;
    e * f32::from_bits(t.to_bits().wrapping_sub(0x4B40_0000 - 127) << 23)
}

/// Owns the optimizer state and gradient buffers for one network.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub adam: Adam<T>,
    grad: Vec<T>,
    ws: Workspace<T>,
}

impl<T: NetScalar> Trainer<T> {
    pub fn new(config: AdamConfig, net: &Mlp<T>) -> Self {
        Trainer { adam: Adam::new(config, net.params().len()), grad: Vec::new(), ws: Workspace::default() }
    }

    /// One optimizer step on a batch; returns the pre-step loss.
    pub fn train_batch(&mut self, net: &mut Mlp<T>, x: &[T], targets: &[u32]) -> Result<T, NnError> {
        if x.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let loss = net.loss_and_grad(x, targets, &mut self.grad, &mut self.ws)?;
        self.adam.step(net.params_mut(), &self.grad);
        Ok(loss)
    }
}

use super::params::{Bound, ParamId, ParamSet};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Float, Graph, Var};

/// Affine map applied to every row: `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let w = ps.add_uniform(format!("{name}.w"), &[inputs, outputs], inputs, rng);
        let b = ps.add_uniform(format!("{name}.b"), &[outputs], inputs, rng);
        Self { w, b, inputs, outputs }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add_row(y, p[self.b])
    }
}

/// Learned gain and bias of a layer normalization over channels.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: ps.add_const(format!("{name}.gain"), &[dim], 1.0),
            bias: ps.add_const(format!("{name}.bias"), &[dim], 0.0),
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layer_norm(x, p[self.gain], p[self.bias], NORM_EPS)
    }
}

//! Differentiation contract for the primitives the TDV network is built from.
//!
//! Every primitive provides a forward map, a Jacobian-vector product (forward
//! mode) and a vector-Jacobian product (reverse mode). Internally both are
//! evaluated on [`Lane`]s, values that optionally carry a tangent: running the
//! reverse pass on lanes whose tangents were seeded by a forward pass is the
//! forward-over-reverse scheme that yields exact Hessian-vector products.

use super::conv::{conv_adjoint, conv_forward, conv_kernel_grad};
use super::Tensor;
use crate::error::{Result, TdvError};
use crate::regularizer::phi;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    /// `(x, W) ↦ conv(x, W)`
    Conv2d,
    /// `(y, W) ↦ convᵀ(y, W)`
    Conv2dAdjoint,
    /// Elementwise log-student-t potential.
    Phi,
    /// Elementwise `x²`.
    Square,
    Identity,
    /// `(a, b) ↦ a + b`
    Add,
    /// `(a, b, W) ↦ conv(concat(a, b), W)` with a stride-1 kernel.
    ConcatFuse,
}

impl OpTag {
    pub const ALL: [OpTag; 7] = [
        OpTag::Conv2d,
        OpTag::Conv2dAdjoint,
        OpTag::Phi,
        OpTag::Square,
        OpTag::Identity,
        OpTag::Add,
        OpTag::ConcatFuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpTag::Conv2d => "conv2d",
            OpTag::Conv2dAdjoint => "conv2d_adjoint",
            OpTag::Phi => "phi",
            OpTag::Square => "square",
            OpTag::Identity => "identity",
            OpTag::Add => "add",
            OpTag::ConcatFuse => "concat_fuse",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            OpTag::Conv2d | OpTag::Conv2dAdjoint | OpTag::Add => 2,
            OpTag::Phi | OpTag::Square | OpTag::Identity => 1,
            OpTag::ConcatFuse => 3,
        }
    }
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpTag {
    type Err = TdvError;

    fn from_str(s: &str) -> Result<Self> {
        OpTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| TdvError::contract(format!("unknown primitive '{s}'")))
    }
}

/// A registered primitive together with its static attributes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub tag: OpTag,
    pub stride: usize,
    pub blur: bool,
    /// Shape parameter of the potential (only read by [`OpTag::Phi`]).
    pub nu: f64,
}

impl Primitive {
    pub fn new(tag: OpTag) -> Self {
        Self {
            tag,
            stride: 1,
            blur: false,
            nu: 9.0,
        }
    }

    /// Look a primitive up by its tag name.
    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(Self::new(tag.parse()?))
    }

    pub fn conv(stride: usize, blur: bool) -> Self {
        Self {
            stride,
            blur,
            ..Self::new(OpTag::Conv2d)
        }
    }

    pub fn conv_adjoint(stride: usize, blur: bool) -> Self {
        Self {
            stride,
            blur,
            ..Self::new(OpTag::Conv2dAdjoint)
        }
    }

    pub fn phi(nu: f64) -> Self {
        Self {
            nu,
            ..Self::new(OpTag::Phi)
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let lanes: Vec<Lane> = inputs.iter().map(|t| Lane::primal((*t).clone())).collect();
        let refs: Vec<&Lane> = lanes.iter().collect();
        Ok(self.eval(&refs)?.v)
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        if n != self.tag.arity() {
            return Err(TdvError::contract(format!(
                "{} takes {} inputs, got {n}",
                self.tag,
                self.tag.arity()
            )));
        }
        Ok(())
    }

    /// Value and first two derivatives of the elementwise map.
    fn pointwise(&self, v: f64) -> (f64, f64, f64) {
        match self.tag {
            OpTag::Phi => phi(v, self.nu),
            OpTag::Square => (v * v, 2.0 * v, 2.0),
            _ => (v, 1.0, 0.0),
        }
    }

    pub(crate) fn eval(&self, inputs: &[&Lane]) -> Result<Lane> {
        self.check_arity(inputs.len())?;
        match self.tag {
            OpTag::Conv2d => {
                let (x, w) = (inputs[0], inputs[1]);
                let v = conv_forward(&x.v, &w.v, self.stride, self.blur)?;
                let t = opt_sum(
                    x.t.as_ref()
                        .map(|xt| conv_forward(xt, &w.v, self.stride, self.blur))
                        .transpose()?,
                    w.t.as_ref()
                        .map(|wt| conv_forward(&x.v, wt, self.stride, self.blur))
                        .transpose()?,
                );
                Ok(Lane { v, t })
            }
            OpTag::Conv2dAdjoint => {
                let (y, w) = (inputs[0], inputs[1]);
                let v = conv_adjoint(&y.v, &w.v, self.stride, self.blur)?;
                let t = opt_sum(
                    y.t.as_ref()
                        .map(|yt| conv_adjoint(yt, &w.v, self.stride, self.blur))
                        .transpose()?,
                    w.t.as_ref()
                        .map(|wt| conv_adjoint(&y.v, wt, self.stride, self.blur))
                        .transpose()?,
                );
                Ok(Lane { v, t })
            }
            OpTag::Phi | OpTag::Square | OpTag::Identity => {
                let x = inputs[0];
                let v = x.v.map(|u| self.pointwise(u).0);
                let t = x
                    .t
                    .as_ref()
                    .map(|xt| x.v.zip_map(xt, |u, du| self.pointwise(u).1 * du));
                Ok(Lane { v, t })
            }
            OpTag::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                a.v.check_same_shape(&b.v, "add")?;
                Ok(Lane {
                    v: &a.v + &b.v,
                    t: opt_sum(a.t.clone(), b.t.clone()),
                })
            }
            OpTag::ConcatFuse => {
                let cat = concat_lanes(inputs[0], inputs[1])?;
                Primitive::conv(1, false).eval(&[&cat, inputs[2]])
            }
        }
    }

    /// Reverse-mode rule. Returns one cotangent per input; entries whose
    /// `need` flag is false are skipped (`None`).
    pub(crate) fn pullback(
        &self,
        inputs: &[&Lane],
        cot: &Lane,
        need: &[bool],
    ) -> Result<Vec<Option<Lane>>> {
        self.check_arity(inputs.len())?;
        match self.tag {
            OpTag::Conv2d => {
                let (x, w) = (inputs[0], inputs[1]);
                let (s, bl) = (self.stride, self.blur);
                let dx = if need[0] {
                    let v = conv_adjoint(&cot.v, &w.v, s, bl)?;
                    let t = opt_sum(
                        cot.t.as_ref().map(|ct| conv_adjoint(ct, &w.v, s, bl)).transpose()?,
                        w.t.as_ref().map(|wt| conv_adjoint(&cot.v, wt, s, bl)).transpose()?,
                    );
                    Some(Lane { v, t })
                } else {
                    None
                };
                let dw = if need[1] {
                    let ks = w.v.shape();
                    let v = conv_kernel_grad(&x.v, &cot.v, ks, s, bl)?;
                    let t = opt_sum(
                        x.t.as_ref().map(|xt| conv_kernel_grad(xt, &cot.v, ks, s, bl)).transpose()?,
                        cot.t.as_ref().map(|ct| conv_kernel_grad(&x.v, ct, ks, s, bl)).transpose()?,
                    );
                    Some(Lane { v, t })
                } else {
                    None
                };
                Ok(vec![dx, dw])
            }
            OpTag::Conv2dAdjoint => {
                let (y, w) = (inputs[0], inputs[1]);
                let (s, bl) = (self.stride, self.blur);
                let dy = if need[0] {
                    let v = conv_forward(&cot.v, &w.v, s, bl)?;
                    let t = opt_sum(
                        cot.t.as_ref().map(|ct| conv_forward(ct, &w.v, s, bl)).transpose()?,
                        w.t.as_ref().map(|wt| conv_forward(&cot.v, wt, s, bl)).transpose()?,
                    );
                    Some(Lane { v, t })
                } else {
                    None
                };
                let dw = if need[1] {
                    let ks = w.v.shape();
                    let v = conv_kernel_grad(&cot.v, &y.v, ks, s, bl)?;
                    let t = opt_sum(
                        cot.t.as_ref().map(|ct| conv_kernel_grad(ct, &y.v, ks, s, bl)).transpose()?,
                        y.t.as_ref().map(|yt| conv_kernel_grad(&cot.v, yt, ks, s, bl)).transpose()?,
                    );
                    Some(Lane { v, t })
                } else {
                    None
                };
                Ok(vec![dy, dw])
            }
            OpTag::Phi | OpTag::Square | OpTag::Identity => {
                if !need[0] {
                    return Ok(vec![None]);
                }
                let x = inputs[0];
                x.v.check_same_shape(&cot.v, "pointwise cotangent")?;
                let n = x.v.len();
                let mut v = Tensor::zeros(x.v.shape());
                let want_t = x.t.is_some() || cot.t.is_some();
                let mut t = if want_t { Some(Tensor::zeros(x.v.shape())) } else { None };
                let xv = x.v.data();
                let cv = cot.v.data();
                for k in 0..n {
                    let (_, d1, d2) = self.pointwise(xv[k]);
                    v.data_mut()[k] = d1 * cv[k];
                    if let Some(tt) = t.as_mut() {
                        let mut acc = 0.0;
                        if let Some(ct) = &cot.t {
                            acc += d1 * ct.data()[k];
                        }
                        if let Some(xt) = &x.t {
                            acc += d2 * xt.data()[k] * cv[k];
                        }
                        tt.data_mut()[k] = acc;
                    }
                }
                Ok(vec![Some(Lane { v, t })])
            }
            OpTag::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                a.v.check_same_shape(&cot.v, "add cotangent")?;
                b.v.check_same_shape(&cot.v, "add cotangent")?;
                Ok(vec![
                    need[0].then(|| cot.clone()),
                    need[1].then(|| cot.clone()),
                ])
            }
            OpTag::ConcatFuse => {
                let (a, b) = (inputs[0], inputs[1]);
                let cat = concat_lanes(a, b)?;
                let mut grads = Primitive::conv(1, false).pullback(
                    &[&cat, inputs[2]],
                    cot,
                    &[need[0] || need[1], need[2]],
                )?;
                let dw = grads.pop().flatten();
                let (da, db) = match grads.pop().flatten() {
                    Some(dcat) => {
                        let (av, bv) = dcat.v.split_channels(a.v.channels())?;
                        let (at, bt) = match dcat.t {
                            Some(t) => {
                                let (at, bt) = t.split_channels(a.v.channels())?;
                                (Some(at), Some(bt))
                            }
                            None => (None, None),
                        };
                        (
                            need[0].then_some(Lane { v: av, t: at }),
                            need[1].then_some(Lane { v: bv, t: bt }),
                        )
                    }
                    None => (None, None),
                };
                Ok(vec![da, db, dw])
            }
        }
    }
}

fn opt_sum(a: Option<Tensor>, b: Option<Tensor>) -> Option<Tensor> {
    match (a, b) {
        (Some(mut a), Some(b)) => {
            a += &b;
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    }
}

fn concat_lanes(a: &Lane, b: &Lane) -> Result<Lane> {
    let v = Tensor::concat_channels(&a.v, &b.v)?;
    let t = if a.t.is_some() || b.t.is_some() {
        let at = a.t.clone().unwrap_or_else(|| a.v.zeros_like());
        let bt = b.t.clone().unwrap_or_else(|| b.v.zeros_like());
        Some(Tensor::concat_channels(&at, &bt)?)
    } else {
        None
    };
    Ok(Lane { v, t })
}

/// Value with an optional tangent; the working carrier of the graph evaluator.
#[derive(Clone, Debug)]
pub(crate) struct Lane {
    pub(crate) v: Tensor,
    pub(crate) t: Option<Tensor>,
}

impl Lane {
    pub(crate) fn primal(v: Tensor) -> Self {
        Self { v, t: None }
    }

    pub(crate) fn accumulate(&mut self, other: Lane) {
        self.v += &other.v;
        self.t = opt_sum(self.t.take(), other.t);
    }
}

/// Primal value paired with a tangent of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub primal: Tensor,
    pub tangent: Tensor,
}

impl Dual {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        primal.check_same_shape(&tangent, "dual tangent")?;
        Ok(Self { primal, tangent })
    }

    /// Dual with zero tangent.
    pub fn constant(primal: Tensor) -> Self {
        let tangent = primal.zeros_like();
        Self { primal, tangent }
    }
}

/// Vector-Jacobian product of `prim` at `inputs`: one cotangent per input.
pub fn vjp(prim: &Primitive, inputs: &[&Tensor], cotangent: &Tensor) -> Result<Vec<Tensor>> {
    prim.check_arity(inputs.len())?;
    let lanes: Vec<Lane> = inputs.iter().map(|t| Lane::primal((*t).clone())).collect();
    let refs: Vec<&Lane> = lanes.iter().collect();
    let out = prim.eval(&refs)?;
    cotangent.check_same_shape(&out.v, "vjp cotangent")?;
    let need = vec![true; inputs.len()];
    let grads = prim.pullback(&refs, &Lane::primal(cotangent.clone()), &need)?;
    Ok(grads
        .into_iter()
        .zip(inputs)
        .map(|(g, x)| g.map(|l| l.v).unwrap_or_else(|| x.zeros_like()))
        .collect())
}

/// Jacobian-vector product: pushes every input tangent through `prim`.
pub fn jvp(prim: &Primitive, inputs: &[Dual]) -> Result<Dual> {
    let lanes: Vec<Lane> = inputs
        .iter()
        .map(|d| Lane {
            v: d.primal.clone(),
            t: Some(d.tangent.clone()),
        })
        .collect();
    let refs: Vec<&Lane> = lanes.iter().collect();
    let out = prim.eval(&refs)?;
    let tangent = out.t.unwrap_or_else(|| out.v.zeros_like());
    Ok(Dual {
        primal: out.v,
        tangent,
    })
}

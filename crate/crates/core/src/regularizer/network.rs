//! Graph construction for the TDV network and its derivative queries.

use super::graph::Graph;
use super::{MacroParams, TdvParams};
use crate::error::{Result, TdvError};
use crate::tensor::diff::Lane;
use crate::tensor::{OpTag, Primitive, Tensor};

/// Parameter slots per macro-block in canonical order.
const MACRO_SLOTS: usize = 16;

struct Builder {
    g: Graph,
    nu: f64,
}

struct MacroNodes {
    out: usize,
    a2: usize,
    a3: usize,
}

impl Builder {
    fn new(nu: f64) -> Self {
        Self { g: Graph::new(), nu }
    }

    fn conv(&mut self, x: usize, slot: usize, stride: usize, blur: bool) -> usize {
        let p = self.g.param(slot);
        self.g.apply(Primitive::conv(stride, blur), &[x, p])
    }

    fn conv_t(&mut self, y: usize, slot: usize) -> usize {
        let p = self.g.param(slot);
        self.g.apply(Primitive::conv_adjoint(2, true), &[y, p])
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        self.g.apply(Primitive::new(OpTag::Add), &[a, b])
    }

    fn micro(&mut self, x: usize, k1: usize, k2: usize) -> usize {
        let u = self.conv(x, k1, 1, false);
        let h = self.g.apply(Primitive::phi(self.nu), &[u]);
        let v = self.conv(h, k2, 1, false);
        self.add(x, v)
    }

    fn fuse(&mut self, up: usize, skip: usize, slot: usize) -> usize {
        let p = self.g.param(slot);
        self.g.apply(Primitive::new(OpTag::ConcatFuse), &[up, skip, p])
    }

    /// Three-scale U-shaped block. `base` is the slot of its first kernel.
    fn macro_block(&mut self, in1: usize, in2: Option<usize>, in3: Option<usize>, base: usize) -> MacroNodes {
        let a1 = self.micro(in1, base, base + 1);
        let mut d1 = self.conv(a1, base + 10, 2, true);
        if let Some(s) = in2 {
            d1 = self.add(d1, s);
        }
        let a2 = self.micro(d1, base + 2, base + 3);
        let mut d2 = self.conv(a2, base + 11, 2, true);
        if let Some(s) = in3 {
            d2 = self.add(d2, s);
        }
        let a3 = self.micro(d2, base + 4, base + 5);
        let up2 = self.conv_t(a3, base + 13);
        let u2 = self.fuse(up2, a2, base + 15);
        let a4 = self.micro(u2, base + 6, base + 7);
        let up1 = self.conv_t(a4, base + 12);
        let u1 = self.fuse(up1, a1, base + 14);
        let out = self.micro(u1, base + 8, base + 9);
        MacroNodes { out, a2, a3 }
    }
}

/// Graph of `r(x, θ)` with input slot 0 and parameter slots in canonical order.
fn tdv_graph(blocks: usize, nu: f64) -> (Graph, usize) {
    let mut b = Builder::new(nu);
    let x = b.g.input(0);
    let mut h = b.conv(x, 0, 1, false);
    let mut skips: Option<(usize, usize)> = None;
    for i in 0..blocks {
        let nodes = b.macro_block(h, skips.map(|s| s.0), skips.map(|s| s.1), 1 + MACRO_SLOTS * i);
        h = nodes.out;
        skips = Some((nodes.a2, nodes.a3));
    }
    let r = b.conv(h, 1 + MACRO_SLOTS * blocks, 1, false);
    (b.g, r)
}

fn check_input(x: &Tensor, params: &TdvParams) -> Result<()> {
    let [n, c, h, w] = x.shape();
    if c != params.channels {
        return Err(TdvError::shape(format!(
            "image has {c} channels, regularizer expects {}",
            params.channels
        )));
    }
    if n == 0 || h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(TdvError::shape(format!(
            "spatial size {h}x{w} must be a nonzero multiple of 4 (use the padded variants)"
        )));
    }
    Ok(())
}

/// Pixelwise energy map `r(x, θ)` of shape `(B, 1, H, W)`.
pub fn tdv_r(x: &Tensor, params: &TdvParams) -> Result<Tensor> {
    check_input(x, params)?;
    let (g, r) = tdv_graph(params.macro_count(), params.nu);
    let mut values = g.forward(&[Lane::primal(x.clone())], &params.tensors())?;
    Ok(values.swap_remove(r).v)
}

/// `R(x, θ)` summed over the batch.
pub fn tdv_energy(x: &Tensor, params: &TdvParams) -> Result<f64> {
    Ok(tdv_r(x, params)?.sum())
}

pub fn tdv_grad(x: &Tensor, params: &TdvParams) -> Result<Tensor> {
    Ok(tdv_derivatives(x, params, None, false)?.grad)
}

/// Exact Hessian-vector product `∇²ₓR(x, θ) v`.
pub fn tdv_hvp(x: &Tensor, params: &TdvParams, v: &Tensor) -> Result<Tensor> {
    Ok(tdv_derivatives(x, params, Some(v), false)?
        .hvp
        .expect("direction was supplied"))
}

/// Everything one forward-over-reverse sweep produces.
#[derive(Clone, Debug)]
pub struct Derivatives {
    /// `R(x, θ)` summed over the batch.
    pub energy: f64,
    /// `R` of each batch entry.
    pub energies: Vec<f64>,
    pub grad: Tensor,
    /// `∇²ₓR v`, when a direction `v` was given.
    pub hvp: Option<Tensor>,
    /// `∇_θR`, when requested.
    pub param_grad: Option<TdvParams>,
    /// `∇_θ⟨∇ₓR, v⟩`, when both a direction and parameter gradients were requested.
    pub mixed: Option<TdvParams>,
}

/// Single forward-over-reverse pass. With a direction `v`, the tangent of the
/// input cotangent is the Hessian-vector product and the tangent of the
/// parameter cotangent is the mixed second derivative `∇_θ⟨∇ₓR, v⟩`.
pub fn tdv_derivatives(
    x: &Tensor,
    params: &TdvParams,
    direction: Option<&Tensor>,
    with_params: bool,
) -> Result<Derivatives> {
    check_input(x, params)?;
    if let Some(v) = direction {
        x.check_same_shape(v, "hvp direction")?;
    }
    let (g, r) = tdv_graph(params.macro_count(), params.nu);
    let input = Lane {
        v: x.clone(),
        t: direction.cloned(),
    };
    let values = g.forward(&[input], &params.tensors())?;
    let rmap = &values[r].v;
    let energies: Vec<f64> = (0..x.batch()).map(|b| rmap.plane(b, 0).iter().sum()).collect();
    let seed = Lane::primal(Tensor::full(rmap.shape(), 1.0));
    let cots = g.backward(&values, vec![(r, seed)], with_params)?;
    let gx = cots.inputs[0]
        .clone()
        .unwrap_or_else(|| Lane::primal(x.zeros_like()));
    let hvp = direction.map(|_| gx.t.clone().unwrap_or_else(|| x.zeros_like()));
    let (param_grad, mixed) = if with_params {
        let mut pg = params.zeros_like();
        let mut mx = direction.map(|_| params.zeros_like());
        for (slot, lane) in cots.params.into_iter().enumerate() {
            let Some(lane) = lane else { continue };
            *pg.tensors_mut()[slot] = lane.v;
            if let (Some(m), Some(t)) = (mx.as_mut(), lane.t) {
                *m.tensors_mut()[slot] = t;
            }
        }
        (Some(pg), mx)
    } else {
        (None, None)
    };
    Ok(Derivatives {
        energy: energies.iter().sum(),
        energies,
        grad: gx.v,
        hvp,
        param_grad,
        mixed,
    })
}

/// Smallest multiples of 4 that contain `h x w`.
pub fn padded_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(4) * 4, w.div_ceil(4) * 4)
}

fn pad(x: &Tensor) -> Result<Tensor> {
    let (hp, wp) = padded_dims(x.height(), x.width());
    if (hp, wp) == (x.height(), x.width()) {
        Ok(x.clone())
    } else {
        x.pad_replicate(hp, wp)
    }
}

fn unpad(g: Tensor, h: usize, w: usize) -> Result<Tensor> {
    if (g.height(), g.width()) == (h, w) {
        Ok(g)
    } else {
        g.pad_replicate_adjoint(h, w)
    }
}

/// Derivatives of `x ↦ R(P x)` where `P` replicate-pads to the next multiple
/// of 4. Gradients pass through the exact adjoint of `P`, so they remain the
/// true derivatives of the padded energy.
pub fn tdv_derivatives_padded(
    x: &Tensor,
    params: &TdvParams,
    direction: Option<&Tensor>,
    with_params: bool,
) -> Result<Derivatives> {
    let (h, w) = (x.height(), x.width());
    let xp = pad(x)?;
    let vp = direction.map(pad).transpose()?;
    let d = tdv_derivatives(&xp, params, vp.as_ref(), with_params)?;
    Ok(Derivatives {
        grad: unpad(d.grad, h, w)?,
        hvp: d.hvp.map(|t| unpad(t, h, w)).transpose()?,
        ..d
    })
}

pub fn tdv_energy_padded(x: &Tensor, params: &TdvParams) -> Result<f64> {
    tdv_energy(&pad(x)?, params)
}

pub fn tdv_grad_padded(x: &Tensor, params: &TdvParams) -> Result<Tensor> {
    Ok(tdv_derivatives_padded(x, params, None, false)?.grad)
}

/// Energy map of the padded image, cropped to the original size.
pub fn tdv_r_padded(x: &Tensor, params: &TdvParams) -> Result<Tensor> {
    tdv_r(&pad(x)?, params)?.crop(x.height(), x.width())
}

/// `x + K₂ φ(K₁ x)` for `3x3` stride-1 kernels.
pub fn micro_block(x: &Tensor, k1: &Tensor, k2: &Tensor, nu: f64) -> Result<Tensor> {
    let (g, out) = micro_graph(nu);
    let mut values = g.forward(&[Lane::primal(x.clone())], &[k1, k2])?;
    Ok(values.swap_remove(out).v)
}

/// Pullback of `cotangent` through [`micro_block`] with respect to `x`.
pub fn micro_block_vjp(x: &Tensor, k1: &Tensor, k2: &Tensor, nu: f64, cotangent: &Tensor) -> Result<Tensor> {
    let (g, out) = micro_graph(nu);
    let values = g.forward(&[Lane::primal(x.clone())], &[k1, k2])?;
    cotangent.check_same_shape(&values[out].v, "micro-block cotangent")?;
    let cots = g.backward(&values, vec![(out, Lane::primal(cotangent.clone()))], false)?;
    Ok(cots.inputs[0].clone().map(|l| l.v).unwrap_or_else(|| x.zeros_like()))
}

fn micro_graph(nu: f64) -> (Graph, usize) {
    let mut b = Builder::new(nu);
    let x = b.g.input(0);
    let out = b.micro(x, 0, 1);
    (b.g, out)
}

/// Outputs of one macro-block: the finest-scale result and the two coarse
/// encoder features handed to the next block.
#[derive(Clone, Debug)]
pub struct MacroOutput {
    pub output: Tensor,
    pub skip2: Tensor,
    pub skip3: Tensor,
}

fn macro_graph(has_skips: bool, nu: f64) -> (Graph, MacroNodes) {
    let mut b = Builder::new(nu);
    let in1 = b.g.input(0);
    let (in2, in3) = if has_skips {
        (Some(b.g.input(1)), Some(b.g.input(2)))
    } else {
        (None, None)
    };
    let nodes = b.macro_block(in1, in2, in3, 0);
    (b.g, nodes)
}

fn macro_inputs(in1: &Tensor, skips: Option<(&Tensor, &Tensor)>) -> Vec<Lane> {
    let mut lanes = vec![Lane::primal(in1.clone())];
    if let Some((a, b)) = skips {
        lanes.push(Lane::primal(a.clone()));
        lanes.push(Lane::primal(b.clone()));
    }
    lanes
}

/// Evaluate one macro-block on `in1` (scale 1) and optional skip inputs at
/// scales 2 and 3.
pub fn macro_block(
    in1: &Tensor,
    skips: Option<(&Tensor, &Tensor)>,
    block: &MacroParams,
    nu: f64,
) -> Result<MacroOutput> {
    let (g, nodes) = macro_graph(skips.is_some(), nu);
    let values = g.forward(&macro_inputs(in1, skips), &block.tensors())?;
    Ok(MacroOutput {
        output: values[nodes.out].v.clone(),
        skip2: values[nodes.a2].v.clone(),
        skip3: values[nodes.a3].v.clone(),
    })
}

/// Pullback of a cotangent on the block output to `in1` and, when present,
/// to the two skip inputs.
pub fn macro_block_vjp(
    in1: &Tensor,
    skips: Option<(&Tensor, &Tensor)>,
    block: &MacroParams,
    nu: f64,
    cotangent: &Tensor,
) -> Result<Vec<Tensor>> {
    let inputs = macro_inputs(in1, skips);
    let (g, nodes) = macro_graph(skips.is_some(), nu);
    let values = g.forward(&inputs, &block.tensors())?;
    cotangent.check_same_shape(&values[nodes.out].v, "macro-block cotangent")?;
    let cots = g.backward(&values, vec![(nodes.out, Lane::primal(cotangent.clone()))], false)?;
    Ok(cots
        .inputs
        .into_iter()
        .zip(&inputs)
        .map(|(c, x)| c.map(|l| l.v).unwrap_or_else(|| x.v.zeros_like()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::init_params;

    fn sample(h: usize, w: usize) -> Tensor {
        Tensor::from_fn([1, 1, h, w], |[_, _, i, j]| (0.7 * i as f64 + 0.3 * j as f64).sin() * 0.5 + 0.5)
    }

    #[test]
    fn r_map_has_image_shape() {
        let p = init_params(1, 1, 2, 1, 9.0);
        let r = tdv_r(&sample(8, 12), &p).unwrap();
        assert_eq!(r.shape(), [1, 1, 8, 12]);
    }

    #[test]
    fn rejects_sizes_that_do_not_divide_by_four() {
        let p = init_params(1, 1, 2, 1, 9.0);
        assert!(matches!(tdv_r(&sample(6, 8), &p), Err(TdvError::Shape(_))));
        assert!(tdv_r_padded(&sample(6, 7), &p).is_ok());
    }

    #[test]
    fn energy_is_invariant_to_gray_shift() {
        let p = init_params(5, 1, 3, 2, 9.0);
        let x = sample(8, 8);
        let e0 = tdv_energy(&x, &p).unwrap();
        let e1 = tdv_energy(&x.add_scalar(0.37), &p).unwrap();
        assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1.0));
    }

    #[test]
    fn batch_energies_add_up() {
        let p = init_params(2, 1, 2, 1, 9.0);
        let a = sample(4, 8);
        let b = a.map(|v| 1.0 - v * v);
        let both = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        let d = tdv_derivatives(&both, &p, None, false).unwrap();
        assert!((d.energies[0] - tdv_energy(&a, &p).unwrap()).abs() < 1e-12);
        assert!((d.energies[1] - tdv_energy(&b, &p).unwrap()).abs() < 1e-12);
    }
}

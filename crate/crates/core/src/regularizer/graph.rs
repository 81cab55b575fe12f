//! Minimal static expression graph over registered primitives.
//!
//! Nodes are stored in topological order (arguments always precede their
//! users), so the forward pass is a single sweep and the reverse pass is the
//! same sweep backwards.

use crate::error::Result;
use crate::tensor::diff::Lane;
use crate::tensor::{Primitive, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum Node {
    Input(usize),
    Param(usize),
    Apply { prim: Primitive, args: Vec<usize> },
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Graph {
    nodes: Vec<Node>,
    n_inputs: usize,
    n_params: usize,
}

/// Reverse-pass results per input slot and parameter slot.
pub(crate) struct Cotangents {
    pub(crate) inputs: Vec<Option<Lane>>,
    pub(crate) params: Vec<Option<Lane>>,
}

impl Graph {
    pub(crate) fn new() -> Self {
        Self::default()
    }

    pub(crate) fn input(&mut self, slot: usize) -> usize {
        self.n_inputs = self.n_inputs.max(slot + 1);
        self.push(Node::Input(slot))
    }

    pub(crate) fn param(&mut self, slot: usize) -> usize {
        self.n_params = self.n_params.max(slot + 1);
        self.push(Node::Param(slot))
    }

    pub(crate) fn apply(&mut self, prim: Primitive, args: &[usize]) -> usize {
        debug_assert!(args.iter().all(|&a| a < self.nodes.len()));
        self.push(Node::Apply {
            prim,
            args: args.to_vec(),
        })
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Evaluate every node. Input lanes may carry tangents; parameters are
    /// treated as constants of the forward sweep.
    pub(crate) fn forward(&self, inputs: &[Lane], params: &[&Tensor]) -> Result<Vec<Lane>> {
        let mut values: Vec<Lane> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let lane = match node {
                Node::Input(s) => inputs[*s].clone(),
                Node::Param(s) => Lane::primal(params[*s].clone()),
                Node::Apply { prim, args } => {
                    let refs: Vec<&Lane> = args.iter().map(|&a| &values[a]).collect();
                    prim.eval(&refs)?
                }
            };
            values.push(lane);
        }
        Ok(values)
    }

    /// Reverse sweep from the given seeds. Parameter cotangents are only
    /// formed when `want_params` is set.
    pub(crate) fn backward(
        &self,
        values: &[Lane],
        seeds: Vec<(usize, Lane)>,
        want_params: bool,
    ) -> Result<Cotangents> {
        let mut cots: Vec<Option<Lane>> = vec![None; self.nodes.len()];
        for (node, lane) in seeds {
            merge(&mut cots[node], lane);
        }
        let mut out = Cotangents {
            inputs: vec![None; self.n_inputs],
            params: vec![None; self.n_params],
        };
        for idx in (0..self.nodes.len()).rev() {
            let Some(cot) = cots[idx].take() else {
                continue;
            };
            match &self.nodes[idx] {
                Node::Input(s) => merge(&mut out.inputs[*s], cot),
                Node::Param(s) => merge(&mut out.params[*s], cot),
                Node::Apply { prim, args } => {
                    let need: Vec<bool> = args
                        .iter()
                        .map(|&a| want_params || !matches!(self.nodes[a], Node::Param(_)))
                        .collect();
                    let refs: Vec<&Lane> = args.iter().map(|&a| &values[a]).collect();
                    let grads = prim.pullback(&refs, &cot, &need)?;
                    for (&a, g) in args.iter().zip(grads) {
                        if let Some(g) = g {
                            merge(&mut cots[a], g);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

fn merge(slot: &mut Option<Lane>, lane: Lane) {
    match slot {
        Some(c) => c.accumulate(lane),
        None => *slot = Some(lane),
    }
}

//! Cell search space: candidate operations, softmax relaxation, mixed-op
//! evaluation of the cell DAG, and argmax discretization into a genotype.
//!
//! Nodes are numbered `0, 1` (inputs) and `2..=5` (intermediate). The output
//! node concatenates the intermediates along channels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{concat_channels, conv3d_same, softmax, Kernel3Spec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Zero,
    Identity,
    Dil3x3x3,
    Conv1x1x1,
    Conv3x3x3,
    Conv1x3x3,
    Conv3x1x1,
}

pub const NUM_OPS: usize = 7;

impl OpKind {
    /// Serialization depends on this order.
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::Zero,
        OpKind::Identity,
        OpKind::Dil3x3x3,
        OpKind::Conv1x1x1,
        OpKind::Conv3x3x3,
        OpKind::Conv1x3x3,
        OpKind::Conv3x1x1,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Identity => "identity",
            OpKind::Dil3x3x3 => "dil_3x3x3",
            OpKind::Conv1x1x1 => "conv_1x1x1",
            OpKind::Conv3x3x3 => "conv_3x3x3",
            OpKind::Conv1x3x3 => "conv_1x3x3",
            OpKind::Conv3x1x1 => "conv_3x1x1",
        }
    }

    /// Kernel extent and dilation, `None` for parameter-free ops.
    pub fn conv_geometry(self) -> Option<([usize; 3], [usize; 3])> {
        match self {
            OpKind::Zero | OpKind::Identity => None,
            OpKind::Dil3x3x3 => Some(([3, 3, 3], [2, 2, 2])),
            OpKind::Conv1x1x1 => Some(([1, 1, 1], [1, 1, 1])),
            OpKind::Conv3x3x3 => Some(([3, 3, 3], [1, 1, 1])),
            OpKind::Conv1x3x3 => Some(([1, 3, 3], [1, 1, 1])),
            OpKind::Conv3x1x1 => Some(([3, 1, 1], [1, 1, 1])),
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown operation {s:?}"))
    }
}

/// Two inputs, four intermediates, one output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CellSpec;

impl CellSpec {
    pub const NUM_INPUTS: usize = 2;
    pub const NUM_INTERMEDIATE: usize = 4;
    pub const NUM_NODES: usize = Self::NUM_INPUTS + Self::NUM_INTERMEDIATE + 1;
    pub const NUM_EDGES: usize = 14;

    /// `(from, to)` pairs ordered by target, then source.
    pub fn edges() -> Vec<(usize, usize)> {
        Self::intermediate_nodes()
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .collect()
    }

    pub fn intermediate_nodes() -> std::ops::Range<usize> {
        Self::NUM_INPUTS..Self::NUM_INPUTS + Self::NUM_INTERMEDIATE
    }

    pub fn edge_index(from: usize, to: usize) -> Option<usize> {
        if !Self::intermediate_nodes().contains(&to) || from >= to {
            return None;
        }
        // edges into node j start after 2 + 3 + ... + (j - 1)
        let before: usize = (Self::NUM_INPUTS..to).sum();
        Some(before + from)
    }
}

/// One logit per candidate op on each cell edge, in [`CellSpec::edges`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrix {
    logits: Vec<[f32; NUM_OPS]>,
}

impl AlphaMatrix {
    pub fn new(logits: Vec<[f32; NUM_OPS]>) -> Result<Self> {
        if logits.len() != CellSpec::NUM_EDGES {
            return Err(Error::invalid(
                "AlphaMatrix",
                format!("expected {} edges, got {}", CellSpec::NUM_EDGES, logits.len()),
            ));
        }
        if let Some(e) = logits.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(
                "AlphaMatrix",
                format!("edge {e} has a non-finite logit"),
            ));
        }
        Ok(AlphaMatrix { logits })
    }

    pub fn uniform(value: f32) -> Self {
        AlphaMatrix {
            logits: vec![[value; NUM_OPS]; CellSpec::NUM_EDGES],
        }
    }

    /// `strength` on `op`, zero elsewhere, on every edge.
    pub fn one_hot(op: OpKind, strength: f32) -> Self {
        let mut row = [0.0; NUM_OPS];
        row[op.ordinal()] = strength;
        AlphaMatrix {
            logits: vec![row; CellSpec::NUM_EDGES],
        }
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&[f32; NUM_OPS]> {
        CellSpec::edge_index(from, to).map(|e| &self.logits[e])
    }

    pub fn rows(&self) -> &[[f32; NUM_OPS]] {
        &self.logits
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<AlphaMatrix> {
        AlphaMatrix::new(self.logits.iter().map(|row| row.map(&f)).collect())
    }
}

/// Per-edge softmax over the candidate ops.
pub fn relax(alpha: &AlphaMatrix) -> Vec<[f32; NUM_OPS]> {
    alpha
        .rows()
        .iter()
        .map(|row| softmax(row).try_into().expect("softmax preserves length"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateOp {
    Zero,
    Identity,
    Conv(Kernel3Spec),
}

impl CandidateOp {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            CandidateOp::Zero => Ok(x.zeros_like()),
            CandidateOp::Identity => Ok(x.clone()),
            CandidateOp::Conv(k) => {
                let y = conv3d_same(x, k)?;
                x.check_same_shape(&y, "candidate op")?;
                Ok(y)
            }
        }
    }
}

/// The seven concrete operations of one edge, indexed by [`OpKind`] ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOps {
    ops: Vec<CandidateOp>,
}

impl EdgeOps {
    pub fn new(ops: Vec<CandidateOp>) -> Result<Self> {
        if ops.len() != NUM_OPS {
            return Err(Error::invalid(
                "EdgeOps",
                format!("expected {NUM_OPS} ops, got {}", ops.len()),
            ));
        }
        Ok(EdgeOps { ops })
    }

    /// Depthwise conv ops with mean-filter taps (weight 1 for 1×1×1), zero
    /// bias; dilated ops use dilation 2.
    pub fn reference(channels: usize) -> Self {
        let ops = OpKind::ALL
            .iter()
            .map(|op| match (op, op.conv_geometry()) {
                (OpKind::Zero, _) => CandidateOp::Zero,
                (OpKind::Identity, _) => CandidateOp::Identity,
                (_, Some((extent, dilation))) => {
                    CandidateOp::Conv(Kernel3Spec::depthwise_box(channels, extent, dilation).expect("odd extents"))
                }
                (_, None) => unreachable!("every conv op has geometry"),
            })
            .collect();
        EdgeOps { ops }
    }

    pub fn op(&self, kind: OpKind) -> &CandidateOp {
        &self.ops[kind.ordinal()]
    }
}

/// `Σ_o η_o · o(x)`. Ops with weight exactly zero are skipped.
pub fn mixed_edge_eval(ops: &EdgeOps, eta: &[f32], x: &Tensor) -> Result<Tensor> {
    if eta.len() != NUM_OPS {
        return Err(Error::invalid(
            "mixed_edge_eval",
            format!("expected {NUM_OPS} weights, got {}", eta.len()),
        ));
    }
    let mut acc = vec![0.0f64; x.numel()];
    for (kind, &w) in OpKind::ALL.iter().zip(eta) {
        if w == 0.0 || *kind == OpKind::Zero {
            continue;
        }
        let y = ops.op(*kind).apply(x)?;
        let w = w as f64;
        for (a, &v) in acc.iter_mut().zip(y.data()) {
            *a += w * v as f64;
        }
    }
    Tensor::new(x.shape().clone(), acc.into_iter().map(|a| a as f32).collect())
}

/// A cell with concrete parameters for every edge's candidate ops.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInstance {
    channels: usize,
    edges: Vec<EdgeOps>,
}

impl CellInstance {
    pub fn new(channels: usize, edges: Vec<EdgeOps>) -> Result<Self> {
        if edges.len() != CellSpec::NUM_EDGES {
            return Err(Error::invalid(
                "CellInstance",
                format!("expected {} edges, got {}", CellSpec::NUM_EDGES, edges.len()),
            ));
        }
        Ok(CellInstance { channels, edges })
    }

    pub fn reference(channels: usize) -> Self {
        CellInstance {
            channels,
            edges: vec![EdgeOps::reference(channels); CellSpec::NUM_EDGES],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

/// All node values `m_0..=m_5` of the relaxed cell.
pub fn eval_cell_nodes(cell: &CellInstance, alpha: &AlphaMatrix, in0: &Tensor, in1: &Tensor) -> Result<Vec<Tensor>> {
    in0.check_same_shape(in1, "eval_cell")?;
    match in0.shape().cthw() {
        Some((c, ..)) if c == cell.channels => {}
        _ => {
            return Err(Error::invalid(
                "eval_cell",
                format!("inputs must be [{}, T, H, W], got {}", cell.channels, in0.shape()),
            ))
        }
    }
    let eta = relax(alpha);
    let mut nodes = vec![in0.clone(), in1.clone()];
    for j in CellSpec::intermediate_nodes() {
        let mut acc = vec![0.0f64; in0.numel()];
        for (i, node) in nodes.iter().enumerate().take(j) {
            let e = CellSpec::edge_index(i, j).expect("i < j is an edge");
            let y = mixed_edge_eval(&cell.edges[e], &eta[e], node)?;
            for (a, &v) in acc.iter_mut().zip(y.data()) {
                *a += v as f64;
            }
        }
        nodes.push(Tensor::new(
            in0.shape().clone(),
            acc.into_iter().map(|a| a as f32).collect(),
        )?);
    }
    Ok(nodes)
}

/// Channel concatenation of the four intermediate nodes, `[4C, T, H, W]`.
pub fn eval_cell(cell: &CellInstance, alpha: &AlphaMatrix, in0: &Tensor, in1: &Tensor) -> Result<Tensor> {
    let nodes = eval_cell_nodes(cell, alpha, in0, in1)?;
    let parts: Vec<&Tensor> = nodes[CellSpec::intermediate_nodes()].iter().collect();
    concat_channels(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenotypeEdge {
    pub from: usize,
    pub op: OpKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenotypeNode {
    pub node: usize,
    pub edges: Vec<GenotypeEdge>,
}

/// Discrete cell: each intermediate node keeps `min(retain_k, node)`
/// incoming edges, each carrying one non-Zero op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genotype {
    retain_k: usize,
    nodes: Vec<GenotypeNode>,
}

pub const DEFAULT_RETAIN_K: usize = 2;

/// Largest useful `retain_k`: the in-degree of the last intermediate node.
pub const MAX_RETAIN_K: usize = CellSpec::NUM_INPUTS + CellSpec::NUM_INTERMEDIATE - 1;

fn check_retain_k(retain_k: usize) -> Result<()> {
    if retain_k == 0 || retain_k > MAX_RETAIN_K {
        return Err(Error::invalid(
            "Genotype",
            format!("retain_k {retain_k} outside 1..={MAX_RETAIN_K}"),
        ));
    }
    Ok(())
}

impl Genotype {
    pub fn new(retain_k: usize, nodes: Vec<GenotypeNode>) -> Result<Self> {
        check_retain_k(retain_k)?;
        let expected: Vec<usize> = CellSpec::intermediate_nodes().collect();
        let got: Vec<usize> = nodes.iter().map(|n| n.node).collect();
        if got != expected {
            return Err(Error::invalid(
                "Genotype",
                format!("nodes must be {expected:?} in order, got {got:?}"),
            ));
        }
        for n in &nodes {
            let want = retain_k.min(n.node);
            if n.edges.len() != want {
                return Err(Error::invalid(
                    "Genotype",
                    format!("node {} keeps {} edges, expected {want}", n.node, n.edges.len()),
                ));
            }
            let mut seen = [false; CellSpec::NUM_NODES];
            for e in &n.edges {
                if e.op == OpKind::Zero {
                    return Err(Error::invalid(
                        "Genotype",
                        format!("edge {} -> {} carries zero", e.from, n.node),
                    ));
                }
                if e.from >= n.node {
                    return Err(Error::invalid(
                        "Genotype",
                        format!("edge {} -> {} does not point forward", e.from, n.node),
                    ));
                }
                if std::mem::replace(&mut seen[e.from], true) {
                    return Err(Error::invalid(
                        "Genotype",
                        format!("node {} lists source {} twice", n.node, e.from),
                    ));
                }
            }
        }
        Ok(Genotype { retain_k, nodes })
    }

    pub fn retain_k(&self) -> usize {
        self.retain_k
    }

    pub fn nodes(&self) -> &[GenotypeNode] {
        &self.nodes
    }
}

/// Index and logit of the best non-Zero op; ties go to the lowest ordinal.
fn best_nonzero(row: &[f32; NUM_OPS]) -> (OpKind, f32) {
    let mut best = (OpKind::Identity, row[OpKind::Identity.ordinal()]);
    for &op in &OpKind::ALL[2..] {
        let v = row[op.ordinal()];
        if v > best.1 {
            best = (op, v);
        }
    }
    best
}

/// Keeps each edge's most likely non-Zero op and the `retain_k` strongest
/// incoming edges per node. Edge ties go to the lower source index.
pub fn discretize(alpha: &AlphaMatrix, retain_k: usize) -> Result<Genotype> {
    check_retain_k(retain_k)?;
    let nodes = CellSpec::intermediate_nodes()
        .map(|j| {
            let mut candidates: Vec<(usize, OpKind, f32)> = (0..j)
                .map(|i| {
                    let (op, logit) = best_nonzero(alpha.edge(i, j).expect("i < j is an edge"));
                    (i, op, logit)
                })
                .collect();
            candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            candidates.truncate(retain_k);
            candidates.sort_by_key(|c| c.0);
            GenotypeNode {
                node: j,
                edges: candidates
                    .into_iter()
                    .map(|(from, op, _)| GenotypeEdge { from, op })
                    .collect(),
            }
        })
        .collect();
    Genotype::new(retain_k, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_kind_order_and_names() {
        assert_eq!(OpKind::ALL.len(), 7);
        for (i, op) in OpKind::ALL.iter().enumerate() {
            assert_eq!(op.ordinal(), i);
            assert_eq!(op.name().parse::<OpKind>().unwrap(), *op);
        }
        assert_eq!("conv_3x3x3".parse::<OpKind>().unwrap(), OpKind::Conv3x3x3);
        assert!("conv_5x5x5".parse::<OpKind>().is_err());
    }

    #[test]
    fn cell_topology() {
        let edges = CellSpec::edges();
        assert_eq!(edges.len(), CellSpec::NUM_EDGES);
        assert_eq!(CellSpec::NUM_NODES, 7);
        for (k, &(i, j)) in edges.iter().enumerate() {
            assert!(i < j);
            assert_eq!(CellSpec::edge_index(i, j), Some(k));
        }
        assert_eq!(CellSpec::edge_index(2, 2), None);
        assert_eq!(CellSpec::edge_index(0, 1), None);
        assert_eq!(CellSpec::edge_index(0, 6), None);
    }

    #[test]
    fn relax_examples() {
        for row in relax(&AlphaMatrix::uniform(0.0)) {
            assert!(row.iter().all(|&p| (p - 1.0 / 7.0).abs() < 1e-7));
        }
        for row in relax(&AlphaMatrix::one_hot(OpKind::Conv1x3x3, 20.0)) {
            assert!((row[OpKind::Conv1x3x3.ordinal()] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn alpha_validation() {
        assert!(AlphaMatrix::new(vec![[0.0; 7]; 13]).is_err());
        let mut rows = vec![[0.0; 7]; 14];
        rows[3][2] = f32::NAN;
        assert!(AlphaMatrix::new(rows).is_err());
    }

    #[test]
    fn mixed_edge_examples() {
        let x = Tensor::from_vec([2, 2, 3, 3], (0..36).map(|i| i as f32 - 10.0).collect()).unwrap();
        let ops = EdgeOps::reference(2);
        let mut eta = [0.0f32; 7];
        eta[OpKind::Identity.ordinal()] = 1.0;
        assert_eq!(mixed_edge_eval(&ops, &eta, &x).unwrap(), x);
        let mut eta = [0.0f32; 7];
        eta[OpKind::Zero.ordinal()] = 1.0;
        assert_eq!(mixed_edge_eval(&ops, &eta, &x).unwrap(), x.zeros_like());
        let mut eta = [0.0f32; 7];
        eta[OpKind::Zero.ordinal()] = 0.5;
        eta[OpKind::Identity.ordinal()] = 0.5;
        assert_eq!(mixed_edge_eval(&ops, &eta, &x).unwrap(), x.map(|v| v / 2.0));
        assert!(mixed_edge_eval(&ops, &eta[..6], &x).is_err());
    }

    #[test]
    fn every_reference_op_preserves_shape() {
        let x = Tensor::from_vec([3, 4, 5, 5], vec![1.0; 300]).unwrap();
        let ops = EdgeOps::reference(3);
        for op in OpKind::ALL {
            assert_eq!(ops.op(op).apply(&x).unwrap().dims(), x.dims(), "{op}");
        }
    }

    #[test]
    fn identity_cell_on_unit_scalars() {
        let one = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        let cell = CellInstance::reference(1);
        let alpha = AlphaMatrix::one_hot(OpKind::Identity, 1e4);
        let nodes = eval_cell_nodes(&cell, &alpha, &one, &one).unwrap();
        let vals: Vec<f32> = nodes.iter().map(|n| n.data()[0]).collect();
        assert_eq!(vals, vec![1.0, 1.0, 2.0, 4.0, 8.0, 16.0]);
        let out = eval_cell(&cell, &alpha, &one, &one).unwrap();
        assert_eq!(out.dims(), &[4, 1, 1, 1]);
        assert_eq!(out.data(), &[2.0, 4.0, 8.0, 16.0]);
    }

    #[test]
    fn zero_cell_outputs_zeros() {
        let x = Tensor::from_vec([2, 1, 2, 2], vec![3.0; 8]).unwrap();
        let out = eval_cell(
            &CellInstance::reference(2),
            &AlphaMatrix::one_hot(OpKind::Zero, 1e4),
            &x,
            &x,
        )
        .unwrap();
        assert_eq!(out.dims(), &[8, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_cell_rejects_mismatched_inputs() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![0.0; 2]).unwrap();
        let b = Tensor::from_vec([1, 1, 2, 1], vec![0.0; 2]).unwrap();
        let cell = CellInstance::reference(1);
        assert!(eval_cell(&cell, &AlphaMatrix::uniform(0.0), &a, &b).is_err());
        assert!(eval_cell(&CellInstance::reference(2), &AlphaMatrix::uniform(0.0), &a, &a).is_err());
    }

    #[test]
    fn discretize_skips_zero() {
        let mut row = [0.0f32; 7];
        row[OpKind::Zero.ordinal()] = 100.0;
        row[OpKind::Identity.ordinal()] = 1.0;
        let g = discretize(&AlphaMatrix::new(vec![row; 14]).unwrap(), 2).unwrap();
        assert!(g
            .nodes()
            .iter()
            .flat_map(|n| &n.edges)
            .all(|e| e.op == OpKind::Identity));
    }

    #[test]
    fn discretize_tie_breaks() {
        let g = discretize(&AlphaMatrix::uniform(0.3), 2).unwrap();
        for n in g.nodes() {
            assert_eq!(
                n.edges,
                vec![
                    GenotypeEdge {
                        from: 0,
                        op: OpKind::Identity
                    },
                    GenotypeEdge {
                        from: 1,
                        op: OpKind::Identity
                    },
                ]
            );
        }
    }

    #[test]
    fn discretize_keeps_strongest_edges() {
        let mut rows = vec![[0.0f32; 7]; 14];
        rows[CellSpec::edge_index(3, 5).unwrap()][OpKind::Conv3x1x1.ordinal()] = 5.0;
        rows[CellSpec::edge_index(4, 5).unwrap()][OpKind::Dil3x3x3.ordinal()] = 4.0;
        let g = discretize(&AlphaMatrix::new(rows).unwrap(), 2).unwrap();
        assert_eq!(
            g.nodes()[3].edges,
            vec![
                GenotypeEdge {
                    from: 3,
                    op: OpKind::Conv3x1x1
                },
                GenotypeEdge {
                    from: 4,
                    op: OpKind::Dil3x3x3
                },
            ]
        );
    }

    #[test]
    fn retain_all_edges() {
        let g = discretize(&AlphaMatrix::uniform(0.0), MAX_RETAIN_K).unwrap();
        for n in g.nodes() {
            assert_eq!(n.edges.len(), n.node);
            assert_eq!(
                n.edges.iter().map(|e| e.from).collect::<Vec<_>>(),
                (0..n.node).collect::<Vec<_>>()
            );
        }
        assert!(discretize(&AlphaMatrix::uniform(0.0), 0).is_err());
        assert!(discretize(&AlphaMatrix::uniform(0.0), MAX_RETAIN_K + 1).is_err());
    }

    #[test]
    fn genotype_construction_rejects_invalid() {
        let node = |node, edges: Vec<(usize, OpKind)>| GenotypeNode {
            node,
            edges: edges.into_iter().map(|(from, op)| GenotypeEdge { from, op }).collect(),
        };
        let good = || {
            vec![
                node(2, vec![(0, OpKind::Identity), (1, OpKind::Identity)]),
                node(3, vec![(0, OpKind::Identity), (2, OpKind::Conv1x1x1)]),
                node(4, vec![(1, OpKind::Identity), (3, OpKind::Conv3x3x3)]),
                node(5, vec![(0, OpKind::Identity), (4, OpKind::Dil3x3x3)]),
            ]
        };
        assert!(Genotype::new(2, good()).is_ok());
        let mut zero = good();
        zero[1].edges[0].op = OpKind::Zero;
        assert!(Genotype::new(2, zero).is_err());
        let mut backwards = good();
        backwards[0].edges[1].from = 2;
        assert!(Genotype::new(2, backwards).is_err());
        let mut dup = good();
        dup[2].edges[1].from = 1;
        assert!(Genotype::new(2, dup).is_err());
        let mut empty = good();
        empty[3].edges.clear();
        assert!(Genotype::new(2, empty).is_err());
        assert!(Genotype::new(2, good()[..3].to_vec()).is_err());
        assert!(Genotype::new(0, good()).is_err());
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoding::SymbolicLabelledGraph;
use crate::gnn::{FamilyGenerator, GnnHalting, Member, RecCGnn, VertexOp};
use crate::graph::GraphShape;
use crate::recurrent::RecurrentCircuit;

/// Size and class figures of a recurrent circuit, recounted from its gates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitMetrics {
    pub size: usize,
    pub depth: usize,
    pub n: usize,
    pub m: usize,
    pub ell: usize,
    pub p: usize,
    pub halting_size: usize,
    pub sign_gates_underlying: usize,
    pub sign_gates_halting: usize,
    pub activations: Vec<String>,
}

impl CircuitMetrics {
    pub fn of(rec: &RecurrentCircuit) -> Self {
        let u = &rec.underlying;
        let h = rec.halting.circuit();
        CircuitMetrics {
            size: u.size(),
            depth: u.depth(),
            n: u.n(),
            m: u.m(),
            ell: u.ell(),
            p: rec.p(),
            halting_size: h.map_or(0, |c| c.size()),
            sign_gates_underlying: u.count_activation("sign"),
            sign_gates_halting: h.map_or(0, |c| c.count_activation("sign")),
            activations: u.activation_names().into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnMetrics {
    pub period: usize,
    pub vertices: usize,
    pub edges: usize,
    pub max_degree: usize,
    pub inner_recurrent: bool,
    /// Layers whose global activation is `sign`.
    pub sign_layers: usize,
    /// Sign gates inside family members or vertex operations, summed over layers.
    pub sign_ops: usize,
    pub halting: String,
}

fn op_signs(op: &VertexOp) -> usize {
    matches!(op, VertexOp::Act { name, .. } if name == "sign") as usize
}

impl GnnMetrics {
    pub fn of(gnn: &RecCGnn, shape: &GraphShape) -> Self {
        let degrees = shape.degrees();
        let mut arities: Vec<usize> = degrees.iter().map(|d| d + 1).collect();
        arities.sort_unstable();
        arities.dedup();
        let sign_ops = gnn
            .layers
            .iter()
            .map(|l| match &l.family.generator {
                FamilyGenerator::DegreeDispatch(dd) => arities.iter().map(|&k| op_signs(dd.op(k - 1))).sum(),
                FamilyGenerator::Explicit { members } => {
                    members.values().map(|m: &Member| m.underlying().count_activation("sign")).sum()
                }
                _ => 0,
            })
            .sum();
        GnnMetrics {
            period: gnn.period,
            vertices: shape.n,
            edges: shape.edges.len(),
            max_degree: degrees.iter().copied().max().unwrap_or(0),
            inner_recurrent: gnn.is_inner_recurrent(),
            sign_layers: gnn.layers.iter().filter(|l| l.activation == "sign").count(),
            sign_ops,
            halting: match &gnn.halting {
                GnnHalting::FixedLayer { k } => format!("fixed-layer({k})"),
                GnnHalting::ThresholdCount { target, bound } => format!("threshold-count({target}, {bound})"),
                GnnHalting::Family { .. } => "family".into(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArtifactMetrics {
    Circuit(CircuitMetrics),
    Gnn(GnnMetrics),
}

/// Metadata written next to every compiled artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub direction: String,
    pub source: ArtifactMetrics,
    pub target: ArtifactMetrics,
    /// Gadget name -> number of instances emitted.
    pub gadgets: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl CompileReport {
    pub fn new(direction: &str, source: ArtifactMetrics, target: ArtifactMetrics) -> Self {
        CompileReport { direction: direction.into(), source, target, gadgets: BTreeMap::new(), notes: vec![] }
    }

    pub fn gadget(&mut self, name: &str, count: usize) {
        *self.gadgets.entry(name.into()).or_default() += count;
    }
}

/// Graph metrics of a symbolic encoding, for circuit→GNN reports.
pub fn encoding_shape(sym: &SymbolicLabelledGraph) -> GraphShape {
    GraphShape::new(sym.n, sym.edges.iter().copied()).expect("encoding edges are valid")
}

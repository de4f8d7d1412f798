use std::collections::BTreeSet;

use crate::circuit::{ExtendedCircuit, Gate, GateId, GateKind};

/// Incremental construction of an [`ExtendedCircuit`].
///
/// `add` and `mul` keep the graph simple: a predecessor repeated in the same
/// gate is routed through a one-predecessor `Add` pad.
#[derive(Clone, Debug, Default)]
pub struct CircuitBuilder {
    gates: Vec<Gate>,
    inputs: Vec<GateId>,
    aux: Vec<GateId>,
    outputs: Vec<GateId>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn kind(&self, g: GateId) -> &GateKind {
        &self.gates[g].kind
    }

    fn push(&mut self, kind: GateKind, preds: Vec<GateId>) -> GateId {
        self.gates.push(Gate { kind, preds });
        self.gates.len() - 1
    }

    pub fn input(&mut self) -> GateId {
        let g = self.push(GateKind::Input(self.inputs.len()), vec![]);
        self.inputs.push(g);
        g
    }

    pub fn aux(&mut self) -> GateId {
        let g = self.push(GateKind::AuxMemory(self.aux.len()), vec![]);
        self.aux.push(g);
        g
    }

    pub fn constant(&mut self, c: f64) -> GateId {
        self.push(GateKind::Constant(c), vec![])
    }

    fn simple(&mut self, preds: &[GateId]) -> Vec<GateId> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(preds.len());
        for &p in preds {
            if seen.insert(p) {
                out.push(p);
            } else {
                let pad = self.push(GateKind::Add, vec![p]);
                out.push(pad);
            }
        }
        out
    }

    /// # Panics
    /// On an empty predecessor list.
    pub fn add(&mut self, preds: &[GateId]) -> GateId {
        assert!(!preds.is_empty(), "add gate needs at least one predecessor");
        let p = self.simple(preds);
        self.push(GateKind::Add, p)
    }

    /// # Panics
    /// On an empty predecessor list.
    pub fn mul(&mut self, preds: &[GateId]) -> GateId {
        assert!(!preds.is_empty(), "mul gate needs at least one predecessor");
        let p = self.simple(preds);
        self.push(GateKind::Mul, p)
    }

    pub fn act(&mut self, name: &str, pred: GateId) -> GateId {
        self.push(GateKind::Activation(name.to_string()), vec![pred])
    }

    pub fn sign(&mut self, pred: GateId) -> GateId {
        self.act("sign", pred)
    }

    pub fn output(&mut self, pred: GateId) -> GateId {
        let g = self.push(GateKind::Output(self.outputs.len()), vec![pred]);
        self.outputs.push(g);
        g
    }

    /// `x * c`
    pub fn scale(&mut self, x: GateId, c: f64) -> GateId {
        let k = self.constant(c);
        self.mul(&[x, k])
    }

    /// `x + c`
    pub fn shift(&mut self, x: GateId, c: f64) -> GateId {
        let k = self.constant(c);
        self.add(&[x, k])
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: GateId) -> GateId {
        let neg = self.scale(x, -1.0);
        self.shift(neg, 1.0)
    }

    /// `a * s + b * r`, the two-way mask used by latches and guards.
    pub fn mux(&mut self, a: GateId, s: GateId, b: GateId, r: GateId) -> GateId {
        let x = self.mul(&[a, s]);
        let y = self.mul(&[b, r]);
        self.add(&[x, y])
    }

    /// Copies `c` into this builder.
    ///
    /// Its input and auxiliary gates are replaced by `inputs` and `aux`, and
    /// its output gates are dropped. The returned map sends every gate of `c`
    /// to the gate carrying its value here, so an output maps to whatever
    /// its predecessor became.
    ///
    /// # Panics
    /// If the argument lengths do not match or `c` is cyclic.
    pub fn splice(&mut self, c: &ExtendedCircuit, inputs: &[GateId], aux: &[GateId]) -> Vec<GateId> {
        assert_eq!(inputs.len(), c.n(), "splice input arity");
        assert_eq!(aux.len(), c.ell(), "splice aux arity");
        let order = c.order().expect("splice of a cyclic circuit");
        let mut map = vec![usize::MAX; c.size()];
        for &g in order {
            let gate = c.gate(g);
            let preds: Vec<GateId> = gate.preds.iter().map(|&p| map[p]).collect();
            map[g] = match &gate.kind {
                GateKind::Input(i) => inputs[*i],
                GateKind::AuxMemory(i) => aux[*i],
                GateKind::Constant(v) => self.constant(*v),
                GateKind::Add => self.add(&preds),
                GateKind::Mul => self.mul(&preds),
                GateKind::Activation(n) => self.act(n, preds[0]),
                GateKind::Output(_) => preds[0],
            };
        }
        map
    }

    pub fn finish(self) -> ExtendedCircuit {
        ExtendedCircuit::from_parts(self.gates, self.inputs, self.aux, self.outputs)
    }
}

//! Per-layer simulation blocks shared by the inner and full compilers.
//!
//! A block runs every vertex's (recurrent) member in lockstep. Once a vertex
//! halts, its output and memory are latched and stay fixed; the block is
//! done when every vertex has halted.

use std::collections::{BTreeMap, HashMap};

use crate::builder::CircuitBuilder;
use crate::circuit::{ExtendedCircuit, GateId};
use crate::gadgets::make_iteration_free;
use crate::gnn::{one_shot, LayerSpec, Member};
use crate::recurrent::RecurrentCircuit;

use super::CompileError;

/// Tracks aux gates with non-zero initial values while a circuit is built.
#[derive(Default)]
pub(super) struct AuxInit {
    values: HashMap<GateId, f64>,
    pub rec_edges: BTreeMap<GateId, GateId>,
}

impl AuxInit {
    pub fn aux(&mut self, b: &mut CircuitBuilder, init: f64) -> GateId {
        let g = b.aux();
        if init != 0.0 {
            self.values.insert(g, init);
        }
        g
    }

    pub fn set(&mut self, g: GateId, init: f64) {
        self.values.insert(g, init);
    }

    pub fn latch(&mut self, gate: GateId, source: GateId) {
        self.rec_edges.insert(gate, source);
    }

    pub fn initial(&self, c: &ExtendedCircuit) -> Vec<f64> {
        c.aux_memory().iter().map(|g| self.values.get(g).copied().unwrap_or(0.0)).collect()
    }
}

pub(super) struct Block {
    pub outputs: Vec<GateId>,
    pub all_done: GateId,
}

/// The member as an iteration-free recurrent circuit.
pub(super) fn recurrent_member(spec: &LayerSpec, arity: usize) -> Result<RecurrentCircuit, CompileError> {
    let m = spec.family.member(arity)?;
    let rec = match &*m {
        Member::Plain(c) => one_shot(c.clone()),
        Member::Recurrent(r) => r.clone(),
    };
    Ok(make_iteration_free(&rec))
}

/// Emits one layer over `labels`.
///
/// `active` gates the restart flag: when it is 0 the block forgets its state
/// and restarts from `labels` at the next iteration it is active.
pub(super) fn emit_block(
    b: &mut CircuitBuilder,
    st: &mut AuxInit,
    spec: &LayerSpec,
    adj: &[Vec<usize>],
    labels: &[GateId],
    active: Option<GateId>,
) -> Result<Block, CompileError> {
    let started = st.aux(b, 0.0);
    let fresh = b.one_minus(started);
    let zero = b.constant(0.0);
    let mut outputs = Vec::with_capacity(labels.len());
    let mut dones = Vec::with_capacity(labels.len());
    for (v, nbrs) in adj.iter().enumerate() {
        let r = recurrent_member(spec, nbrs.len() + 1)?;
        let u = &r.underlying;
        let sources = std::iter::once(labels[v]).chain(nbrs.iter().map(|&w| labels[w]));
        let mut mems = Vec::with_capacity(u.n() + u.ell());
        let mut ins = Vec::with_capacity(u.n());
        for x in sources {
            let m = st.aux(b, 0.0);
            let e = b.mux(x, fresh, m, started);
            mems.push((m, e));
            ins.push(e);
        }
        let mut aux = Vec::with_capacity(u.ell());
        for &init in &r.initial_aux {
            let a = st.aux(b, 0.0);
            let k = b.constant(init);
            let e = b.mux(k, fresh, a, started);
            mems.push((a, e));
            aux.push(e);
        }
        let map = b.splice(u, &ins, &aux);
        let y = map[u.outputs()[0]];
        let y = if spec.activation == "id" { y } else { b.act(&spec.activation, y) };

        let h = r.halting.circuit().expect("lowered halting");
        let mut hin = vec![zero];
        hin.extend(r.halting_gates.iter().map(|&g| map[g]));
        let hmap = b.splice(h, &hin, &[]);
        let shifted = b.shift(hmap[h.outputs()[0]], -0.5);
        let fire = b.sign(shifted);

        let done = st.aux(b, 0.0);
        let out = st.aux(b, 0.0);
        let was_done = b.mul(&[done, started]);
        let not_was = b.one_minus(was_done);
        let newly = b.mul(&[not_was, fire]);
        let cur_done = b.add(&[was_done, newly]);
        let cur_out = b.mux(out, was_done, y, not_was);
        let not_done = b.one_minus(cur_done);
        for ((m, e), g) in mems.into_iter().zip(r.memory_gates()) {
            let src = map[r.rec_edges[&g]];
            let next = b.mux(e, cur_done, src, not_done);
            st.latch(m, next);
        }
        st.latch(done, cur_done);
        st.latch(out, cur_out);
        outputs.push(cur_out);
        dones.push(cur_done);
    }
    let all_done = if dones.is_empty() { b.constant(1.0) } else { b.mul(&dones) };
    let pending = b.one_minus(all_done);
    let next_started = match active {
        Some(a) => b.mul(&[a, pending]),
        None => pending,
    };
    st.latch(started, next_started);
    Ok(Block { outputs, all_done })
}

//! Unrolling a sigmoid network into a tree-structured graphical model.
//!
//! Step 1 ([`unroll_step1`]) turns the layered DAG into one tree per output
//! unit by giving every parent a private copy, together with its whole
//! ancestor subgraph, for each outgoing edge. Step 2 ([`unroll_step2`])
//! replaces every parent copy by `L` copies whose edge weights are divided by
//! `L`. Both produce an explicit [`UnrolledTree`], which is only practical for
//! small nets and small `L`; [`FiniteLModel`] evaluates the same model in
//! closed form for any `L`.
//!
//! Edges point from a parent copy to the child copy it feeds, matching the
//! direction of the source network.

mod finite;
pub mod verify;

pub use finite::{Copies, FiniteLModel};

use crate::dnn::Mlp;
use crate::error::{Error, Result};

/// Default limit on materialized vertices.
pub const DEFAULT_VERTEX_CAP: usize = 1_000_000;

/// A copy of a source unit, named by the branch indices taken from its tree
/// root (an output unit) down to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CopyId {
    pub origin: usize,
    pub path: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEdge {
    pub parent: usize,
    pub child: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledTree {
    vertices: Vec<CopyId>,
    edges: Vec<TreeEdge>,
    /// Edge indices entering each vertex, indexed by vertex.
    incoming: Vec<Vec<usize>>,
    /// Bias of each vertex's origin (0 for inputs).
    bias: Vec<f64>,
    /// Input index for copies of input units.
    input_of: Vec<Option<usize>>,
    /// Tree roots, one per output unit.
    outputs: Vec<usize>,
}

impl UnrolledTree {
    pub fn vertices(&self) -> &[CopyId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn bias(&self, v: usize) -> f64 {
        self.bias[v]
    }

    pub fn input_of(&self, v: usize) -> Option<usize> {
        self.input_of[v]
    }

    /// Observed input copies.
    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&v| self.input_of[v].is_some())
    }

    pub fn parents_of(&self, v: usize) -> impl Iterator<Item = &TreeEdge> + '_ {
        self.incoming[v].iter().map(|&e| &self.edges[e])
    }

    pub fn copies_of(&self, origin: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(move |&v| self.vertices[v].origin == origin)
    }

    /// Number of connected components, from an undirected traversal.
    pub fn num_components(&self) -> usize {
        let n = self.vertices.len();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.parent].push(e.child);
            adj[e.child].push(e.parent);
        }
        let mut seen = vec![false; n];
        let mut comps = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            comps += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &u in &adj[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        comps
    }

    /// `|E| = |V| - #components`, i.e. the undirected structure is a forest.
    pub fn is_forest(&self) -> bool {
        self.edges.len() + self.num_components() == self.vertices.len()
    }

    fn push_vertex(&mut self, id: CopyId, bias: f64, input_of: Option<usize>) -> usize {
        self.vertices.push(id);
        self.incoming.push(Vec::new());
        self.bias.push(bias);
        self.input_of.push(input_of);
        self.vertices.len() - 1
    }

    fn push_edge(&mut self, parent: usize, child: usize, weight: f64) {
        self.incoming[child].push(self.edges.len());
        self.edges.push(TreeEdge { parent, child, weight });
    }

    fn empty() -> Self {
        UnrolledTree {
            vertices: Vec::new(),
            edges: Vec::new(),
            incoming: Vec::new(),
            bias: Vec::new(),
            input_of: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Exact `P(origin = 1 | x)` at a copy of `origin`, by leaf-to-root
    /// variable elimination over that copy's ancestor subtree.
    ///
    /// Every copy's ancestor subtree is isomorphic, so the first copy is used.
    /// Evidence exists only at input copies, so for output units this is the
    /// full-tree marginal; for hidden units it is the marginal the construction
    /// propagates forward, without the message from the copy's child.
    pub fn explicit_marginal(&self, x: &[bool], origin: usize) -> Result<f64> {
        let v = self
            .copies_of(origin)
            .next()
            .ok_or_else(|| Error::Usage(format!("origin {origin} has no copy in the tree")))?;
        if let Some(k) = self.input_of[v] {
            let bit = *x
                .get(k)
                .ok_or_else(|| Error::Usage(format!("input {k} not assigned")))?;
            return Ok(if bit { 1.0 } else { 0.0 });
        }
        let table = self.collect(v, x)?;
        Ok(table[1] / (table[0] + table[1]))
    }

    /// Unnormalized table over `v` after summing out its ancestors.
    fn collect(&self, v: usize, x: &[bool]) -> Result<[f64; 2]> {
        let b = self.bias[v];
        let mut table = [1.0, b.exp()];
        for e in self.parents_of(v) {
            let u = e.parent;
            // sum over u of (table(u)[t] * potential(t, s)), potential = e^{w} iff both true
            let msg = match self.input_of[u] {
                Some(k) => {
                    let bit = *x
                        .get(k)
                        .ok_or_else(|| Error::Usage(format!("input {k} not assigned")))?;
                    [1.0, if bit { e.weight.exp() } else { 1.0 }]
                }
                None => {
                    let tu = self.collect(u, x)?;
                    [tu[0] + tu[1], tu[0] + tu[1] * e.weight.exp()]
                }
            };
            table[0] *= msg[0];
            table[1] *= msg[1];
            let s = table[0] + table[1];
            table[0] /= s;
            table[1] /= s;
        }
        Ok(table)
    }
}

/// Algorithm 1: one tree per output unit, each parent copied once per
/// outgoing edge together with its ancestors. Weights are unchanged.
pub fn unroll_step1(mlp: &Mlp) -> UnrolledTree {
    let mut tree = UnrolledTree::empty();
    let out_layer = mlp.dims().len() - 1;
    for j in 0..mlp.output_dim() {
        let root = tree.push_vertex(
            CopyId {
                origin: mlp.node_id(out_layer, j),
                path: Vec::new(),
            },
            mlp.bias(out_layer - 1, j),
            None,
        );
        tree.outputs.push(root);
        copy_ancestors(mlp, &mut tree, root, out_layer, j);
    }
    tree
}

fn copy_ancestors(mlp: &Mlp, tree: &mut UnrolledTree, vertex: usize, layer: usize, unit: usize) {
    if layer == 0 {
        return;
    }
    for k in 0..mlp.dims()[layer - 1] {
        let mut path = tree.vertices[vertex].path.clone();
        path.push(k as u32);
        let (bias, input) = if layer == 1 {
            (0.0, Some(k))
        } else {
            (mlp.bias(layer - 2, k), None)
        };
        let copy = tree.push_vertex(
            CopyId {
                origin: mlp.node_id(layer - 1, k),
                path,
            },
            bias,
            input,
        );
        tree.push_edge(copy, vertex, mlp.weight(layer - 1, unit, k));
        copy_ancestors(mlp, tree, copy, layer - 1, k);
    }
}

/// Algorithm 2: starting from each output root, every parent of a vertex is
/// replaced by `l` copies carrying weight `w / l`, recursively with their
/// ancestor subtrees.
pub fn unroll_step2(tree: &UnrolledTree, l: usize, vertex_cap: usize) -> Result<UnrolledTree> {
    if l == 0 {
        return Err(Error::Usage("L must be at least 1".into()));
    }
    // subtree sizes after replication
    let mut size = vec![0u128; tree.vertices.len()];
    for v in (0..tree.vertices.len()).rev() {
        // parents are always pushed after their child in step 1
        size[v] = 1 + l as u128 * tree.parents_of(v).map(|e| size[e.parent]).sum::<u128>();
    }
    let total: u128 = tree.outputs.iter().map(|&r| size[r]).sum();
    if total > vertex_cap as u128 {
        return Err(Error::Capacity(format!(
            "replicating with L = {l} needs {total} vertices, cap is {vertex_cap}"
        )));
    }
    let mut out = UnrolledTree::empty();
    for &root in &tree.outputs {
        let r = out.push_vertex(tree.vertices[root].clone(), tree.bias[root], tree.input_of[root]);
        out.outputs.push(r);
        replicate(tree, root, &mut out, r, l);
    }
    Ok(out)
}

fn replicate(src: &UnrolledTree, current: usize, out: &mut UnrolledTree, copy: usize, l: usize) {
    let mut branch = 0u32;
    for e in src.parents_of(current) {
        let weight = e.weight / l as f64;
        for _ in 0..l {
            let mut path = out.vertices[copy].path.clone();
            path.push(branch);
            branch += 1;
            let p = e.parent;
            let n = out.push_vertex(
                CopyId {
                    origin: src.vertices[p].origin,
                    path,
                },
                src.bias[p],
                src.input_of[p],
            );
            out.push_edge(n, copy, weight);
            replicate(src, p, out, n, l);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::OutputKind;
    use crate::math::sigmoid;
    use std::collections::HashSet;

    fn net(dims: &[usize], w: f64) -> Mlp {
        let mut m = Mlp::zeros(dims, OutputKind::Bernoulli).unwrap();
        let p: Vec<f64> = (0..m.num_params())
            .map(|i| if i < m.num_params() - dims[1..].iter().sum::<usize>() { w } else { 0.0 })
            .collect();
        m.set_params(&p);
        m
    }

    #[test]
    fn step1_on_221_has_seven_vertices() {
        let t = unroll_step1(&net(&[2, 2, 1], 1.0));
        assert_eq!(t.num_vertices(), 7);
        assert_eq!(t.edges().len(), 6);
        assert!(t.is_forest());
        assert_eq!(t.roots().count(), 4);
        let ids: HashSet<_> = t.vertices().iter().collect();
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn step1_copies_shared_hidden_units_per_output() {
        // two hidden units feeding two outputs
        let t = unroll_step1(&net(&[2, 2, 2], 0.5));
        let mlp = net(&[2, 2, 2], 0.5);
        for h in 0..2 {
            assert_eq!(t.copies_of(mlp.node_id(1, h)).count(), 2);
        }
        assert_eq!(t.outputs().len(), 2);
        assert_eq!(t.num_components(), 2);
        assert!(t.is_forest());
    }

    #[test]
    fn step1_leaves_chain_as_is() {
        let t = unroll_step1(&net(&[1, 1, 1], 1.0));
        assert_eq!(t.num_vertices(), 3);
    }

    #[test]
    fn step2_identity_at_l1() {
        let t1 = unroll_step1(&net(&[2, 2, 1], 0.7));
        let t2 = unroll_step2(&t1, 1, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(t2.num_vertices(), t1.num_vertices());
        let w1: Vec<f64> = t1.edges().iter().map(|e| e.weight).collect();
        let w2: Vec<f64> = t2.edges().iter().map(|e| e.weight).collect();
        assert_eq!(w1, w2);
    }

    #[test]
    fn step2_chain_l2() {
        let t1 = unroll_step1(&net(&[1, 1, 1], 1.5));
        let t2 = unroll_step2(&t1, 2, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(t2.num_vertices(), 1 + 2 + 4);
        let root = t2.outputs()[0];
        let into_root: Vec<f64> = t2.parents_of(root).map(|e| e.weight).collect();
        assert_eq!(into_root, vec![0.75, 0.75]);
        assert!(t2.is_forest());
        let ids: HashSet<_> = t2.vertices().iter().collect();
        assert_eq!(ids.len(), t2.num_vertices());
    }

    #[test]
    fn step2_capacity() {
        let t1 = unroll_step1(&net(&[4, 4, 4, 1], 1.0));
        assert!(matches!(unroll_step2(&t1, 50, DEFAULT_VERTEX_CAP), Err(Error::Capacity(_))));
        assert!(matches!(unroll_step2(&t1, 0, DEFAULT_VERTEX_CAP), Err(Error::Usage(_))));
    }

    #[test]
    fn hidden_marginal_l1_is_single_cpd() {
        let mlp = net(&[1, 1, 1], 1.0);
        let t = unroll_step1(&mlp);
        let p = t.explicit_marginal(&[true], mlp.node_id(1, 0)).unwrap();
        assert!((p - sigmoid(1.0)).abs() < 1e-15);
        let out = t.explicit_marginal(&[true], mlp.node_id(2, 0)).unwrap();
        let e = std::f64::consts::E;
        let expect = sigmoid(((e * e + 1.0) / (e + 1.0)).ln());
        assert!((out - expect).abs() < 1e-14);
        assert!((out - 0.69289).abs() < 1e-5);
    }

    #[test]
    fn zero_weights_give_half_everywhere() {
        let mlp = net(&[2, 2, 1], 0.0);
        let t = unroll_step2(&unroll_step1(&mlp), 3, DEFAULT_VERTEX_CAP).unwrap();
        for node in 2..mlp.num_nodes() {
            assert_eq!(t.explicit_marginal(&[true, false], node).unwrap(), 0.5);
        }
    }
}

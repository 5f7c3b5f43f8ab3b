//! AU node-feature learning: per-AU projections, a kNN facial graph over the
//! resulting node vectors, one residual graph-convolution layer, and
//! cosine-similarity activations against trainable per-AU anchors.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::{self, axpy, dot, relu, Tensor2, COSINE_EPS};

/// AU identifiers in column order.
pub const AU_IDS: [u32; 12] = [1, 2, 4, 6, 7, 10, 12, 15, 23, 24, 25, 26];
pub const NUM_AUS: usize = AU_IDS.len();
pub const DEFAULT_K: usize = 3;
pub const DEFAULT_NODE_DIM: usize = 64;

pub fn au_label(i: usize) -> String {
    match AU_IDS.get(i) {
        Some(id) => format!("AU{id}"),
        None => format!("node{i}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnflParams {
    /// One `[d × D]` projection per AU.
    pub au_weights: Vec<Tensor2>,
    pub au_biases: Vec<Vec<f64>>,
    /// `[d × d]`
    pub gcn_weight: Tensor2,
    /// `[N × d]`, row `i` is the anchor of AU `i`.
    pub anchors: Tensor2,
    pub k: usize,
}

impl AnflParams {
    pub fn zeros(num_nodes: usize, input_dim: usize, node_dim: usize, k: usize) -> Self {
        Self {
            au_weights: vec![Tensor2::zeros(node_dim, input_dim); num_nodes],
            au_biases: vec![vec![0.0; node_dim]; num_nodes],
            gcn_weight: Tensor2::zeros(node_dim, node_dim),
            anchors: Tensor2::zeros(num_nodes, node_dim),
            k,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.au_weights.len()
    }

    pub fn node_dim(&self) -> usize {
        self.gcn_weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.au_weights.first().map_or(0, Tensor2::cols)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d, din) = (self.num_nodes(), self.node_dim(), self.input_dim());
        if n < 2 {
            return Err(Error::Config(format!("ANFL needs at least 2 AU nodes, got {n}")));
        }
        check_k(self.k, n)?;
        if self.au_biases.len() != n {
            return Err(Error::shape("ANFL biases vs nodes", (self.au_biases.len(), 1), (n, 1)));
        }
        for (w, b) in self.au_weights.iter().zip(&self.au_biases) {
            if w.shape() != (d, din) {
                return Err(Error::shape("ANFL per-AU weight", w.shape(), (d, din)));
            }
            if b.len() != d {
                return Err(Error::shape("ANFL per-AU bias", (b.len(), 1), (d, 1)));
            }
        }
        if self.gcn_weight.shape() != (d, d) {
            return Err(Error::shape("GCN weight", self.gcn_weight.shape(), (d, d)));
        }
        if self.anchors.shape() != (n, d) {
            return Err(Error::shape("ANFL anchors", self.anchors.shape(), (n, d)));
        }
        Ok(())
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "kNN neighbour count k={k} must satisfy 1 <= k <= N-1 = {}",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Row `i` is `ReLU(Wᵢx + bᵢ)`.
pub fn node_features(x: &[f64], params: &AnflParams) -> Result<Tensor2> {
    let (pre, _) = node_preactivations(x, params)?;
    Ok(pre)
}

// Returns (activated, pre-activation).
fn node_preactivations(x: &[f64], params: &AnflParams) -> Result<(Tensor2, Tensor2)> {
    if x.len() != params.input_dim() {
        return Err(Error::shape("ANFL input", (x.len(), 1), (params.input_dim(), 1)));
    }
    let (n, d) = (params.num_nodes(), params.node_dim());
    let mut pre = Tensor2::zeros(n, d);
    for i in 0..n {
        let z = params.au_weights[i].matvec(x)?;
        for (j, v) in pre.row_mut(i).iter_mut().enumerate() {
            *v = z[j] + params.au_biases[i][j];
        }
    }
    let mut act = pre.clone();
    act.data_mut().iter_mut().for_each(|v| *v = relu(*v));
    Ok((act, pre))
}

/// kNN-pruned AU graph with self-loops and its symmetric normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct FacialGraph {
    adjacency: Tensor2,
    normalized: Tensor2,
}

impl FacialGraph {
    /// Builds the normalized form `Deg^{-1/2} A Deg^{-1/2}` from a symmetric
    /// 0/1 adjacency that already carries self-loops.
    pub fn from_adjacency(adjacency: Tensor2) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::shape("adjacency must be square", adjacency.shape(), (n, n)));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 1.0 {
                return Err(Error::Config(format!("adjacency lacks self-loop at node {i}")));
            }
            for j in 0..n {
                let a = adjacency.get(i, j);
                if (a != 0.0 && a != 1.0) || a != adjacency.get(j, i) {
                    return Err(Error::Config(format!("adjacency not a symmetric 0/1 matrix at ({i}, {j})")));
                }
            }
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|i| 1.0 / adjacency.row(i).iter().sum::<f64>().sqrt())
            .collect();
        let mut normalized = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                normalized.set(i, j, inv_sqrt_deg[i] * adjacency.get(i, j) * inv_sqrt_deg[j]);
            }
        }
        Ok(Self {
            adjacency,
            normalized,
        })
    }

    pub fn adjacency(&self) -> &Tensor2 {
        &self.adjacency
    }

    pub fn normalized(&self) -> &Tensor2 {
        &self.normalized
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency.get(i, j) != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Graphviz text, one undirected edge per line, self-loops omitted.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph facial {\n");
        for i in 0..self.num_nodes() {
            let _ = writeln!(s, "  {};", au_label(i));
        }
        for (i, j) in self.edges() {
            let _ = writeln!(s, "  {} -- {};", au_label(i), au_label(j));
        }
        s.push_str("}\n");
        s
    }
}

/// Each node keeps its `k` largest inner-product neighbours (ties toward the
/// lower index); edges are symmetrized by union and self-loops added.
pub fn build_facial_graph(v: &Tensor2, k: usize) -> Result<FacialGraph> {
    let n = v.rows();
    check_k(k, n)?;
    let mut adjacency = Tensor2::identity(n);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i).map(|j| (dot(v.row(i), v.row(j)), j)));
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in candidates.iter().take(k) {
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
    }
    FacialGraph::from_adjacency(adjacency)
}

/// `Â·V·W + V`.
pub fn gcn_forward(v: &Tensor2, graph: &FacialGraph, gcn_weight: &Tensor2) -> Result<Tensor2> {
    Ok(gcn_with_propagated(v, graph, gcn_weight)?.1)
}

fn gcn_with_propagated(v: &Tensor2, graph: &FacialGraph, w: &Tensor2) -> Result<(Tensor2, Tensor2)> {
    if graph.num_nodes() != v.rows() {
        return Err(Error::shape("GCN graph vs node features", graph.normalized.shape(), v.shape()));
    }
    if w.shape() != (v.cols(), v.cols()) {
        return Err(Error::shape("GCN weight vs node features", w.shape(), v.shape()));
    }
    let propagated = graph.normalized.matmul(v)?;
    let mut out = propagated.matmul(w)?;
    out.add_scaled(1.0, v);
    Ok((propagated, out))
}

/// `ŷᵢ = cos_relu(v_FGG,i, sᵢ)`.
pub fn au_activations(v_fgg: &Tensor2, anchors: &Tensor2) -> Result<Vec<f64>> {
    if v_fgg.shape() != anchors.shape() {
        return Err(Error::shape("AU activations: node features vs anchors", v_fgg.shape(), anchors.shape()));
    }
    (0..v_fgg.rows())
        .map(|i| math::cosine_similarity_relu(v_fgg.row(i), anchors.row(i), COSINE_EPS))
        .collect()
}

/// Everything the backward pass needs from one forward pass over a sample.
#[derive(Clone, Debug)]
pub struct AnflForward {
    pub pre: Tensor2,
    pub nodes: Tensor2,
    pub graph: FacialGraph,
    pub propagated: Tensor2,
    pub fgg: Tensor2,
    pub activations: Vec<f64>,
}

/// Full ANFL pass. With `graph = None` the topology is rebuilt from the
/// current node features; passing one pins it.
pub fn anfl_forward(x: &[f64], params: &AnflParams, graph: Option<&FacialGraph>) -> Result<AnflForward> {
    let (nodes, pre) = node_preactivations(x, params)?;
    let graph = match graph {
        Some(g) => g.clone(),
        None => build_facial_graph(&nodes, params.k)?,
    };
    let (propagated, fgg) = gcn_with_propagated(&nodes, &graph, &params.gcn_weight)?;
    let activations = au_activations(&fgg, &params.anchors)?;
    Ok(AnflForward {
        pre,
        nodes,
        graph,
        propagated,
        fgg,
        activations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnflGrads {
    pub au_weights: Vec<Tensor2>,
    pub au_biases: Vec<Vec<f64>>,
    pub gcn_weight: Tensor2,
    pub anchors: Tensor2,
}

impl AnflGrads {
    pub fn zeros_like(params: &AnflParams) -> Self {
        let z = AnflParams::zeros(params.num_nodes(), params.input_dim(), params.node_dim(), params.k);
        Self {
            au_weights: z.au_weights,
            au_biases: z.au_biases,
            gcn_weight: z.gcn_weight,
            anchors: z.anchors,
        }
    }
}

/// Accumulates `∂L/∂θ` into `grads` given `∂L/∂ŷ_AU`; returns `∂L/∂x`.
/// Graph topology is held constant.
pub fn anfl_backward(
    x: &[f64],
    params: &AnflParams,
    fwd: &AnflForward,
    d_act: &[f64],
    grads: &mut AnflGrads,
) -> Vec<f64> {
    let (n, d) = (params.num_nodes(), params.node_dim());
    let mut d_fgg = Tensor2::zeros(n, d);
    for i in 0..n {
        if d_act[i] == 0.0 {
            continue;
        }
        let g = math::cosine_similarity_relu_grad(fwd.fgg.row(i), params.anchors.row(i), COSINE_EPS)
            .expect("shapes checked in forward");
        axpy(d_act[i], &g.du, d_fgg.row_mut(i));
        axpy(d_act[i], &g.dv, grads.anchors.row_mut(i));
    }

    // fgg = Â V W + V
    let gw = fwd.propagated.transpose().matmul(&d_fgg).expect("square");
    grads.gcn_weight.add_scaled(1.0, &gw);
    let d_prop = d_fgg.matmul(&params.gcn_weight.transpose()).expect("square");
    let mut d_nodes = fwd.graph.normalized.transpose().matmul(&d_prop).expect("square");
    d_nodes.add_scaled(1.0, &d_fgg);

    let mut d_input = vec![0.0; x.len()];
    for i in 0..n {
        let dz: Vec<f64> = d_nodes
            .row(i)
            .iter()
            .zip(fwd.pre.row(i))
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        if dz.iter().all(|&v| v == 0.0) {
            continue;
        }
        grads.au_weights[i].add_outer(1.0, &dz, x);
        axpy(1.0, &dz, &mut grads.au_biases[i]);
        let dx = params.au_weights[i].tmatvec(&dz).expect("shape");
        axpy(1.0, &dx, &mut d_input);
    }
    d_input
}

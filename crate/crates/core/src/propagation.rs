//! Signed adaptive message passing over the grid graph.
//!
//! Each layer computes `l^(γ)_i = l^(0)_i + Σ_{j∈N(i)} c_ij l^(γ−1)_j` where
//! the coefficient `c_ij` depends on the variant:
//!
//! * adaptive: `tanh((l_i + l_j)·a) / √(δ_i δ_j)`, signed, in `[−1, 1]` before
//!   normalization
//! * gcn-style: `1 / √(δ_i δ_j)`
//! * gat-style: softmax over `N(i)` of `(l_i + l_j)·a`
//!
//! The residual term is always the original `l^(0)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridGraph;
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagationVariant {
    #[default]
    Adaptive,
    GcnStyle,
    GatStyle,
}

impl FromStr for PropagationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "gcn-style" | "gcn" => Ok(Self::GcnStyle),
            "gat-style" | "gat" => Ok(Self::GatStyle),
            other => Err(Error::Config(format!(
                "unknown propagation variant `{other}`"
            ))),
        }
    }
}

impl PropagationVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adaptive => "adaptive",
            Self::GcnStyle => "gcn-style",
            Self::GatStyle => "gat-style",
        }
    }

    fn uses_attention(self) -> bool {
        !matches!(self, Self::GcnStyle)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub layers: usize,
    pub variant: PropagationVariant,
    /// Recompute edge weights from `l^(γ−1)` at every layer instead of once
    /// from `l^(0)`.
    pub recompute_per_layer: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            variant: PropagationVariant::Adaptive,
            recompute_per_layer: false,
        }
    }
}

/// Signed per-entry weights aligned with the graph's stored entries.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    pub values: Vec<f64>,
}

impl EdgeWeights {
    /// Weight of the directed entry `i → j`.
    pub fn get(&self, graph: &GridGraph, i: usize, j: usize) -> Result<f64> {
        graph
            .entry(i, j)
            .map(|e| self.values[e])
            .ok_or(Error::NotAnEdge(i, j))
    }
}

/// `(l_spe + l_com) / 2`
pub fn average_latents(specific: &Matrix, shared: &Matrix) -> Result<Matrix> {
    specific.zip_map(shared, |a, b| (a + b) / 2.0)
}

fn check_attention(latents: &Matrix, attention: &Matrix) -> Result<()> {
    if attention.rows() != 1 || attention.cols() != latents.cols() {
        return Err(Error::shape(
            "attention",
            latents.shape(),
            attention.shape(),
        ));
    }
    Ok(())
}

/// `(l_i + l_j)·a` for every stored entry. The sum is formed per coordinate
/// before the dot product, so entries `i → j` and `j → i` are bit-identical.
pub fn edge_scores(latents: &Matrix, graph: &GridGraph, attention: &Matrix) -> Result<Vec<f64>> {
    check_attention(latents, attention)?;
    if latents.rows() != graph.node_count() {
        return Err(Error::shape(
            "edge_scores",
            latents.shape(),
            (graph.node_count(), latents.cols()),
        ));
    }
    let a = attention.as_slice();
    let mut scores = Vec::with_capacity(graph.entry_count());
    for i in 0..graph.node_count() {
        let li = latents.row(i);
        for &j in graph.neighbors(i) {
            let lj = latents.row(j);
            let mut s = 0.0;
            for k in 0..a.len() {
                s += (li[k] + lj[k]) * a[k];
            }
            scores.push(s);
        }
    }
    Ok(scores)
}

/// `w_ij = tanh((l_i + l_j)·a)`
pub fn compute_edge_weights(
    latents: &Matrix,
    graph: &GridGraph,
    attention: &Matrix,
) -> Result<EdgeWeights> {
    Ok(EdgeWeights {
        values: edge_scores(latents, graph, attention)?
            .into_iter()
            .map(f64::tanh)
            .collect(),
    })
}

/// One layer: `l0 + Σ_j c_ij prev_j`.
pub fn propagate_layer(l0: &Matrix, prev: &Matrix, graph: &GridGraph, coefs: &[f64]) -> Matrix {
    let mut out = l0.clone();
    let cols = l0.cols();
    for i in 0..graph.node_count() {
        let range = graph.entry_range(i);
        let neighbors = graph.neighbors(i);
        let dst = out.row_mut(i);
        for (&c, &j) in coefs[range].iter().zip(neighbors) {
            let src = prev.row(j);
            for k in 0..cols {
                dst[k] += c * src[k];
            }
        }
    }
    out
}

/// Residual signed propagation with fixed edge weights.
pub fn propagate(
    l0: &Matrix,
    graph: &GridGraph,
    weights: &EdgeWeights,
    layers: usize,
) -> Result<Matrix> {
    if layers == 0 {
        return Err(Error::Config("propagation needs at least one layer".into()));
    }
    if weights.values.len() != graph.entry_count() {
        return Err(Error::shape(
            "propagate",
            (weights.values.len(), 1),
            (graph.entry_count(), 1),
        ));
    }
    let coefs: Vec<f64> = weights
        .values
        .iter()
        .zip(graph.norms())
        .map(|(w, n)| w * n)
        .collect();
    let mut cur = l0.clone();
    for _ in 0..layers {
        cur = propagate_layer(l0, &cur, graph, &coefs);
    }
    Ok(cur)
}

/// Per-layer coefficients plus what the backward pass needs from them.
#[derive(Clone, Debug)]
struct LayerCoefs {
    /// `c_ij` per stored entry.
    coefs: Vec<f64>,
    /// tanh outputs (adaptive) or softmax outputs (gat); empty for gcn.
    activations: Vec<f64>,
}

fn coefficients(
    variant: PropagationVariant,
    source: &Matrix,
    graph: &GridGraph,
    attention: &Matrix,
) -> Result<LayerCoefs> {
    match variant {
        PropagationVariant::GcnStyle => Ok(LayerCoefs {
            coefs: graph.norms().to_vec(),
            activations: Vec::new(),
        }),
        PropagationVariant::Adaptive => {
            let w = compute_edge_weights(source, graph, attention)?.values;
            let coefs = w.iter().zip(graph.norms()).map(|(w, n)| w * n).collect();
            Ok(LayerCoefs {
                coefs,
                activations: w,
            })
        }
        PropagationVariant::GatStyle => {
            let scores = edge_scores(source, graph, attention)?;
            let mut alpha = vec![0.0; scores.len()];
            for i in 0..graph.node_count() {
                let r = graph.entry_range(i);
                if r.is_empty() {
                    continue;
                }
                let max = scores[r.clone()]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for e in r.clone() {
                    alpha[e] = (scores[e] - max).exp();
                    total += alpha[e];
                }
                for e in r {
                    alpha[e] /= total;
                }
            }
            Ok(LayerCoefs {
                coefs: alpha.clone(),
                activations: alpha,
            })
        }
    }
}

/// Forward record of a full propagation, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PropagationTrace {
    /// `l^(0) ..= l^(L)`
    pub layers: Vec<Matrix>,
    per_layer: Vec<LayerCoefs>,
}

impl PropagationTrace {
    pub fn output(&self) -> &Matrix {
        self.layers.last().expect("at least l^(0)")
    }

    /// Coefficients `c_ij` used by layer `γ` (1-based).
    pub fn layer_coefficients(&self, gamma: usize) -> &[f64] {
        let idx = if self.per_layer.len() == 1 {
            0
        } else {
            gamma - 1
        };
        &self.per_layer[idx].coefs
    }

    fn coefs_for(&self, gamma: usize) -> &LayerCoefs {
        let idx = if self.per_layer.len() == 1 {
            0
        } else {
            gamma - 1
        };
        &self.per_layer[idx]
    }
}

pub fn propagate_forward(
    l0: &Matrix,
    graph: &GridGraph,
    attention: &Matrix,
    config: &PropagationConfig,
) -> Result<PropagationTrace> {
    if config.layers == 0 {
        return Err(Error::Config("propagation needs at least one layer".into()));
    }
    if l0.rows() != graph.node_count() {
        return Err(Error::shape(
            "propagate",
            l0.shape(),
            (graph.node_count(), l0.cols()),
        ));
    }
    if config.variant.uses_attention() {
        check_attention(l0, attention)?;
    }
    let mut layers = Vec::with_capacity(config.layers + 1);
    layers.push(l0.clone());
    let mut per_layer = Vec::new();
    if !config.recompute_per_layer {
        per_layer.push(coefficients(config.variant, l0, graph, attention)?);
    }
    for gamma in 1..=config.layers {
        if config.recompute_per_layer {
            per_layer.push(coefficients(
                config.variant,
                &layers[gamma - 1],
                graph,
                attention,
            )?);
        }
        let coefs = &per_layer[per_layer.len() - 1].coefs;
        let next = propagate_layer(l0, &layers[gamma - 1], graph, coefs);
        layers.push(next);
    }
    Ok(PropagationTrace { layers, per_layer })
}

/// Any variant, returning only the final layer.
pub fn propagate_variant(
    l0: &Matrix,
    graph: &GridGraph,
    attention: &Matrix,
    config: &PropagationConfig,
) -> Result<Matrix> {
    let mut trace = propagate_forward(l0, graph, attention, config)?;
    Ok(trace.layers.pop().expect("non-empty"))
}

/// Gradients of a scalar loss with respect to `l^(0)` and the attention
/// vector, given `∂loss/∂l^(L)`.
pub fn propagate_backward(
    trace: &PropagationTrace,
    graph: &GridGraph,
    attention: &Matrix,
    config: &PropagationConfig,
    grad_out: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let out = trace.output();
    out.same_shape(grad_out, "propagate_backward")?;
    let (n, h) = out.shape();
    let l_count = trace.layers.len() - 1;
    let mut grads: Vec<Matrix> = (0..=l_count).map(|_| Matrix::zeros(n, h)).collect();
    grads[l_count] = grad_out.clone();
    let mut grad_attention = Matrix::zeros(1, h);
    let a = attention.as_slice();
    let cols = graph.col_indices();

    for gamma in (1..=l_count).rev() {
        let g = grads[gamma].clone();
        grads[0].add_assign(&g)?;
        let lc = trace.coefs_for(gamma);
        let prev = &trace.layers[gamma - 1];

        // ∂/∂prev and ∂/∂c
        let mut dcoef = vec![0.0; graph.entry_count()];
        {
            let gp = &mut grads[gamma - 1];
            for i in 0..n {
                let gi = g.row(i);
                for e in graph.entry_range(i) {
                    let j = cols[e];
                    let c = lc.coefs[e];
                    let pj = prev.row(j);
                    let mut d = 0.0;
                    for k in 0..h {
                        d += gi[k] * pj[k];
                    }
                    dcoef[e] = d;
                    let dst = gp.row_mut(j);
                    for k in 0..h {
                        dst[k] += c * gi[k];
                    }
                }
            }
        }

        // ∂/∂score
        let dscore: Vec<f64> = match config.variant {
            PropagationVariant::GcnStyle => continue,
            PropagationVariant::Adaptive => dcoef
                .iter()
                .zip(&lc.activations)
                .zip(graph.norms())
                .map(|((d, w), norm)| d * norm * (1.0 - w * w))
                .collect(),
            PropagationVariant::GatStyle => {
                let mut ds = vec![0.0; dcoef.len()];
                for i in 0..n {
                    let r = graph.entry_range(i);
                    let inner: f64 = r.clone().map(|e| lc.activations[e] * dcoef[e]).sum();
                    for e in r {
                        ds[e] = lc.activations[e] * (dcoef[e] - inner);
                    }
                }
                ds
            }
        };

        // scores were built from l^(0) or from l^(γ−1)
        let src_idx = if config.recompute_per_layer {
            gamma - 1
        } else {
            0
        };
        let src = &trace.layers[src_idx];
        let mut grad_src = Matrix::zeros(n, h);
        let ga = grad_attention.as_mut_slice();
        for i in 0..n {
            let li = src.row(i);
            for e in graph.entry_range(i) {
                let ds = dscore[e];
                if ds == 0.0 {
                    continue;
                }
                let j = cols[e];
                let lj = src.row(j);
                for k in 0..h {
                    ga[k] += ds * (li[k] + lj[k]);
                }
                for k in 0..h {
                    grad_src.row_mut(i)[k] += ds * a[k];
                }
                let gj = grad_src.row_mut(j);
                for k in 0..h {
                    gj[k] += ds * a[k];
                }
            }
        }
        grads[src_idx].add_assign(&grad_src)?;
    }
    let grad_l0 = grads.swap_remove(0);
    Ok((grad_l0, grad_attention))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Connectivity;
    use crate::numerics::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng, scale: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn averaging() {
        let m = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 4.0]]);
        assert_eq!(average_latents(&m, &m).unwrap(), m);
        assert_eq!(
            average_latents(&m, &m.scale(-1.0)).unwrap(),
            Matrix::zeros(2, 2)
        );
        let a = Matrix::from_rows(&[&[1.0, 3.0]]);
        let b = Matrix::from_rows(&[&[3.0, 1.0]]);
        assert_eq!(
            average_latents(&a, &b).unwrap(),
            Matrix::from_rows(&[&[2.0, 2.0]])
        );
        assert!(average_latents(&a, &m).is_err());
    }

    #[test]
    fn edge_weight_examples() {
        let g = GridGraph::build(2, 1, Connectivity::Four).unwrap();
        let l = Matrix::from_rows(&[&[0.1, 0.2], &[0.15, 0.05]]);
        let zero = compute_edge_weights(&l, &g, &Matrix::zeros(1, 2)).unwrap();
        assert!(zero.values.iter().all(|&w| w == 0.0));
        // (l_0 + l_1)·a = 0.25·1 + 0.25·1 = 0.5
        let w = compute_edge_weights(&l, &g, &Matrix::from_rows(&[&[1.0, 1.0]])).unwrap();
        assert!((w.get(&g, 0, 1).unwrap() - 0.46211715726000974).abs() < 1e-12);
    }

    #[test]
    fn edge_weights_bounded_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = GridGraph::build(6, 5, Connectivity::Eight).unwrap();
        let l = random(30, 8, &mut rng, 1e3);
        let a = random(1, 8, &mut rng, 1.0);
        let w = compute_edge_weights(&l, &g, &a).unwrap();
        for i in 0..g.node_count() {
            for &j in g.neighbors(i) {
                let wij = w.get(&g, i, j).unwrap();
                assert!((-1.0..=1.0).contains(&wij));
                assert_eq!(wij.to_bits(), w.get(&g, j, i).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn isolated_node_keeps_features() {
        let g = GridGraph::build(1, 1, Connectivity::Four).unwrap();
        let l0 = Matrix::from_rows(&[&[0.3, -1.2]]);
        let w = EdgeWeights { values: vec![] };
        for layers in 1..4 {
            assert_eq!(propagate(&l0, &g, &w, layers).unwrap(), l0);
        }
    }

    #[test]
    fn two_node_sign() {
        let g = GridGraph::build(2, 1, Connectivity::Four).unwrap();
        let l0 = Matrix::from_rows(&[&[1.0, 2.0], &[10.0, 20.0]]);
        let plus = propagate(
            &l0,
            &g,
            &EdgeWeights {
                values: vec![1.0, 1.0],
            },
            1,
        )
        .unwrap();
        assert_eq!(plus, Matrix::from_rows(&[&[11.0, 22.0], &[11.0, 22.0]]));
        let minus = propagate(
            &l0,
            &g,
            &EdgeWeights {
                values: vec![-1.0, -1.0],
            },
            1,
        )
        .unwrap();
        assert_eq!(minus, Matrix::from_rows(&[&[-9.0, -18.0], &[9.0, 18.0]]));
    }

    #[test]
    fn zero_weights_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let g = GridGraph::build(5, 5, Connectivity::Four).unwrap();
        let l0 = random(25, 3, &mut rng, 1.0);
        let w = EdgeWeights {
            values: vec![0.0; g.entry_count()],
        };
        assert_eq!(propagate(&l0, &g, &w, 5).unwrap(), l0);
    }

    #[test]
    fn gcn_style_two_nodes() {
        let g = GridGraph::build(2, 1, Connectivity::Four).unwrap();
        let l0 = Matrix::from_rows(&[&[1.0], &[3.0]]);
        let cfg = PropagationConfig {
            layers: 1,
            variant: PropagationVariant::GcnStyle,
            recompute_per_layer: false,
        };
        let out = propagate_variant(&l0, &g, &Matrix::zeros(1, 1), &cfg).unwrap();
        assert_eq!(out, Matrix::from_rows(&[&[4.0], &[4.0]]));
    }

    #[test]
    fn gat_style_normalizes_per_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g = GridGraph::build(4, 4, Connectivity::Four).unwrap();
        let cfg = PropagationConfig {
            layers: 1,
            variant: PropagationVariant::GatStyle,
            recompute_per_layer: false,
        };
        let l0 = random(16, 3, &mut rng, 2.0);
        let a = random(1, 3, &mut rng, 1.0);
        let trace = propagate_forward(&l0, &g, &a, &cfg).unwrap();
        let c = trace.layer_coefficients(1);
        for i in 0..16 {
            let s: f64 = c[g.entry_range(i)].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(c[g.entry_range(i)].iter().all(|&v| v >= 0.0));
        }
        // equal scores (a = 0) give uniform 1/|N(i)|
        let flat = propagate_forward(&l0, &g, &Matrix::zeros(1, 3), &cfg).unwrap();
        let c = flat.layer_coefficients(1);
        for i in 0..16 {
            for e in g.entry_range(i) {
                assert!((c[e] - 1.0 / g.degree(i) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unknown_variant() {
        assert!(matches!(
            "sage".parse::<PropagationVariant>(),
            Err(Error::Config(_))
        ));
        assert_eq!(
            "gat-style".parse::<PropagationVariant>().unwrap(),
            PropagationVariant::GatStyle
        );
    }

    fn check_backward(variant: PropagationVariant, recompute: bool, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GridGraph::build(4, 3, Connectivity::Four).unwrap();
        let cfg = PropagationConfig {
            layers: 3,
            variant,
            recompute_per_layer: recompute,
        };
        let l0 = random(12, 4, &mut rng, 1.0);
        let a = random(1, 4, &mut rng, 1.0);
        let c = random(12, 4, &mut rng, 1.0);
        let readout = |p: &[Matrix]| -> f64 {
            let out = propagate_variant(&p[0], &g, &p[1], &cfg).unwrap();
            out.as_slice()
                .iter()
                .zip(c.as_slice())
                .map(|(x, y)| x * y)
                .sum()
        };
        let trace = propagate_forward(&l0, &g, &a, &cfg).unwrap();
        let (gl, ga) = propagate_backward(&trace, &g, &a, &cfg, &c).unwrap();
        let r = finite_diff_check(readout, &[l0, a], &[gl, ga], 1e-6).unwrap();
        assert!(
            r.max_rel_error < 1e-4,
            "{variant:?} recompute={recompute}: {r:?}"
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (k, variant) in [
            PropagationVariant::Adaptive,
            PropagationVariant::GcnStyle,
            PropagationVariant::GatStyle,
        ]
        .into_iter()
        .enumerate()
        {
            check_backward(variant, false, 40 + k as u64);
            check_backward(variant, true, 50 + k as u64);
        }
    }

    #[test]
    fn jacobian_sign_matches_edge_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let g = GridGraph::build(5, 5, Connectivity::Four).unwrap();
        let l0 = random(25, 3, &mut rng, 1.0);
        let a = random(1, 3, &mut rng, 2.0);
        let w = compute_edge_weights(&l0, &g, &a).unwrap();
        let coefs: Vec<f64> = w.values.iter().zip(g.norms()).map(|(w, n)| w * n).collect();
        let prev = random(25, 3, &mut rng, 1.0);
        let base = propagate_layer(&l0, &prev, &g, &coefs);
        let (i, j) = (g.node_index(2, 2), g.node_index(2, 3));
        for k in 0..3 {
            let mut bumped = prev.clone();
            bumped.set(j, k, prev.get(j, k) + 1.0);
            let out = propagate_layer(&l0, &bumped, &g, &coefs);
            let wij = w.get(&g, i, j).unwrap();
            let d = out.get(i, k) - base.get(i, k);
            assert_eq!(d.signum(), wij.signum());
            assert!((d.abs() - wij.abs() / 4.0).abs() < 1e-8);
        }
    }
}

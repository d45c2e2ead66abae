use ndarray::Array2;

use super::Real;
use crate::graph::{GraspGraph, FEATURE_DIM};
use crate::{Error, Result};

/// In-neighbor lists in CSR form: the sources of edges into node `i` are
/// `sources[offsets[i]..offsets[i + 1]]`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Neighborhoods {
    pub offsets: Vec<usize>,
    pub sources: Vec<u32>,
}

impl Neighborhoods {
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for (src, dst) in edges {
            if src >= n_nodes || dst >= n_nodes {
                return Err(Error::Shape(format!("edge ({src}, {dst}) outside {n_nodes} nodes")));
            }
            lists[dst].push(src as u32);
        }
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            sources.extend(l);
            offsets.push(sources.len());
        }
        Ok(Neighborhoods { offsets, sources })
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, i: usize) -> &[u32] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Several graphs packed as one disjoint union. Graph `g` owns nodes
/// `node_offsets[g]..node_offsets[g + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch<T> {
    pub x: Array2<T>,
    pub neighbors: Neighborhoods,
    pub node_offsets: Vec<usize>,
}

impl<T: Real> GraphBatch<T> {
    pub fn new(graphs: &[&GraspGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let mut x = Array2::zeros((total, FEATURE_DIM));
        let mut node_offsets = vec![0];
        let mut edges = Vec::new();
        let mut base = 0;
        for (gi, gr) in graphs.iter().enumerate() {
            if gr.num_nodes() == 0 {
                return Err(Error::Shape(format!("graph {gi} of the batch has no nodes")));
            }
            if gr.node_features.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("graph {gi} of the batch has a non-finite node feature")));
            }
            for (i, f) in gr.node_features.iter().enumerate() {
                for (j, v) in f.iter().enumerate() {
                    x[(base + i, j)] = T::from(*v).expect("finite feature");
                }
            }
            for &(a, b) in &gr.edges {
                if a as usize >= gr.num_nodes() || b as usize >= gr.num_nodes() {
                    return Err(Error::Shape(format!("graph {gi}: edge ({a}, {b}) out of range")));
                }
                edges.push((base + a as usize, base + b as usize));
            }
            base += gr.num_nodes();
            node_offsets.push(base);
        }
        Ok(GraphBatch {
            x,
            neighbors: Neighborhoods::from_edges(total, edges)?,
            node_offsets,
        })
    }

    pub fn single(graph: &GraspGraph) -> Result<Self> {
        Self::new(&[graph])
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }
}

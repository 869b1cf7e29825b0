use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub type NodeId = usize;
pub type DomainId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub text: Option<String>,
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl NodeRecord {
    pub fn new(id: NodeId, text: Option<&str>, label: Option<usize>) -> Self {
        Self {
            id,
            text: text.map(str::to_owned),
            label,
            features: None,
        }
    }

    pub fn has_text(&self) -> bool {
        self.text.is_some()
    }
}

/// Normalize a raw text attribute: trimmed, with blank strings treated as missing.
pub fn clean_text(text: Option<&str>) -> Option<String> {
    text.map(str::trim).filter(|t| !t.is_empty()).map(str::to_owned)
}

/// An undirected text-attributed graph belonging to one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTag {
    name: String,
    domain_id: DomainId,
    nodes: Vec<NodeRecord>,
    edges: Vec<(NodeId, NodeId)>,
    adj: Vec<Vec<NodeId>>,
}

impl SparseTag {
    /// Validate and normalize. Node `i` must carry id `i`; edges are stored
    /// once as `(min, max)` with self-loops and duplicates removed.
    pub fn new(
        name: impl Into<String>,
        domain_id: DomainId,
        mut nodes: Vec<NodeRecord>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.id != i {
                return Err(CoreError::Validation(format!(
                    "node at position {i} has id {}; ids must be contiguous from 0",
                    node.id
                )));
            }
            node.text = clean_text(node.text.as_deref());
        }
        let n = nodes.len();
        let mut norm = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(CoreError::Validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u != v {
                norm.push((u.min(v), u.max(v)));
            }
        }
        norm.sort_unstable();
        norm.dedup();
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &norm {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self {
            name: name.into(),
            domain_id,
            nodes,
            edges: norm,
            adj,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain_id(&self) -> DomainId {
        self.domain_id
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeRecord {
        &self.nodes[id]
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbor list.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adj[id]
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.adj[id].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    pub fn num_texted(&self) -> usize {
        self.nodes.iter().filter(|n| n.has_text()).count()
    }

    pub fn is_text_free(&self) -> bool {
        self.num_texted() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| n.label)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Same topology and labels with replaced texts.
    pub(crate) fn with_texts(&self, texts: Vec<Option<String>>) -> Self {
        let mut out = self.clone();
        for (node, text) in out.nodes.iter_mut().zip(texts) {
            node.text = clean_text(text.as_deref());
        }
        out
    }
}

/// Induced subgraph around a center node. The center is always local index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub node_ids: Vec<NodeId>,
    pub center: usize,
    pub local_edges: Vec<(usize, usize)>,
    pub parent_domain: DomainId,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.local_edges.len()
    }

    /// Sorted local adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(u, v) in &self.local_edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for &(u, v) in &self.local_edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn triangles(&self) -> usize {
        let adj = self.adjacency();
        self.local_edges
            .iter()
            .map(|&(u, v)| {
                let (hi, lo) = (u.max(v), u.min(v));
                adj[lo]
                    .iter()
                    .filter(|&&w| w > hi && adj[hi].binary_search(&w).is_ok())
                    .count()
            })
            .sum()
    }
}

/// One graph-text training pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub subgraph: Subgraph,
    pub semantic_summary: String,
    pub structure_description: String,
    pub domain_id: DomainId,
}

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::graph::{NodeId, SparseTag, Subgraph};
use crate::error::{CoreError, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub hops: usize,
    pub max_nodes: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            max_nodes: 64,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_nodes == 0 {
            return Err(CoreError::Config("sampler.max_nodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Breadth-first ball around `center`. Each hop's new nodes are appended in
/// ascending id order; the hop that would overflow `max_nodes` is uniformly
/// subsampled and expansion stops there.
pub fn sample_subgraph(tag: &SparseTag, center: NodeId, cfg: &SamplerConfig, seed: u64) -> Subgraph {
    let mut local: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut node_ids = vec![center];
    local.insert(center, 0);
    let mut frontier = vec![center];
    for hop in 0..cfg.hops {
        if node_ids.len() >= cfg.max_nodes {
            break;
        }
        let mut next: Vec<NodeId> = frontier
            .iter()
            .flat_map(|&u| tag.neighbors(u).iter().copied())
            .filter(|v| !local.contains_key(v))
            .collect();
        next.sort_unstable();
        next.dedup();
        if next.is_empty() {
            break;
        }
        let room = cfg.max_nodes - node_ids.len();
        let overflow = next.len() > room;
        if overflow {
            let mut rng = seed::rng_for(seed, "sampler", (center as u64) << 8 | hop as u64);
            let mut picked: Vec<NodeId> = index::sample(&mut rng, next.len(), room)
                .into_iter()
                .map(|i| next[i])
                .collect();
            picked.sort_unstable();
            next = picked;
        }
        for &v in &next {
            local.insert(v, node_ids.len());
            node_ids.push(v);
        }
        if overflow {
            break;
        }
        frontier = next;
    }

    let mut local_edges = Vec::new();
    for (i, &u) in node_ids.iter().enumerate() {
        for v in tag.neighbors(u) {
            if let Some(&j) = local.get(v) {
                if i < j {
                    local_edges.push((i, j));
                }
            }
        }
    }
    local_edges.sort_unstable();
    Subgraph {
        node_ids,
        center: 0,
        local_edges,
        parent_domain: tag.domain_id(),
    }
}

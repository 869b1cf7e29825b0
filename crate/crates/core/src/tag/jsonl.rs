//! TAG-JSONL: a header line followed by one node or edge object per line.
//!
//! ```text
//! {"kind":"tag","domain_id":1,"name":"arxiv-mini"}
//! {"node":{"id":0,"text":"graph neural networks","label":2}}
//! {"node":{"id":7,"text":null,"label":null}}
//! {"edge":[0,7]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{DomainId, NodeRecord, SparseTag};
use crate::error::{CoreError, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    domain_id: DomainId,
    name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: i64,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    label: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
enum Line {
    Node(RawNode),
    Edge([i64; 2]),
}

fn parse_err(line: usize, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        line,
        message: message.into(),
    }
}

/// Parse TAG-JSONL from a reader. Original node ids may be any distinct
/// integers; they are remapped to `0..n` in ascending order.
pub fn read_tag(reader: impl BufRead) -> Result<SparseTag> {
    let mut header: Option<Header> = None;
    let mut nodes: BTreeMap<i64, RawNode> = BTreeMap::new();
    let mut raw_edges: Vec<(usize, [i64; 2])> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| parse_err(lineno, format!("bad header: {e}")))?;
            if h.kind != "tag" {
                return Err(parse_err(lineno, format!("header kind `{}` is not `tag`", h.kind)));
            }
            header = Some(h);
            continue;
        }
        match serde_json::from_str::<Line>(&line).map_err(|e| parse_err(lineno, e.to_string()))? {
            Line::Node(node) => {
                if nodes.contains_key(&node.id) {
                    return Err(CoreError::Validation(format!(
                        "duplicate node id {} on line {lineno}",
                        node.id
                    )));
                }
                nodes.insert(node.id, node);
            }
            Line::Edge(pair) => raw_edges.push((lineno, pair)),
        }
    }
    let header = header.ok_or_else(|| parse_err(1, "missing header line"))?;
    let index: BTreeMap<i64, usize> = nodes.keys().enumerate().map(|(i, &k)| (k, i)).collect();
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (lineno, [u, v]) in raw_edges {
        let lookup = |x: i64| {
            index.get(&x).copied().ok_or_else(|| {
                CoreError::Validation(format!("edge on line {lineno} references unknown node {x}"))
            })
        };
        edges.push((lookup(u)?, lookup(v)?));
    }
    let records = nodes
        .into_values()
        .enumerate()
        .map(|(i, raw)| NodeRecord {
            id: i,
            text: raw.text,
            label: raw.label,
            features: None,
        })
        .collect();
    SparseTag::new(header.name, header.domain_id, records, edges)
}

pub fn load_tag(path: impl AsRef<Path>) -> Result<SparseTag> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    read_tag(BufReader::new(file))
}

pub fn write_tag(tag: &SparseTag, mut out: impl Write) -> std::io::Result<()> {
    let header = Header {
        kind: "tag".into(),
        domain_id: tag.domain_id(),
        name: tag.name().into(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for node in tag.nodes() {
        let line = Line::Node(RawNode {
            id: node.id as i64,
            text: node.text.clone(),
            label: node.label,
        });
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    for &(u, v) in tag.edges() {
        writeln!(out, "{}", serde_json::to_string(&Line::Edge([u as i64, v as i64]))?)?;
    }
    Ok(())
}

pub fn save_tag(tag: &SparseTag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_tag(tag, &mut buf).map_err(|e| CoreError::io(path, e))?;
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"kind":"tag","domain_id":2,"name":"toy"}"#;

    fn parse(body: &str) -> Result<SparseTag> {
        read_tag(format!("{HEADER}\n{body}").as_bytes())
    }

    #[test]
    fn three_node_path() {
        let tag = parse(
            r#"{"node":{"id":0,"text":"a","label":0}}
{"node":{"id":1,"text":null,"label":1}}
{"node":{"id":2,"text":"c","label":null}}
{"edge":[0,1]}
{"edge":[1,2]}"#,
        )
        .unwrap();
        assert_eq!(tag.num_nodes(), 3);
        assert_eq!(tag.num_edges(), 2);
        assert_eq!(tag.domain_id(), 2);
        assert_eq!(tag.node(1).text, None);
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let err = parse(
            r#"{"node":{"id":0,"text":"a","label":0}}
{"node":{"id":1,"text":"b","label":0}}
{"node":{"id":2,"text":"c","label":0}}
{"edge":[0,5]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)), "{err}");
    }

    #[test]
    fn reversed_duplicate_edge_is_merged() {
        let tag = parse(
            r#"{"node":{"id":0,"text":"a","label":0}}
{"node":{"id":1,"text":"b","label":0}}
{"edge":[0,1]}
{"edge":[1,0]}"#,
        )
        .unwrap();
        assert_eq!(tag.num_edges(), 1);
    }

    #[test]
    fn duplicate_node_is_rejected() {
        let err = parse(
            r#"{"node":{"id":0,"text":"a","label":0}}
{"node":{"id":0,"text":"b","label":0}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Validation(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("{\"node\":{\"id\":0}}\n{\"edge\":[0]}").unwrap_err();
        match err {
            CoreError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sparse_ids_are_remapped_in_order() {
        let tag = parse(
            r#"{"node":{"id":40,"text":"forty","label":null}}
{"node":{"id":-3,"text":"minus","label":null}}
{"edge":[40,-3]}"#,
        )
        .unwrap();
        assert_eq!(tag.node(0).text.as_deref(), Some("minus"));
        assert_eq!(tag.edges(), &[(0, 1)]);
    }

    #[test]
    fn write_then_read_round_trips() {
        let tag = parse(
            r#"{"node":{"id":0,"text":"a b","label":3}}
{"node":{"id":1,"text":null,"label":null}}
{"edge":[1,0]}"#,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_tag(&tag, &mut buf).unwrap();
        assert_eq!(read_tag(buf.as_slice()).unwrap(), tag);
    }
}

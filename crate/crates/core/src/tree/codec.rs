//! Line-oriented tree file: a header line, a metadata line, then one JSON
//! object per entry in pre-order.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Child, ForgottenPlaceholder, HistoryTree, NodeId, NodeKind, SceneInstant, TreeNode};
use crate::time::{TimeSpan, Timestamp};

pub const FORMAT_HEADER: &str = "emtree/1";

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unsupported format header {0:?}")]
    Header(String),
}

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u64,
    max_depth: u8,
    next_id: u64,
    summary: String,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<NodeKind>,
    span: TimeSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expiration: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    never_expires: bool,
    #[serde(default)]
    summary: String,
    parent_id: Option<NodeId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    placeholder: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_id: Option<String>,
}

pub fn write_tree(tree: &HistoryTree, mut w: impl Write) -> Result<(), CodecError> {
    writeln!(w, "{FORMAT_HEADER}")?;
    let meta = Meta {
        version: tree.version(),
        max_depth: tree.max_depth(),
        next_id: tree.ids,
        summary: tree.summary.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&meta).expect("meta serializes"))?;
    fn emit(children: &[Child], parent: Option<NodeId>, w: &mut impl Write) -> Result<(), CodecError> {
        for c in children {
            let entry = match c {
                Child::Forgotten(p) => Entry {
                    id: None,
                    level: None,
                    kind: None,
                    span: p.span,
                    expiration: None,
                    never_expires: false,
                    summary: p.short_summary.clone(),
                    parent_id: parent,
                    placeholder: true,
                    attributes: None,
                    source_id: None,
                },
                Child::Node(n) => Entry {
                    id: Some(n.id),
                    level: Some(n.level),
                    kind: Some(n.kind()),
                    span: n.span,
                    expiration: Some(n.expiration),
                    never_expires: n.never_expires,
                    summary: n.summary.clone(),
                    parent_id: parent,
                    placeholder: false,
                    attributes: n.scene.as_ref().map(|s| s.attributes.clone()),
                    source_id: n.scene.as_ref().map(|s| s.source_id.clone()),
                },
            };
            writeln!(w, "{}", serde_json::to_string(&entry).expect("entry serializes"))?;
            if let Child::Node(n) = c {
                emit(&n.children, Some(n.id), w)?;
            }
        }
        Ok(())
    }
    emit(&tree.children, None, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tree(r: impl BufRead) -> Result<HistoryTree, CodecError> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != FORMAT_HEADER {
        return Err(CodecError::Header(header));
    }
    let meta_line = lines.next().transpose()?.ok_or(CodecError::Malformed { line: 2, msg: "missing metadata".into() })?;
    let meta: Meta = serde_json::from_str(&meta_line).map_err(|e| CodecError::Malformed { line: 2, msg: e.to_string() })?;
    if meta.max_depth == 0 {
        return Err(CodecError::Malformed { line: 2, msg: "max_depth must be positive".into() });
    }

    let mut by_parent: HashMap<Option<NodeId>, Vec<Entry>> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(&line).map_err(|e| CodecError::Malformed { line: i + 3, msg: e.to_string() })?;
        if !entry.placeholder && entry.id.is_none() {
            return Err(CodecError::Malformed { line: i + 3, msg: "node without id".into() });
        }
        by_parent.entry(entry.parent_id).or_default().push(entry);
    }

    fn build(parent: Option<NodeId>, by_parent: &mut HashMap<Option<NodeId>, Vec<Entry>>) -> Result<Vec<Child>, CodecError> {
        let entries = by_parent.remove(&parent).unwrap_or_default();
        let mut out = Vec::with_capacity(entries.len());
        for e in entries {
            if e.placeholder {
                out.push(Child::Forgotten(ForgottenPlaceholder { span: e.span, short_summary: e.summary }));
                continue;
            }
            let id = e.id.expect("checked above");
            let level = e.level.ok_or(CodecError::Malformed { line: 0, msg: format!("node {id} has no level") })?;
            let scene = e.attributes.map(|attributes| SceneInstant {
                at: e.span.start,
                attributes,
                source_id: e.source_id.unwrap_or_default(),
            });
            let children = build(Some(id), by_parent)?;
            out.push(Child::Node(TreeNode {
                id,
                level,
                span: e.span,
                summary: e.summary,
                children,
                expiration: e.expiration.unwrap_or(e.span.end),
                never_expires: e.never_expires,
                scene,
            }));
        }
        Ok(out)
    }

    let children = build(None, &mut by_parent)?;
    if let Some(orphan) = by_parent.keys().next() {
        return Err(CodecError::Malformed { line: 0, msg: format!("entries reference unknown parent {orphan:?}") });
    }
    let mut tree = HistoryTree::new(meta.max_depth);
    tree.children = children;
    tree.summary = meta.summary;
    tree.set_version(meta.version);
    tree.ids = meta.next_id.max(1);
    Ok(tree)
}

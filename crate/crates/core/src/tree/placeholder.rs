use tracing::warn;

use super::{Child, ForgottenPlaceholder, TreeNode};

pub const SHORT_SUMMARY_MAX_CHARS: usize = 200;

fn truncate_line(s: &str) -> String {
    let line = s.lines().next().unwrap_or("").trim();
    match line.char_indices().nth(SHORT_SUMMARY_MAX_CHARS) {
        Some((idx, _)) => line[..idx].to_string(),
        None => line.to_string(),
    }
}

/// Replaces a subtree with its tombstone: the span and the first summary line.
pub fn forget_node(node: &TreeNode) -> ForgottenPlaceholder {
    if node.summary.trim().is_empty() {
        warn!(node = %node.id, "forgetting a node with an empty summary");
    }
    ForgottenPlaceholder {
        span: node.span,
        short_summary: truncate_line(&node.summary),
    }
}

/// Collapses every run of consecutive placeholders into one whose span is the
/// hull of the run and whose summary joins theirs with `"; "`.
pub fn merge_adjacent_placeholders(children: &mut Vec<Child>) {
    if children.windows(2).all(|w| !(w[0].is_placeholder() && w[1].is_placeholder())) {
        return;
    }
    let mut out: Vec<Child> = Vec::with_capacity(children.len());
    for c in children.drain(..) {
        match (out.last_mut(), c) {
            (Some(Child::Forgotten(prev)), Child::Forgotten(next)) => {
                prev.span = prev.span.hull(&next.span);
                let joined = match (prev.short_summary.is_empty(), next.short_summary.is_empty()) {
                    (_, true) => prev.short_summary.clone(),
                    (true, false) => next.short_summary,
                    (false, false) => format!("{}; {}", prev.short_summary, next.short_summary),
                };
                prev.short_summary = truncate_line(&joined);
            }
            (_, c) => out.push(c),
        }
    }
    *children = out;
}

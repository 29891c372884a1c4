use super::{Child, TreeNode, SCENE_LEVEL};

/// Who the text is for. The QA agent only learns that something was
/// forgotten; the summarizer also gets the tombstone text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Audience {
    Qa,
    Summarizer,
}

/// One line per entry:
/// `[12] goal 2024/04/24 09:00–09:20 (3 children) | made coffee`,
/// `[15] scene 2024/04/24 09:00:05 | action=Pickup(Cup_0)`,
/// `forgotten: 2024/04/24 09:00–09:20`.
pub fn entry_line(child: &Child, audience: Audience) -> String {
    match child {
        Child::Forgotten(p) => match audience {
            Audience::Qa => format!("forgotten: {}", p.span),
            Audience::Summarizer if p.short_summary.is_empty() => format!("forgotten: {}", p.span),
            Audience::Summarizer => format!("forgotten: {} | {}", p.span, p.short_summary),
        },
        Child::Node(n) => node_line(n),
    }
}

pub fn node_line(n: &TreeNode) -> String {
    if n.level == SCENE_LEVEL {
        return format!("[{}] scene {} | {}", n.id, n.span.start.format_seconds(), n.first_line());
    }
    let count = n.children.len();
    let children = match count {
        0 => String::new(),
        1 => " (1 child)".to_string(),
        k => format!(" ({k} children)"),
    };
    format!("[{}] {} {}{} | {}", n.id, n.kind().label(), n.span, children, n.first_line())
}

/// Renders a node and its descendants down to `depth` levels. Entries below
/// the limit appear as `[id] <first summary line>` stubs.
pub fn render(node: &TreeNode, audience: Audience, depth: usize) -> String {
    let mut out = String::new();
    render_node(node, audience, depth, 0, &mut out);
    out
}

fn render_node(n: &TreeNode, audience: Audience, depth: usize, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    if depth == 0 {
        out.push_str(&format!("{pad}[{}] {}\n", n.id, n.first_line()));
        return;
    }
    out.push_str(&pad);
    out.push_str(&node_line(n));
    out.push('\n');
    for extra in n.summary.lines().skip(1) {
        out.push_str(&format!("{pad}    {extra}\n"));
    }
    for c in &n.children {
        match c {
            Child::Node(child) => render_node(child, audience, depth - 1, indent + 1, out),
            Child::Forgotten(_) => {
                out.push_str(&"  ".repeat(indent + 1));
                out.push_str(&entry_line(c, audience));
                out.push('\n');
            }
        }
    }
}

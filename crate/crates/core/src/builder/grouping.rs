use std::collections::HashMap;

use super::{joined_first_lines, refresh_parent, BuildContext, Spend};
use crate::forgetting::initial_expiration;
use crate::lm::parse::{parse_grouping, GroupingDirective};
use crate::lm::{Bindings, LmError, PromptKind};
use crate::rules::render_rules;
use crate::time::{TimeSpan, Timestamp};
use crate::tree::{entry_line, merge_adjacent_placeholders, Audience, Child, IdAllocator, Level, NodeId, TreeNode};

#[derive(Clone, Debug)]
pub struct Grouped {
    pub parents: Vec<TreeNode>,
    /// The reply could not be used and the mechanical grouping was applied.
    pub fallback: bool,
    pub spend: Spend,
}

/// Checks directives against `n` presented items of which the newest `n_new`
/// are new. `owners[i]` is the existing parent of item `i` (oldest first).
/// Returns `k`, the number of the oldest regrouped item.
pub fn validate_directives(
    ds: &[GroupingDirective],
    n: usize,
    n_new: usize,
    owners: &[Option<usize>],
) -> Result<usize, &'static str> {
    let Some(first) = ds.first() else { return Err("no groups") };
    if ds.iter().any(|d| d.from >= n || d.to > d.from) {
        return Err("range out of bounds");
    }
    if ds.iter().any(|d| d.summary.trim().is_empty()) {
        return Err("empty summary");
    }
    for w in ds.windows(2) {
        if w[0].to != w[1].from + 1 {
            return Err("ranges overlap or leave a hole");
        }
    }
    if ds.last().expect("non-empty").to != 0 {
        return Err("last group does not end at the newest item");
    }
    let k = first.from;
    if k + 1 < n_new {
        return Err("some new items are not grouped");
    }
    if k + 1 < n {
        // Item k+1 is the newest one left alone; it must not share a parent
        // with item k.
        let above = n - 2 - k;
        let here = n - 1 - k;
        if owners[above].is_some() && owners[above] == owners[here] {
            return Err("a range cuts an existing group in two");
        }
    }
    Ok(k)
}

struct Candidate {
    summary: String,
    used: bool,
}

/// One grouping call over the children of `parents` (all at `level + 1`)
/// followed by `new_items`. Parents entirely older than the regrouped range
/// come back unchanged; everything else is rebuilt from the directives.
/// `former` names the parent the new items were detached from, if any, so
/// that an identical regrouping keeps its id.
pub fn group_and_summarize(
    parents: Vec<TreeNode>,
    new_items: Vec<Child>,
    level: Level,
    former: Option<(NodeId, &str)>,
    ctx: &BuildContext<'_>,
    ids: &mut IdAllocator,
) -> Result<Grouped, LmError> {
    let mut spend = Spend::default();
    if new_items.is_empty() {
        return Ok(Grouped { parents, fallback: false, spend });
    }
    let n_old: usize = parents.iter().map(|p| p.children.len()).sum();
    let n_new = new_items.len();
    let n = n_old + n_new;
    let num = |idx: usize| n - 1 - idx;

    let mut owners: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut previous = String::new();
    let mut idx = 0;
    for (j, p) in parents.iter().enumerate() {
        if p.children.is_empty() {
            continue;
        }
        let a = num(idx);
        let b = num(idx + p.children.len() - 1);
        previous.push_str(&format!("# group ({a}-{b}): {}\n", p.first_line()));
        for c in &p.children {
            previous.push_str(&format!("{}: {}\n", num(idx), entry_line(c, Audience::Summarizer)));
            owners.push(Some(j));
            idx += 1;
        }
    }
    let mut current = String::new();
    for c in &new_items {
        current.push_str(&format!("{}: {}\n", num(idx), entry_line(c, Audience::Summarizer)));
        owners.push(None);
        idx += 1;
    }
    if previous.is_empty() {
        previous.push_str("(none)\n");
    }
    let bindings = Bindings::new()
        .with("rules", render_rules(ctx.rules))
        .with("previous", previous.trim_end())
        .with("current", current.trim_end());
    let reply = ctx.gateway.run(PromptKind::Grouping, &bindings)?;
    spend.add(reply.usage);

    let parsed = parse_grouping(&reply.text).map_err(|e| e.to_string());
    let checked = parsed.and_then(|ds| validate_directives(&ds, n, n_new, &owners).map(|k| (ds, k)).map_err(str::to_string));
    let (directives, k, fallback) = match checked {
        Ok((ds, k)) => (ds, k, false),
        Err(why) => {
            tracing::warn!(level, "grouping reply rejected ({why}); new items form one group");
            let d = GroupingDirective { from: n_new - 1, to: 0, summary: joined_first_lines(&new_items) };
            (vec![d], n_new - 1, true)
        }
    };

    let first_idx = n - 1 - k;
    let mut kept: Vec<TreeNode> = Vec::new();
    let mut items: Vec<(Child, Option<usize>)> = Vec::with_capacity(n - first_idx);
    let mut candidates: HashMap<NodeId, Candidate> = HashMap::new();
    let mut inherited: HashMap<usize, (NodeId, Timestamp, bool)> = HashMap::new();
    let mut offset = 0;
    for (j, mut p) in parents.into_iter().enumerate() {
        let len = p.children.len();
        if offset + len <= first_idx {
            offset += len;
            kept.push(p);
            continue;
        }
        offset += len;
        candidates.insert(p.id, Candidate { summary: std::mem::take(&mut p.summary), used: false });
        inherited.insert(j, (p.id, p.expiration, p.never_expires));
        items.extend(p.children.drain(..).map(|c| (c, Some(j))));
    }
    if let Some((id, summary)) = former {
        candidates.entry(id).or_insert(Candidate { summary: summary.to_string(), used: false });
    }
    let former_id = former.map(|(id, _)| id);
    items.extend(new_items.into_iter().map(|c| (c, None)));
    debug_assert_eq!(items.len(), k + 1);

    let mut out = kept;
    let mut rest = items.into_iter();
    for d in directives {
        let take = d.from - d.to + 1;
        let group: Vec<(Child, Option<usize>)> = rest.by_ref().take(take).collect();
        let owner_id = match group[0].1 {
            Some(j) => inherited.get(&j).map(|(id, _, _)| *id),
            None => former_id,
        };
        let reuse = owner_id.filter(|id| {
            candidates.get_mut(id).is_some_and(|c| {
                let ok = !c.used && c.summary == d.summary;
                c.used |= ok;
                ok
            })
        });
        let mut tau = Timestamp::EPOCH;
        let mut never = false;
        for (_, o) in &group {
            if let Some((_, t, nv)) = o.and_then(|j| inherited.get(&j)) {
                tau = tau.max(*t);
                never |= *nv;
            }
        }
        let mut children: Vec<Child> = group.into_iter().map(|(c, _)| c).collect();
        merge_adjacent_placeholders(&mut children);
        let span = TimeSpan::hull_all(children.iter().map(Child::span).collect::<Vec<_>>().iter()).expect("non-empty group");
        let mut node = TreeNode::detached(level + 1, span, d.summary);
        node.id = reuse.unwrap_or_else(|| ids.next_id());
        node.children = children;
        node.expiration = tau.max(initial_expiration(level + 1, span.end, &ctx.config.lifetimes));
        node.never_expires = never;
        refresh_parent(&mut node, &ctx.config.lifetimes);
        out.push(node);
    }
    Ok(Grouped { parents: out, fallback, spend })
}

//! Incremental update of the history tree with a batch of new nodes.
//!
//! The right edge of the tree (the newest node on every level) is taken
//! apart into one frame per level, so that each level's list of parents can
//! be replaced wholesale. The batch is merged into the parents one level up;
//! whatever changed there is detached and merged one level further, until a
//! level comes back unchanged. The frames are then put back together.

use serde::{Deserialize, Serialize};

use super::cluster::{gaps, median, time_based_cluster};
use super::{group_and_summarize, refresh_parent, settle_new, simple_summarize, BuildContext, BuildError, Spend};
use crate::time::{TimeSpan, Timestamp};
use crate::tree::{Child, HistoryTree, IdAllocator, Level, NodeId, TreeNode};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    /// Level of the items being merged; their parents are one above.
    pub level: Level,
    /// Parents one level up that end before this instant were left alone.
    pub cutoff: Timestamp,
    pub frozen: usize,
    pub visible: usize,
    pub clusters: usize,
    pub grouped_clusters: usize,
    pub prevented_push: bool,
    pub fallbacks: usize,
    /// Index of the first parent that differs from before, if any.
    pub first_change: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub version: u64,
    pub committed: bool,
    pub new_items: usize,
    pub levels: Vec<LevelTrace>,
    pub spend: Spend,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Sig {
    Node(NodeId, String),
    Forgotten(TimeSpan),
}

fn sig(c: &Child) -> Sig {
    match c {
        Child::Node(n) => Sig::Node(n.id, n.summary.clone()),
        Child::Forgotten(p) => Sig::Forgotten(p.span),
    }
}

fn check_batch(tree: &HistoryTree, batch: &[TreeNode]) -> Result<Level, BuildError> {
    let level = batch[0].level;
    if let Some(other) = batch.iter().map(|n| n.level).find(|l| *l != level) {
        return Err(BuildError::MixedLevels(level, other));
    }
    let top = tree.top_level();
    if level > top {
        return Err(BuildError::LevelTooHigh { level, top });
    }
    if batch.windows(2).any(|w| w[1].span.start < w[0].span.end) {
        return Err(BuildError::UnsortedBatch);
    }
    if let Some(end) = tree.latest_end() {
        if batch[0].span.start < end {
            return Err(BuildError::OutOfOrder { batch_start: batch[0].span.start, tree_end: end });
        }
    }
    for c in tree.children() {
        if let Child::Node(n) = c {
            if n.level != top {
                return Err(BuildError::Structure(format!("node {} sits under the root at level {}", n.id, n.level)));
            }
        }
    }
    Ok(level)
}

/// Merges `batch` (all on one level, time-ordered, not older than anything
/// in the tree) into `tree`. On success the version goes up by one; on error
/// the tree is left as it was.
pub fn update_tree(tree: &mut HistoryTree, batch: Vec<TreeNode>, ctx: &BuildContext<'_>) -> Result<UpdateReport, BuildError> {
    let mut report = UpdateReport { version: tree.version(), new_items: batch.len(), ..Default::default() };
    if batch.is_empty() {
        return Ok(report);
    }
    let entry = check_batch(tree, &batch)?;
    let lifetimes = &ctx.config.lifetimes;
    let mut work = tree.clone();
    let mut pending: Vec<Child> = Vec::with_capacity(batch.len());
    for mut n in batch {
        work.adopt(&mut n);
        settle_new(&mut n, lifetimes);
        pending.push(Child::Node(n));
    }
    let top = work.top_level();
    if entry == top {
        work.children_mut().extend(pending);
        return commit(tree, work, report);
    }

    let depth = top as usize + 1;
    let mut frames: Vec<Vec<Child>> = vec![Vec::new(); depth];
    let mut shell = vec![false; depth];
    frames[top as usize] = std::mem::take(work.children_mut());
    for k in (entry as usize + 1..=top as usize).rev() {
        let (lower, upper) = frames.split_at_mut(k);
        match upper[0].last_mut() {
            Some(Child::Node(n)) if !n.children.is_empty() => {
                lower[k - 1] = std::mem::take(&mut n.children);
                shell[k] = true;
            }
            _ => break,
        }
    }

    let mut ids = work.id_allocator();
    let mut former: Option<(NodeId, String)> = None;
    let mut level = entry as usize;
    loop {
        let pl = level + 1;
        let old: Vec<Sig> = frames[pl].iter().map(sig).collect();
        if shell[pl] {
            shell[pl] = false;
            let kids = std::mem::take(&mut frames[level]);
            if kids.is_empty() {
                frames[pl].pop();
            } else if let Some(Child::Node(s)) = frames[pl].last_mut() {
                s.children = kids;
                if level > entry as usize {
                    refresh_parent(s, lifetimes);
                }
            }
        }
        let earliest = pending[0].span().start;
        let window = lifetimes.of(pl as Level).saturating_mul(ctx.config.visibility_window);
        let cutoff = earliest.saturating_sub(window);
        let mut trace = LevelTrace { level: level as Level, cutoff, ..Default::default() };

        if prevent_push(&mut frames[pl], &mut pending, cutoff, ctx, &mut report.spend)? {
            trace.prevented_push = true;
            trace.first_change = Some(frames[pl].len() - 1);
            report.levels.push(trace);
            break;
        }

        let parents = std::mem::take(&mut frames[pl]);
        let barrier = parents
            .iter()
            .rposition(|c| c.as_node().is_none_or(|n| n.children.is_empty()))
            .map_or(0, |i| i + 1);
        let by_time = parents.iter().position(|c| c.span().end >= cutoff).unwrap_or(parents.len());
        let split = barrier.max(by_time);
        let mut frozen = parents;
        let visible: Vec<TreeNode> = frozen
            .drain(split..)
            .map(|c| match c {
                Child::Node(n) => n,
                Child::Forgotten(_) => unreachable!("placeholders are behind the barrier"),
            })
            .collect();
        trace.frozen = frozen.len();
        trace.visible = visible.len();

        let former_ok = former.as_ref().filter(|(id, _)| {
            !visible.iter().any(|p| p.id == *id) && !frozen.iter().any(|c| c.as_node().is_some_and(|n| n.id == *id))
        });
        let merged = time_aware(
            visible,
            std::mem::take(&mut pending),
            level as Level,
            former_ok.map(|(id, s)| (*id, s.as_str())),
            ctx,
            &mut ids,
            &mut trace,
            &mut report.spend,
        )?;
        let mut p_new = frozen;
        p_new.extend(merged.into_iter().map(Child::Node));

        let first_change = (0..old.len().max(p_new.len())).find(|i| old.get(*i) != p_new.get(*i).map(sig).as_ref());
        trace.first_change = first_change;
        report.levels.push(trace);
        match first_change {
            None => {
                frames[pl] = p_new;
                break;
            }
            Some(_) if pl == top as usize => {
                frames[pl] = p_new;
                work.summary = simple_summarize(&frames[pl], ctx.gateway, &mut report.spend)?;
                break;
            }
            Some(i) => {
                // Grouping may have merged the newest parents so the list got
                // shorter; the last parent then carries the change upwards.
                let i = i.min(p_new.len() - 1);
                pending = p_new.split_off(i);
                frames[pl] = p_new;
                former = if shell[pl + 1] {
                    frames[pl + 1].last().and_then(Child::as_node).map(|n| (n.id, n.summary.clone()))
                } else {
                    None
                };
                level += 1;
            }
        }
    }
    work.store_id_allocator(ids);

    for k in level + 2..depth {
        if !shell[k] {
            continue;
        }
        let kids = std::mem::take(&mut frames[k - 1]);
        if let Some(Child::Node(s)) = frames[k].last_mut() {
            s.children = kids;
            refresh_parent(s, lifetimes);
        }
    }
    *work.children_mut() = std::mem::take(&mut frames[top as usize]);
    commit(tree, work, report)
}

fn commit(tree: &mut HistoryTree, mut work: HistoryTree, mut report: UpdateReport) -> Result<UpdateReport, BuildError> {
    work.validate().map_err(|e| BuildError::Structure(e.to_string()))?;
    work.bump_version();
    report.version = work.version();
    report.committed = true;
    *tree = work;
    Ok(report)
}

/// Puts the new items into the newest parent instead of letting them start
/// a group of their own, when they follow it about as closely as siblings
/// usually follow each other and the parent does not grow out of proportion.
fn prevent_push(
    parents: &mut [Child],
    pending: &mut Vec<Child>,
    cutoff: Timestamp,
    ctx: &BuildContext<'_>,
    spend: &mut Spend,
) -> Result<bool, BuildError> {
    let cfg = ctx.config;
    if !cfg.prevent_push {
        return Ok(false);
    }
    let mut sibling_gaps: Vec<f64> = Vec::new();
    let mut durations: Vec<f64> = Vec::new();
    for p in parents.iter().filter_map(Child::as_node) {
        let spans: Vec<TimeSpan> = p.children.iter().map(Child::span).collect();
        sibling_gaps.extend(gaps(&spans).iter().map(|g| g.as_secs_f64()));
        durations.push(p.span.duration().as_secs_f64());
    }
    let Some(Child::Node(latest)) = parents.last_mut() else { return Ok(false) };
    if latest.span.end < cutoff || latest.children.is_empty() || sibling_gaps.len() < 3 {
        return Ok(false);
    }
    let typical_gap = median(&mut sibling_gaps).expect("non-empty");
    let new_gap = (pending[0].span().start - latest.span.end).as_secs_f64();
    if new_gap >= typical_gap {
        return Ok(false);
    }
    if durations.len() >= 3 {
        let typical_span = median(&mut durations).expect("non-empty");
        let grown = (pending[pending.len() - 1].span().end - latest.span.start).as_secs_f64();
        if grown > cfg.push_prevention_factor * typical_span {
            return Ok(false);
        }
    }
    let mut children = latest.children.clone();
    children.append(pending);
    let summary = simple_summarize(&children, ctx.gateway, spend)?;
    latest.children = children;
    latest.summary = summary;
    refresh_parent(latest, &cfg.lifetimes);
    Ok(true)
}

/// Clusters the visible parents' children together with the new items by
/// time, keeping every parent within one cluster. Clusters without new items
/// pass through untouched; the others go through one grouping call each.
#[allow(clippy::too_many_arguments)]
fn time_aware(
    visible: Vec<TreeNode>,
    pending: Vec<Child>,
    level: Level,
    former: Option<(NodeId, &str)>,
    ctx: &BuildContext<'_>,
    ids: &mut IdAllocator,
    trace: &mut LevelTrace,
    spend: &mut Spend,
) -> Result<Vec<TreeNode>, BuildError> {
    let mut spans: Vec<TimeSpan> = Vec::new();
    let mut owners: Vec<Option<usize>> = Vec::new();
    for (j, p) in visible.iter().enumerate() {
        for c in &p.children {
            spans.push(c.span());
            owners.push(Some(j));
        }
    }
    let n_old = spans.len();
    spans.extend(pending.iter().map(Child::span));
    owners.extend(std::iter::repeat_n(None, pending.len()));
    debug_assert!(spans.windows(2).all(|w| w[0].start <= w[1].start), "items are time-ordered");

    let clusters = time_based_cluster(&spans, ctx.config.lifetimes.of(level), ctx.config.cluster_gap_factor);
    let mut starts: Vec<usize> = clusters.iter().map(|r| r.start).filter(|s| *s > 0).collect();
    starts.retain(|&s| owners[s].is_none() || owners[s - 1] != owners[s]);
    trace.clusters = starts.len() + 1;

    let mut parents: Vec<Option<TreeNode>> = visible.into_iter().map(Some).collect();
    let mut new_items: Vec<Option<Child>> = pending.into_iter().map(Some).collect();
    let mut bounds = vec![0];
    bounds.extend(starts);
    bounds.push(spans.len());
    let mut out = Vec::new();
    let mut former = former;
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut cluster_parents = Vec::new();
        let mut cluster_new = Vec::new();
        for i in a..b {
            match owners[i] {
                Some(j) => {
                    if let Some(p) = parents[j].take() {
                        cluster_parents.push(p);
                    }
                }
                None => cluster_new.push(new_items[i - n_old].take().expect("each new item once")),
            }
        }
        if cluster_new.is_empty() {
            out.extend(cluster_parents);
            continue;
        }
        trace.grouped_clusters += 1;
        let g = group_and_summarize(cluster_parents, cluster_new, level, former.take(), ctx, ids)?;
        trace.fallbacks += usize::from(g.fallback);
        *spend += g.spend;
        out.extend(g.parents);
    }
    Ok(out)
}

/// Nodes that a report says were frozen but differ afterwards. Used by tests
/// and the replay checks.
pub fn frontier_violations(before: &HistoryTree, after: &HistoryTree, report: &UpdateReport) -> Vec<NodeId> {
    let now: std::collections::HashMap<NodeId, &TreeNode> = after.nodes().into_iter().map(|n| (n.id, n)).collect();
    let mut bad = Vec::new();
    for t in &report.levels {
        for n in before.nodes() {
            if n.level == t.level + 1 && n.span.end < t.cutoff && now.get(&n.id).is_none_or(|m| *m != n) {
                bad.push(n.id);
            }
        }
    }
    bad
}

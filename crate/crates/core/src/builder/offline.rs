//! Whole-history construction, used by the offline baselines.

use super::cluster::time_based_cluster;
use super::{group_and_summarize, settle_new, simple_summarize, BuildContext, BuildError, Spend};
use crate::time::TimeSpan;
use crate::tree::{Child, HistoryTree, TreeNode};

#[derive(Clone, Debug)]
pub struct OfflineBuild {
    pub tree: HistoryTree,
    pub spend: Spend,
}

fn check(items: &[TreeNode], top: u8) -> Result<u8, BuildError> {
    let Some(first) = items.first() else { return Ok(0) };
    let level = first.level;
    if let Some(other) = items.iter().map(|n| n.level).find(|l| *l != level) {
        return Err(BuildError::MixedLevels(level, other));
    }
    if level > top {
        return Err(BuildError::LevelTooHigh { level, top });
    }
    if items.windows(2).any(|w| w[1].span.start < w[0].span.end) {
        return Err(BuildError::UnsortedBatch);
    }
    Ok(level)
}

/// Builds a tree over `items` in one pass: per level, items are clustered by
/// time and each cluster is grouped in chunks of at most
/// `config.offline_chunk` items.
pub fn build_offline(items: Vec<TreeNode>, ctx: &BuildContext<'_>) -> Result<OfflineBuild, BuildError> {
    let cfg = ctx.config;
    let mut tree = HistoryTree::new(cfg.max_depth);
    let mut spend = Spend::default();
    let entry = check(&items, tree.top_level())?;
    if items.is_empty() {
        return Ok(OfflineBuild { tree, spend });
    }
    let mut current: Vec<Child> = items
        .into_iter()
        .map(|mut n| {
            tree.adopt(&mut n);
            settle_new(&mut n, &cfg.lifetimes);
            Child::Node(n)
        })
        .collect();
    let mut ids = tree.id_allocator();
    for level in entry..tree.top_level() {
        let spans: Vec<TimeSpan> = current.iter().map(Child::span).collect();
        let clusters = time_based_cluster(&spans, cfg.lifetimes.of(level), cfg.cluster_gap_factor);
        let mut next: Vec<Child> = Vec::new();
        let mut rest = current.into_iter();
        for r in clusters {
            let members: Vec<Child> = rest.by_ref().take(r.len()).collect();
            let mut members = members.into_iter().peekable();
            while members.peek().is_some() {
                let chunk: Vec<Child> = members.by_ref().take(cfg.offline_chunk).collect();
                let g = group_and_summarize(Vec::new(), chunk, level, None, ctx, &mut ids)?;
                spend += g.spend;
                next.extend(g.parents.into_iter().map(Child::Node));
            }
        }
        current = next;
    }
    tree.store_id_allocator(ids);
    tree.summary = simple_summarize(&current, ctx.gateway, &mut spend)?;
    *tree.children_mut() = current;
    tree.validate().map_err(|e| BuildError::Structure(e.to_string()))?;
    tree.bump_version();
    Ok(OfflineBuild { tree, spend })
}

/// A flat list of `items` under the root, without any summarization.
pub fn build_flat(items: Vec<TreeNode>, ctx: &BuildContext<'_>) -> Result<HistoryTree, BuildError> {
    let level = items.first().map_or(0, |n| n.level);
    let mut tree = HistoryTree::new(level + 1);
    check(&items, level)?;
    for mut n in items {
        tree.adopt(&mut n);
        settle_new(&mut n, &ctx.config.lifetimes);
        tree.push_top(Child::Node(n));
    }
    tree.validate().map_err(|e| BuildError::Structure(e.to_string()))?;
    tree.bump_version();
    Ok(tree)
}

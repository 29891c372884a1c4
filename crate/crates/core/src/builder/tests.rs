use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::lm::{GroupingBehavior, LmBackend, LmReply, LmRequest, Pattern, ScriptedBackend};
use crate::time::Duration;
use crate::tree::{HistoryTree, IdAllocator, NodeId, SceneInstant};

fn scene(at: i64, action: &str) -> TreeNode {
    let mut attributes = BTreeMap::new();
    attributes.insert("action".to_string(), action.to_string());
    TreeNode::scene(SceneInstant { at: Timestamp::from_secs(at), attributes, source_id: String::new() })
}

fn leaf(level: Level, at: i64, summary: &str) -> TreeNode {
    let mut n = TreeNode::detached(level, TimeSpan::point(Timestamp::from_secs(at)), summary);
    n.id = NodeId(at as u64 + 1000);
    n
}

fn parent(id: u64, level: Level, children: Vec<TreeNode>, summary: &str) -> TreeNode {
    let children: Vec<Child> = children.into_iter().map(Child::Node).collect();
    let mut n = TreeNode::detached(level, hull_of(&children).unwrap(), summary);
    n.id = NodeId(id);
    n.children = children;
    n
}

struct Fixture {
    config: BuilderConfig,
    gateway: Gateway,
    rules: RuleSet,
}

impl Fixture {
    fn new(backend: impl LmBackend + 'static) -> Self {
        Fixture { config: BuilderConfig::default(), gateway: Gateway::new(backend), rules: RuleSet::new() }
    }

    fn ctx(&self) -> BuildContext<'_> {
        BuildContext { config: &self.config, gateway: &self.gateway, rules: &self.rules }
    }
}

/// Groups every presented item into one group.
struct MergeAll;

impl LmBackend for MergeAll {
    fn complete(&self, request: &LmRequest) -> Result<LmReply, LmError> {
        let human = &request.messages.last().unwrap().text;
        let text = match request.kind {
            PromptKind::Grouping => {
                let max = human
                    .lines()
                    .filter_map(|l| l.split_once(": ").and_then(|(n, _)| n.parse::<usize>().ok()))
                    .max()
                    .unwrap_or(0);
                format!("Reasoning: one activity\nJSON: {{\"{max}-0\": \"merged\"}}")
            }
            _ => "Summary: all of it".to_string(),
        };
        Ok(LmReply { usage: TokenUsage::counted(&request.messages, &text), text })
    }
}

struct Down;

impl LmBackend for Down {
    fn complete(&self, _: &LmRequest) -> Result<LmReply, LmError> {
        Err(LmError::Unreachable { attempts: 1, last: "down".into() })
    }
}

fn c1_parents() -> Vec<TreeNode> {
    vec![
        parent(1, 2, vec![leaf(1, 10, "Navigate(Fridge)")], "went to the fridge"),
        parent(2, 2, vec![leaf(1, 20, "Open(Fridge)")], "opened the fridge"),
        parent(
            3,
            2,
            vec![leaf(1, 30, "Pickup(Potato_4)"), leaf(1, 40, "Navigate(Microwave)"), leaf(1, 50, "Open(Microwave)"), leaf(1, 60, "Put(Potato_4)")],
            "put the potato in the microwave",
        ),
    ]
}

#[test]
fn appendix_scenario_merges_newest_item() {
    let f = Fixture::new(ScriptedBackend::new().with_rule(
        Some(PromptKind::Grouping),
        Pattern::Contains("Current:".into()),
        "Reasoning: the potato is cooked now\nJSON: {\"4-0\": \"I cooked Potato_4 in the microwave\"}",
    ));
    let before = c1_parents();
    let mut ids = IdAllocator::starting_at(100);
    let g = group_and_summarize(before.clone(), vec![Child::Node(leaf(1, 70, "ToggleOn(Microwave)"))], 1, None, &f.ctx(), &mut ids).unwrap();
    assert!(!g.fallback);
    assert_eq!(g.parents.len(), 3);
    assert_eq!(g.parents[0], before[0]);
    assert_eq!(g.parents[1], before[1]);
    assert_eq!(g.parents[2].children.len(), 5);
    assert_eq!(g.parents[2].summary, "I cooked Potato_4 in the microwave");
    assert_eq!(g.spend.calls, 1);
}

#[test]
fn single_new_group_is_appended() {
    let f = Fixture::new(ScriptedBackend::new().with_rule(Some(PromptKind::Grouping), Pattern::Contains("Current:".into()), "JSON: {\"0\": \"x\"}"));
    let mut ids = IdAllocator::starting_at(100);
    let g = group_and_summarize(c1_parents(), vec![Child::Node(leaf(1, 70, "A(b)"))], 1, None, &f.ctx(), &mut ids).unwrap();
    assert_eq!(g.parents.len(), 4);
    assert_eq!(&g.parents[..3], &c1_parents()[..]);
    assert_eq!(g.parents[3].summary, "x");
    assert_eq!(g.parents[3].id, NodeId(100));
}

#[test]
fn bad_directives_fall_back() {
    for reply in [
        "JSON: {\"4-1\": \"a\", \"2-0\": \"b\"}", // overlap
        "JSON: {\"3-0\": \"cuts the potato group\"}",
        "JSON: {\"9-0\": \"out of range\"}",
        "JSON: {\"3-1\": \"does not reach the newest\"}",
        "JSON: {\"0\": \"\"}",
        "no json at all",
    ] {
        let f = Fixture::new(ScriptedBackend::new().with_rule(Some(PromptKind::Grouping), Pattern::Contains("Current:".into()), reply));
        let mut ids = IdAllocator::starting_at(100);
        let g = group_and_summarize(c1_parents(), vec![Child::Node(leaf(1, 70, "ToggleOn(Microwave)"))], 1, None, &f.ctx(), &mut ids).unwrap();
        assert!(g.fallback, "{reply}");
        assert_eq!(g.parents.len(), 4, "{reply}");
        assert_eq!(g.parents[3].summary, "ToggleOn(Microwave)");
        assert_eq!(&g.parents[..3], &c1_parents()[..]);
    }
}

#[test]
fn directive_validation_rules() {
    let d = |from, to| crate::lm::parse::GroupingDirective { from, to, summary: "s".into() };
    let owners = [Some(0), Some(1), Some(1), None];
    assert_eq!(validate_directives(&[d(0, 0)], 4, 1, &owners), Ok(0));
    assert_eq!(validate_directives(&[d(2, 0)], 4, 1, &owners), Ok(2));
    assert_eq!(validate_directives(&[d(3, 1), d(0, 0)], 4, 1, &owners), Ok(3));
    assert!(validate_directives(&[d(1, 0)], 4, 1, &owners).is_err());
    assert!(validate_directives(&[d(2, 1), d(1, 0)], 4, 1, &owners).is_err());
    assert!(validate_directives(&[d(0, 0)], 4, 2, &owners).is_err());
}

#[test]
fn identical_regrouping_keeps_the_id() {
    let f = Fixture::new(ScriptedBackend::new().with_rule(
        Some(PromptKind::Grouping),
        Pattern::Contains("Current:".into()),
        "JSON: {\"4-0\": \"put the potato in the microwave\"}",
    ));
    let mut ids = IdAllocator::starting_at(100);
    let g = group_and_summarize(c1_parents(), vec![Child::Node(leaf(1, 70, "Close(Microwave)"))], 1, None, &f.ctx(), &mut ids).unwrap();
    assert_eq!(g.parents[2].id, NodeId(3));
    assert_eq!(ids.peek(), 100);
}

fn update(tree: &mut HistoryTree, batch: Vec<TreeNode>, f: &Fixture) -> UpdateReport {
    update_tree(tree, batch, &f.ctx()).unwrap()
}

#[test]
fn first_scene_builds_a_chain() {
    let f = Fixture::new(ScriptedBackend::new());
    let mut tree = HistoryTree::new(f.config.max_depth);
    let r = update(&mut tree, vec![scene(1000, "Open(Fridge)")], &f);
    assert_eq!(r.version, 1);
    assert_eq!(tree.version(), 1);
    let levels: Vec<Level> = tree.nodes().iter().map(|n| n.level).collect();
    assert_eq!(levels, vec![7, 6, 5, 4, 3, 2, 1, 0]);
    assert_eq!(tree.summary, "Open(Fridge)");
    tree.validate().unwrap();
    assert_eq!(r.spend.calls, 8);
}

#[test]
fn empty_batch_is_a_no_op() {
    let f = Fixture::new(ScriptedBackend::new());
    let mut tree = HistoryTree::new(8);
    update(&mut tree, vec![scene(0, "A(x)")], &f);
    let h = tree.structural_hash();
    let r = update(&mut tree, vec![], &f);
    assert!(!r.committed);
    assert_eq!(tree.structural_hash(), h);
    assert_eq!(tree.version(), 1);
}

#[test]
fn batch_errors_leave_the_tree_alone() {
    let f = Fixture::new(ScriptedBackend::new());
    let mut tree = HistoryTree::new(8);
    update(&mut tree, vec![scene(100, "A(x)")], &f);
    let before = tree.clone();
    let ctx = f.ctx();
    assert!(matches!(update_tree(&mut tree, vec![scene(50, "B(y)")], &ctx), Err(BuildError::OutOfOrder { .. })));
    assert!(matches!(update_tree(&mut tree, vec![scene(300, "B(y)"), scene(200, "C(z)")], &ctx), Err(BuildError::UnsortedBatch)));
    assert!(matches!(
        update_tree(&mut tree, vec![scene(300, "B(y)"), leaf(1, 400, "e")], &ctx),
        Err(BuildError::MixedLevels(0, 1))
    ));
    assert!(matches!(update_tree(&mut tree, vec![leaf(9, 400, "e")], &ctx), Err(BuildError::LevelTooHigh { .. })));
    let down = Fixture::new(Down);
    assert!(matches!(update_tree(&mut tree, vec![scene(300, "B(y)")], &down.ctx()), Err(BuildError::Lm(_))));
    assert_eq!(tree, before);
}

#[test]
fn unchanged_level_leaves_upper_levels_alone() {
    let f = Fixture::new(ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest));
    let mut tree = HistoryTree::new(8);
    for t in 0..5 {
        update(&mut tree, vec![scene(t * 60, "Wash(Plate)")], &f);
    }
    let upper = |t: &HistoryTree| -> Vec<(NodeId, String)> {
        t.nodes().iter().filter(|n| n.level >= 2).map(|n| (n.id, n.summary.clone())).collect()
    };
    let before = upper(&tree);
    let r = update(&mut tree, vec![scene(5 * 60, "Wash(Plate)")], &f);
    assert_eq!(r.levels.last().unwrap().first_change, None);
    assert_eq!(r.levels.len(), 1);
    assert_eq!(upper(&tree), before);
    tree.validate().unwrap();
}

#[test]
fn distant_cluster_is_passed_through() {
    let mut f = Fixture::new(MergeAll);
    f.config.prevent_push = false;
    f.config.lifetimes = crate::forgetting::Lifetimes::new(vec![Duration::minutes(15), Duration::HOUR, Duration::DAY]);
    let mut tree = HistoryTree::new(4);
    update(&mut tree, (0..4).map(|i| scene(i * 60, "A(x)")).collect(), &f);
    update(&mut tree, (0..4).map(|i| scene(7200 + i * 60, "B(y)")).collect(), &f);
    let events: Vec<TreeNode> = tree.nodes().into_iter().filter(|n| n.level == 1).cloned().collect();
    assert_eq!(events.len(), 2, "{tree:#?}");
    let r = update(&mut tree, vec![scene(7200 + 5 * 60, "C(z)")], &f);
    assert_eq!(r.levels[0].clusters, 2);
    let first = tree.find(events[0].id).unwrap();
    assert_eq!(*first, events[0]);
    tree.validate().unwrap();
}

#[test]
fn one_cluster_merge_all_gives_one_parent() {
    let mut f = Fixture::new(MergeAll);
    f.config.prevent_push = false;
    let mut tree = HistoryTree::new(4);
    for i in 0..6 {
        update(&mut tree, vec![scene(i * 30, "A(x)")], &f);
    }
    let events: Vec<&TreeNode> = tree.nodes().into_iter().filter(|n| n.level == 1).collect();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].children.len(), 6);
}

/// Level, span, summary and shape, without ids.
fn canon(children: &[Child]) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(c: &Child, depth: usize, out: &mut Vec<String>) {
        match c {
            Child::Forgotten(p) => out.push(format!("{depth} forgotten {}", p.span)),
            Child::Node(n) => {
                out.push(format!("{depth} L{} {:?} {} {:?}", n.level, n.span, n.summary, n.expiration));
                for k in &n.children {
                    walk(k, depth + 1, out);
                }
            }
        }
    }
    for c in children {
        walk(c, 0, &mut out);
    }
    out
}

#[test]
fn batch_equals_sequential_under_append_rule() {
    let mut f = Fixture::new(ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest));
    f.config.prevent_push = false;
    let actions = ["Open(Fridge)", "Pickup(Egg)", "Close(Fridge)", "Crack(Egg)", "Stir(Pan)"];
    let mut base = HistoryTree::new(8);
    update(&mut base, vec![scene(0, "Navigate(Kitchen)")], &f);
    let batch: Vec<TreeNode> = actions.iter().enumerate().map(|(i, a)| scene(60 * (i as i64 + 1), a)).collect();

    let mut seq = base.clone();
    for n in batch.clone() {
        update(&mut seq, vec![n], &f);
    }
    let mut bat = base.clone();
    let r = update(&mut bat, batch, &f);
    assert_eq!(bat.version(), base.version() + 1);
    assert_eq!(r.version, bat.version());
    assert_eq!(canon(bat.children()), canon(seq.children()));
    assert_eq!(bat.summary, seq.summary);
}

#[test]
fn prevent_push_inserts_into_latest_parent() {
    let f = Fixture::new(ScriptedBackend::new());
    let mut tree = HistoryTree::new(4);
    // One parent at level 1 with evenly spaced children, built by hand.
    let kids: Vec<TreeNode> = (0..5).map(|i| scene(i * 600, "Walk(Hall)")).collect();
    let mut p = parent(0, 1, kids, "walked");
    let mut chain = p.clone();
    for lvl in 2..4 {
        chain = parent(0, lvl, vec![chain], "walked");
    }
    tree.adopt(&mut chain);
    settle_new(&mut chain, &f.config.lifetimes);
    tree.push_top(Child::Node(chain));
    p = tree.nodes().into_iter().find(|n| n.level == 1).unwrap().clone();
    let tops = tree.children().len();
    let r = update(&mut tree, vec![scene(4 * 600 + 60, "Walk(Hall)")], &f);
    assert!(r.levels[0].prevented_push);
    assert_eq!(tree.children().len(), tops);
    let after = tree.find(p.id).unwrap();
    assert_eq!(after.children.len(), 6);
    tree.validate().unwrap();
}

#[test]
fn offline_and_flat_builds() {
    let f = Fixture::new(ScriptedBackend::new());
    let items: Vec<TreeNode> = (0..45).map(|i| scene(i * 60, if i % 2 == 0 { "A(x)" } else { "B(y)" })).collect();
    let b = build_offline(items.clone(), &f.ctx()).unwrap();
    b.tree.validate().unwrap();
    assert_eq!(b.tree.top_nodes().count(), 1);
    assert_eq!(b.tree.count_at_or_above(0) - b.tree.count_at_or_above(1), 45);
    // 3 chunks at level 0, then one call per level above, plus the root.
    assert_eq!(b.spend.calls, 3 + 6 + 1);
    assert_eq!(f.gateway.ledger().calls(PromptKind::Grouping), 9);

    let flat = build_flat(items, &f.ctx()).unwrap();
    assert_eq!(flat.children().len(), 45);
    assert_eq!(flat.top_level(), 0);
    flat.validate().unwrap();
}

#[derive(Clone, Debug)]
struct Step {
    gap: i64,
    actions: Vec<u8>,
}

fn step() -> impl Strategy<Value = Step> {
    let gap = prop_oneof![3 => 1i64..600, 2 => 600i64..7200, 1 => 7200i64..200_000];
    (gap, prop::collection::vec(0u8..4, 1..4)).prop_map(|(gap, actions)| Step { gap, actions })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn updates_keep_invariants(steps in prop::collection::vec(step(), 1..25), prevent in any::<bool>(), cap in 2usize..6) {
        let mut f = Fixture::new(ScriptedBackend::new().grouping(GroupingBehavior::AppendToLatest).max_group(cap));
        f.config.prevent_push = prevent;
        let names = ["Open(Door)", "Walk(Hall)", "Pickup(Cup)", "Place(Cup)"];
        let mut tree = HistoryTree::new(6);
        let mut t = 0;
        for s in steps {
            t += s.gap;
            let batch: Vec<TreeNode> = s.actions.iter().map(|a| { t += 5; scene(t, names[*a as usize]) }).collect();
            let before = tree.clone();
            let tops = before.children().len();
            let r = update_tree(&mut tree, batch, &f.ctx()).unwrap();
            prop_assert_eq!(tree.version(), before.version() + 1);
            prop_assert!(tree.validate().is_ok());
            prop_assert!(tree.top_nodes().all(|n| n.level == tree.top_level()));
            prop_assert!(frontier_violations(&before, &tree, &r).is_empty());
            if r.levels.iter().any(|l| l.prevented_push) {
                prop_assert!(tree.children().len() <= tops.max(1));
            }
            let same = tree.clone();
            update_tree(&mut tree, vec![], &f.ctx()).unwrap();
            prop_assert_eq!(tree.structural_hash(), same.structural_hash());
        }
    }
}

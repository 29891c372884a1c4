//! Metrics per run, averages per variant, and their tab-separated tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::judge::Grade;
use crate::qa::QaPair;
use crate::run::QuestionDetail;
use crate::variant::Variant;

/// Percentages are in [0, 100]. `c_qa` is per question, everything else in
/// tokens is per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub variant: Variant,
    pub seed: u64,
    pub questions: usize,
    pub s_c: f64,
    pub s_p: f64,
    pub s_c1: f64,
    pub s_p1: f64,
    pub s_c2: f64,
    pub s_p2: f64,
    pub s_up: f64,
    pub s_eq: f64,
    pub s_down: f64,
    pub forgotten_ratio1: f64,
    pub forgotten_ratio2: f64,
    pub n_final: usize,
    pub n_avg: f64,
    pub n_max: usize,
    pub c_qa: f64,
    pub c_qa_total: u64,
    /// Part of `c_qa_total` spent building offline trees at question time.
    pub c_qa_build: u64,
    pub c_f: u64,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

fn share(details: &[&QuestionDetail], grade: Grade) -> f64 {
    pct(details.iter().filter(|d| d.grade == grade).count(), details.len())
}

impl ExperimentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn aggregate(
        variant: Variant,
        pairs: &[QaPair],
        details: &[QuestionDetail],
        sizes: &[usize],
        n_final: usize,
        c_qa_total: u64,
        c_qa_build: u64,
        c_f: u64,
    ) -> Self {
        let all: Vec<&QuestionDetail> = details.iter().collect();
        let r1: Vec<&QuestionDetail> = details.iter().filter(|d| d.round == 1).collect();
        let r2: Vec<&QuestionDetail> = details.iter().filter(|d| d.round == 2).collect();
        let forgotten = |ds: &[&QuestionDetail]| pct(ds.iter().filter(|d| d.forgotten == Some(true)).count(), ds.len());

        let (mut up, mut eq, mut down, mut both) = (0, 0, 0, 0);
        for p in pairs {
            let grade = |round| details.iter().find(|d| d.pair == p.id && d.round == round).map(|d| d.grade.score());
            if let (Some(a), Some(b)) = (grade(1), grade(2)) {
                both += 1;
                match b.cmp(&a) {
                    std::cmp::Ordering::Greater => up += 1,
                    std::cmp::Ordering::Equal => eq += 1,
                    std::cmp::Ordering::Less => down += 1,
                }
            }
        }
        let n_avg = if sizes.is_empty() { 0.0 } else { sizes.iter().sum::<usize>() as f64 / sizes.len() as f64 };
        ExperimentReport {
            variant,
            seed: 0,
            questions: details.len(),
            s_c: share(&all, Grade::Correct),
            s_p: share(&all, Grade::PartiallyCorrect),
            s_c1: share(&r1, Grade::Correct),
            s_p1: share(&r1, Grade::PartiallyCorrect),
            s_c2: share(&r2, Grade::Correct),
            s_p2: share(&r2, Grade::PartiallyCorrect),
            s_up: pct(up, both),
            s_eq: pct(eq, both),
            s_down: pct(down, both),
            forgotten_ratio1: forgotten(&r1),
            forgotten_ratio2: forgotten(&r2),
            n_final,
            n_avg,
            n_max: sizes.iter().copied().max().unwrap_or(0),
            c_qa: if details.is_empty() { 0.0 } else { c_qa_total as f64 / details.len() as f64 },
            c_qa_total,
            c_qa_build,
            c_f,
        }
    }
}

pub const COLUMNS: &[&str] = &[
    "S_c", "S_p", "S_c1", "S_p1", "S_c2", "S_p2", "S_up", "S_eq", "S_down", "FR1", "FR2", "N_f", "N_avg", "C_qa", "C_f",
];

fn metric_row(r: &ExperimentReport) -> [f64; 15] {
    [
        r.s_c,
        r.s_p,
        r.s_c1,
        r.s_p1,
        r.s_c2,
        r.s_p2,
        r.s_up,
        r.s_eq,
        r.s_down,
        r.forgotten_ratio1,
        r.forgotten_ratio2,
        r.n_final as f64,
        r.n_avg,
        r.c_qa,
        r.c_f as f64,
    ]
}

fn push_row(out: &mut String, head: &[String], values: &[f64]) {
    let mut cells: Vec<String> = head.to_vec();
    cells.extend(values.iter().map(|v| format!("{v:.1}")));
    let _ = writeln!(out, "{}", cells.join("\t"));
}

/// One row per run.
pub fn runs_tsv(reports: &[ExperimentReport]) -> String {
    let mut out = format!("variant\tseed\t{}\n", COLUMNS.join("\t"));
    for r in reports {
        push_row(&mut out, &[r.variant.to_string(), r.seed.to_string()], &metric_row(r));
    }
    out
}

/// Metrics averaged over seeds, one row per variant, in first-seen order.
pub fn summary_tsv(reports: &[ExperimentReport]) -> String {
    let mut order: Vec<Variant> = Vec::new();
    let mut groups: BTreeMap<Variant, Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        if !groups.contains_key(&r.variant) {
            order.push(r.variant);
        }
        groups.entry(r.variant).or_default().push(r);
    }
    let mut out = format!("variant\truns\t{}\n", COLUMNS.join("\t"));
    for v in order {
        let rs = &groups[&v];
        let mut mean = [0.0; 15];
        for r in rs {
            for (m, x) in mean.iter_mut().zip(metric_row(r)) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= rs.len() as f64;
        }
        push_row(&mut out, &[v.to_string(), rs.len().to_string()], &mean);
    }
    out
}

/// One JSON object per asked question.
pub fn details_jsonl(details: &[QuestionDetail]) -> String {
    let mut out = String::new();
    for d in details {
        out.push_str(&serde_json::to_string(d).expect("detail serializes"));
        out.push('\n');
    }
    out
}

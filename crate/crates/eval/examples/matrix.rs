//! Runs the default matrix and prints the summary table.

fn main() {
    let mut config = emtree_eval::EvalConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        config.seeds = (0..n.parse().expect("seed count")).collect();
    }
    let out = emtree_eval::run_matrix(&config).expect("matrix run");
    print!("{}", out.summary_tsv());
}

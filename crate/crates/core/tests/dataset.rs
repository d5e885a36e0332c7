use riskgraph::annotate::builtin_risk_table;
use riskgraph::graph::{build_graph, label_stats, GraphConfig};
use riskgraph::scene::generate_dataset;

#[test]
fn default_dataset_positive_rate_is_about_one_percent() {
    let data = generate_dataset(120, (90, 15, 15), 1).unwrap();
    let table = builtin_risk_table();
    let config = GraphConfig::default();
    let graphs: Vec<_> = data
        .train
        .iter()
        .map(|s| build_graph(s, &table, &config).unwrap())
        .collect();
    let stats = label_stats(&graphs);
    println!(
        "train edges {} positives {} rate {:.4}",
        stats.edges, stats.positives, stats.positive_rate
    );
    assert!((0.005..=0.02).contains(&stats.positive_rate), "{stats:?}");
}

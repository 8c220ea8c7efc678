//! Prints a built-in graph as TOML, its resolution under each declared
//! engine, and any diagnostics.
//!
//! cargo run --example inspect -- [filtered|direct|pipeline]

use ratesync::demo;
use ratesync::graph::{resolve, validate, Catalog};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "filtered".into());
    let graph = match which.as_str() {
        "filtered" => demo::filtered_graph(),
        "direct" => demo::direct_graph(),
        "pipeline" => demo::pipeline_graph(5.0, true),
        other => panic!("unknown graph {other:?}"),
    }
    .expect("built-in graphs are valid");
    print!("{}", graph.to_toml());
    for engine in graph.engines.keys() {
        let concrete = resolve(&graph, engine, &Catalog::standard()).expect("resolves");
        eprintln!("# resolved under {engine}\n{}", concrete.snapshot());
        for d in validate(&concrete) {
            eprintln!("{d:?}");
        }
    }
}

#![no_main]

use bscnets::graph::{graph_from_edge_list, parse_edge_list};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(pairs) = parse_edge_list(text) else {
        return;
    };
    // Huge ids would allocate adjacency for every node.
    if pairs.iter().any(|&(u, v)| u.max(v) > 100_000) {
        return;
    }
    if let Ok(g) = graph_from_edge_list(text, 0) {
        let again = graph_from_edge_list(&g.to_edge_list(), g.n()).unwrap();
        assert_eq!(again.edges(), g.edges());
    }
});

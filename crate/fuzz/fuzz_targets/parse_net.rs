#![no_main]

use libfuzzer_sys::fuzz_target;
use seqassign::network::io::{parse_network, write_network};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(net) = parse_network(text) {
        let again = parse_network(&write_network(&net)).expect("written network must parse");
        assert_eq!(again.num_links(), net.num_links());
        assert_eq!(again.num_nodes(), net.num_nodes());
    }
});

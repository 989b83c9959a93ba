#![no_main]

use libfuzzer_sys::fuzz_target;
use seqassign::network::io::{parse_trip_records, parse_trips, write_trips};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_trip_records(text);
    let (net, _) = seqassign::data::braess().unwrap();
    if let Ok(demand) = parse_trips(text, &net) {
        let again = parse_trips(&write_trips(&net, &demand), &net).expect("written trips must parse");
        assert_eq!(again.entries().len(), demand.entries().len());
    }
});

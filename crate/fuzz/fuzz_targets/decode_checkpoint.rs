#![no_main]

use libfuzzer_sys::fuzz_target;
use seqassign::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let bytes = ck.encode().expect("decoded checkpoint must encode");
        let again = Checkpoint::decode(&bytes).expect("re-encoded checkpoint must decode");
        assert_eq!(again.online.len(), ck.online.len());
        let _ = ck.online_network();
    }
});

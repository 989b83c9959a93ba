mod common;

#[test]
fn oracle_agrees_on_200_random_graphs() {
    let pairs = common::paths::check_random_graphs(200, 20240601);
    assert!(pairs >= 400, "{pairs}");
}

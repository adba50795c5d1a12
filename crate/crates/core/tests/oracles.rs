mod common;

use plab::network::Activation;

#[test]
fn gradients_match_finite_differences_on_twenty_instances() {
    for k in 0..20 {
        let act = if k % 2 == 0 { Activation::Linear } else { Activation::Relu };
        let (net, x, y) = common::random_instance(k, act);
        let e = common::fd_gradient_error(&net, &x, &y);
        assert!(e <= 1e-6, "instance {k} ({act:?}): error {e:e}");
    }
}

#[test]
fn derived_examples_match_their_oracles() {
    let results = common::derived_examples();
    assert!(results.len() >= 25);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}: {}", r.name, r.detail))
        .collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn forward_matches_hand_oracle_for_relu() {
    for k in 0..5 {
        let (net, x, _) = common::random_instance(100 + k, Activation::Relu);
        let got = plab::network::forward(&net, &x).unwrap();
        let want = common::forward_oracle(net.layers(), Activation::Relu, &x);
        assert!(common::max_abs_diff(&got, &want) <= 1e-12);
    }
}

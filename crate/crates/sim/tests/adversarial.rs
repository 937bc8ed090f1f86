use quorumpay_sim::{
    check_invariants, enumerate_splits, equivocation_scenario, recovery_scenario,
    zero_sequence_scenario, OpResult, SimConfig,
};

#[test]
fn at_most_one_equivocating_order_ever_certifies() {
    let splits = enumerate_splits(4);
    assert_eq!(splits.len(), 5 * 16);
    for s in &splits {
        assert!(s.safe(), "{s:?}");
        let honest_first: Vec<usize> = (0..4)
            .filter(|&i| Some(i) != s.byzantine)
            .map(|i| s.first[i])
            .collect();
        let for_a = honest_first.iter().filter(|&&w| w == 0).count();
        let for_b = honest_first.len() - for_a;
        // The Byzantine authority signs both, so each order gets its
        // honest first-comers plus at most one.
        let bonus = usize::from(s.byzantine.is_some());
        assert_eq!(s.votes, [for_a + bonus, for_b + bonus], "{s:?}");
    }
}

#[test]
fn an_even_honest_split_locks_the_account() {
    for s in enumerate_splits(4).iter().filter(|s| s.byzantine.is_none()) {
        let for_a = s.first.iter().filter(|&&w| w == 0).count();
        if for_a == 2 {
            assert_eq!(s.certified, None, "{s:?}");
            assert!(s.locked, "{s:?}");
        } else {
            let majority = usize::from(for_a < 2);
            assert_eq!(s.certified, Some(majority), "{s:?}");
        }
    }
}

#[test]
fn scenario_with_two_two_split_locks_and_three_one_certifies() {
    let config = SimConfig::default();
    let locked = equivocation_scenario(&config, &[0, 0, 1, 1]);
    assert_eq!(locked.result, OpResult::Locked);
    assert!(!locked.account_usable);
    assert!(check_invariants(&locked.trace).passed());

    let settled = equivocation_scenario(&config, &[0, 1, 0, 0]);
    assert_eq!(settled.result, OpResult::Done);
    assert_eq!(settled.certified, Some(0));
    assert!(settled.account_usable);
    assert!(check_invariants(&settled.trace).passed());
}

#[test]
fn recovered_authority_reaches_parity_and_serves_new_transfers() {
    let outcome = recovery_scenario(3, 50);
    assert_eq!(outcome.certified_while_away, 50);
    assert!(outcome.lagging_before);
    assert!(outcome.parity);
    assert!(outcome.fresh_transfer);
    let report = check_invariants(&outcome.trace);
    assert!(report.passed(), "{report}");
}

#[test]
fn authority_reporting_zero_sequence_cannot_block_quorum() {
    let outcome = zero_sequence_scenario(4, 30);
    assert_eq!(outcome.certified, outcome.attempted);
    assert!(outcome.repaired);
    assert!(outcome.replay_is_noop);
    assert!(check_invariants(&outcome.trace).passed());
}

use std::collections::BTreeMap;

use proptest::prelude::*;

use imo_core::ledger::{apportion, replay_balances, verify_chain, Ledger};

proptest! {
    #[test]
    fn apportion_conserves_and_is_fair(amount in 0u64..=u64::MAX / 2, weights in proptest::collection::vec(0u64..1_000_000, 0..8)) {
        let w: BTreeMap<String, u64> = weights.iter().enumerate().map(|(i, c)| (format!("a{i}"), *c)).collect();
        let out = apportion(amount, &w);
        let total: u64 = w.values().sum();
        if total == 0 {
            prop_assert!(out.is_empty());
        } else {
            prop_assert_eq!(out.values().sum::<u64>(), amount);
            for (a, ca) in &w {
                for (b, cb) in &w {
                    if ca > cb {
                        prop_assert!(out.get(a).unwrap_or(&0) >= out.get(b).unwrap_or(&0));
                    }
                }
            }
        }
    }

    #[test]
    fn replay_matches_live_balances(steps in proptest::collection::vec((0usize..3, 1u64..1000, 0u64..10_000), 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.log");
        let mut l = Ledger::open(&path).unwrap();
        for a in ["d", "p0", "p1", "p2"] {
            l.open_account(a, 0).unwrap();
        }
        l.add_agreement("m", "d", 2, 5, 0, 0).unwrap();
        for (i, (who, gpu, revenue)) in steps.into_iter().enumerate() {
            l.add_contribution(&format!("p{who}"), gpu, "prop", i as u64).unwrap();
            if revenue % 3 == 0 {
                let d = l.distribute_revenue("m", revenue as i64, None, None, i as u64).unwrap();
                prop_assert_eq!(d.payouts.values().sum::<u64>(), revenue);
            }
        }
        prop_assert!(verify_chain(l.records()).is_ok());
        prop_assert_eq!(replay_balances(l.records()).unwrap(), l.balances());
        let reopened = Ledger::open(&path).unwrap();
        prop_assert_eq!(reopened.balances(), l.balances());
        prop_assert_eq!(reopened.head_hash(), l.head_hash());
    }
}

use std::collections::BTreeMap;

/// Split `amount` pro rata by `weights` in whole units. Every share starts
/// at its floor; leftover units go one at a time to the largest fractional
/// remainders, ties to the lowest account id. Returns an empty map when the
/// weights sum to zero.
pub fn apportion(amount: u64, weights: &BTreeMap<String, u64>) -> BTreeMap<String, u64> {
    let total: u128 = weights.values().map(|&w| w as u128).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let mut shares = BTreeMap::new();
    let mut rems: Vec<(u128, &String)> = Vec::with_capacity(weights.len());
    let mut given: u128 = 0;
    for (account, &w) in weights {
        let exact = amount as u128 * w as u128;
        let base = exact / total;
        given += base;
        shares.insert(account.clone(), base as u64);
        rems.push((exact % total, account));
    }
    // Stable sort keeps id order among equal remainders.
    rems.sort_by(|a, b| b.0.cmp(&a.0));
    let leftover = (amount as u128 - given) as usize;
    for (_, account) in rems.into_iter().take(leftover) {
        *shares.get_mut(account).expect("share exists") += 1;
    }
    shares
}

/// `floor(amount · num / den)` without overflow.
pub fn share_of(amount: u64, num: u64, den: u64) -> u64 {
    (amount as u128 * num as u128 / den as u128) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(a, c)| (a.to_string(), *c)).collect()
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let s = apportion(10, &w(&[("c", 1), ("a", 1), ("b", 1)]));
        assert_eq!(s, w(&[("a", 4), ("b", 3), ("c", 3)]));
    }

    #[test]
    fn largest_remainder_wins() {
        // 7·(1,2,4)/7 is exact; 8·(1,2,4)/7 = 1.14, 2.29, 4.57
        assert_eq!(apportion(8, &w(&[("a", 1), ("b", 2), ("c", 4)])), w(&[("a", 1), ("b", 2), ("c", 5)]));
    }

    #[test]
    fn zero_weights() {
        assert!(apportion(5, &w(&[("a", 0)])).is_empty());
        assert_eq!(apportion(5, &w(&[("a", 0), ("b", 3)])), w(&[("a", 0), ("b", 5)]));
    }

    #[test]
    fn no_overflow() {
        let s = apportion(u64::MAX, &w(&[("a", u64::MAX), ("b", u64::MAX)]));
        assert_eq!(s.values().map(|&x| x as u128).sum::<u128>(), u64::MAX as u128);
        assert_eq!(share_of(u64::MAX, u64::MAX, u64::MAX), u64::MAX);
    }
}

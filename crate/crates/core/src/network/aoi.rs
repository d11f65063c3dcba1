/// Age of information at `now` given `(sent_at, delay)` pairs.
///
/// This is the smallest `a` such that the packet generated at `now − a` has
/// arrived by `now`, i.e. the age of the freshest packet received so far.
/// A delay of `u64::MAX` stands for a packet that never arrives. Returns
/// `None` when nothing has arrived yet.
///
/// ```
/// use tiered_control::network::age_of_information;
/// assert_eq!(age_of_information(&[(0, 3), (1, 1)], 2), Some(1));
/// assert_eq!(age_of_information(&[(0, u64::MAX)], 9), None);
/// ```
pub fn age_of_information(received: &[(u64, u64)], now: u64) -> Option<u64> {
    received
        .iter()
        .filter(|(sent, delay)| *sent <= now && sent.saturating_add(*delay) <= now)
        .map(|(sent, _)| now - sent)
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instantaneous_delivery() {
        assert_eq!(age_of_information(&[(5, 0)], 5), Some(0));
    }

    #[test]
    fn future_packets_ignored() {
        assert_eq!(age_of_information(&[(6, 0)], 5), None);
        assert_eq!(age_of_information(&[], 5), None);
    }
}

//! Random submission streams against the order book invariants.

mod support;

use std::time::{Duration, Instant};

use cda_core::engine::{replay, ClearingRule, MarketEvent, Offer, OrderBook, Side};
use support::{fuzz_stream, FUZZ_SUBMISSIONS};

#[test]
fn invariants_hold_under_random_submissions() {
    let started = Instant::now();
    for (k, rule) in [ClearingRule::SellerPrice, ClearingRule::BuyerPrice, ClearingRule::Midpoint].into_iter().enumerate() {
        let r = fuzz_stream(rule, 40 + k as u64, FUZZ_SUBMISSIONS);
        assert!(r.violations.is_empty(), "{:#?}", &r.violations[..r.violations.len().min(10)]);
        assert!(r.replay_identical, "{rule:?}: replay differs");
        assert!(r.trades > 0);
    }
    assert!(started.elapsed() < Duration::from_secs(30), "{:?}", started.elapsed());
}

#[test]
fn tampered_log_fails_replay_at_the_edit() {
    let mut book = OrderBook::new(2, 2).unwrap();
    let mut log = Vec::new();
    for (i, (side, price)) in [(Side::Sell, 10), (Side::Buy, 5), (Side::Buy, 12), (Side::Sell, 20)].into_iter().enumerate() {
        let offer = Offer { id: i as u64 + 1, agent: i as u32, side, price, cycle: i as u64 };
        log.extend(book.submit(offer, None, ClearingRule::SellerPrice).unwrap().1);
    }
    assert!(replay(&log, 2, 2, ClearingRule::SellerPrice).is_ok());
    let at = log.iter().position(|e| matches!(e, MarketEvent::Matched { .. })).unwrap();
    if let MarketEvent::Matched { trade, .. } = &mut log[at] {
        trade.price += 1;
    }
    let err = replay(&log, 2, 2, ClearingRule::SellerPrice).unwrap_err();
    assert_eq!(err.index(), at);
}

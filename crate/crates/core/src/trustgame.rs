//! Coin acceptor and returner for the trust game.
//!
//! The machine takes up to five coins. Ten seconds after the last accepted
//! coin it decides, pays out once, and is done. Times are kept as integer
//! microseconds so the idle window is compared exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::seed;

pub const MAX_COINS: u32 = 5;
pub const DECISION_DELAY: f64 = 10.0;
/// Announced ceiling: the machine never returns more than three times the deposit.
pub const PAYOUT_CEILING: u32 = 3;

const MICROS: f64 = 1e6;

fn to_micros(t: f64) -> Result<i64> {
    ensure_finite("time", t)?;
    Ok((t * MICROS).round() as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GamePhase {
    Idle,
    Accepting,
    Deciding,
    Paying,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PayoutPolicy {
    /// Return one coin more than was inserted.
    #[default]
    PlusOne,
    /// Return `factor·n`, perturbed uniformly by ±`variance` (a fraction),
    /// rounded half to even and capped at the ceiling.
    Multiplier { factor: f64, variance: f64 },
}

impl PayoutPolicy {
    pub fn validate(&self) -> Result<()> {
        if let PayoutPolicy::Multiplier { factor, variance } = *self {
            ensure_finite("factor", factor)?;
            ensure_finite("variance", variance)?;
            if factor < 0.0 || !(0.0..1.0).contains(&variance) {
                return Err(invalid("multiplier needs factor >= 0 and variance in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn payout<R: Rng>(&self, inserted: u32, rng: &mut R) -> u32 {
        if inserted == 0 {
            return 0;
        }
        let raw = match *self {
            PayoutPolicy::PlusOne => inserted + 1,
            PayoutPolicy::Multiplier { factor, variance } => {
                let jitter: f64 = if variance > 0.0 { rng.random_range(-variance..=variance) } else { 0.0 };
                (factor * (1.0 + jitter) * inserted as f64).round_ties_even().max(0.0) as u32
            }
        };
        raw.min(PAYOUT_CEILING * inserted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoutEvent {
    pub t: f64,
    pub coins: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted { inserted: u32 },
    /// The coin drops straight back out; not counted.
    Rejected,
}

#[derive(Debug, Clone)]
pub struct TrustGame {
    phase: GamePhase,
    inserted: u32,
    last_insert: Option<i64>,
    payout: Option<u32>,
    rejected: u32,
    now: Option<i64>,
    rng: ChaCha8Rng,
}

impl TrustGame {
    pub fn new(seed: u64) -> Self {
        Self {
            phase: GamePhase::Idle,
            inserted: 0,
            last_insert: None,
            payout: None,
            rejected: 0,
            now: None,
            rng: seed::rng(seed),
        }
    }

    pub fn phase(&self) -> GamePhase {
        self.phase
    }

    pub fn inserted(&self) -> u32 {
        self.inserted
    }

    pub fn payout(&self) -> Option<u32> {
        self.payout
    }

    pub fn rejected(&self) -> u32 {
        self.rejected
    }

    /// Coins that have left the machine: the payout plus every rejected coin.
    pub fn coins_out(&self) -> u32 {
        self.payout.unwrap_or(0) + self.rejected
    }

    pub fn last_insert_time(&self) -> Option<f64> {
        self.last_insert.map(|m| m as f64 / MICROS)
    }

    fn advance_clock(&mut self, now: f64) -> Result<i64> {
        let micros = to_micros(now)?;
        if let Some(prev) = self.now {
            if micros < prev {
                return Err(Error::TimeRegression { now, last: prev as f64 / MICROS });
            }
        }
        self.now = Some(micros);
        Ok(micros)
    }

    pub fn insert_coin(&mut self, now: f64) -> Result<InsertOutcome> {
        let micros = self.advance_clock(now)?;
        let open = matches!(self.phase, GamePhase::Idle | GamePhase::Accepting);
        if !open || self.inserted >= MAX_COINS {
            self.rejected += 1;
            return Ok(InsertOutcome::Rejected);
        }
        self.inserted += 1;
        self.last_insert = Some(micros);
        self.phase = GamePhase::Accepting;
        Ok(InsertOutcome::Accepted { inserted: self.inserted })
    }

    /// The participant declined to play; the game ends without a payout.
    pub fn decline(&mut self, now: f64) -> Result<()> {
        self.advance_clock(now)?;
        if self.phase == GamePhase::Idle {
            self.payout = Some(0);
            self.phase = GamePhase::Done;
            Ok(())
        } else {
            Err(invalid(format!("cannot decline in phase {:?}", self.phase)))
        }
    }

    pub fn tick(&mut self, now: f64, policy: &PayoutPolicy) -> Result<Option<PayoutEvent>> {
        policy.validate()?;
        let micros = self.advance_clock(now)?;
        let Some(last) = self.last_insert else {
            return Ok(None);
        };
        if self.phase != GamePhase::Accepting || micros - last < to_micros(DECISION_DELAY)? {
            return Ok(None);
        }
        self.phase = GamePhase::Deciding;
        let coins = policy.payout(self.inserted, &mut self.rng);
        self.payout = Some(coins);
        self.phase = GamePhase::Paying;
        // The returner runs to completion within the tick.
        self.phase = GamePhase::Done;
        Ok(Some(PayoutEvent { t: now, coins }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_coin_starts_accepting() {
        let mut g = TrustGame::new(0);
        assert_eq!(g.insert_coin(0.0).unwrap(), InsertOutcome::Accepted { inserted: 1 });
        assert_eq!(g.phase(), GamePhase::Accepting);
    }

    #[test]
    fn second_coin_resets_the_timer() {
        let mut g = TrustGame::new(0);
        let p = PayoutPolicy::PlusOne;
        g.insert_coin(0.0).unwrap();
        g.insert_coin(9.9).unwrap();
        assert_eq!(g.tick(10.0, &p).unwrap(), None);
        assert_eq!(g.tick(19.0, &p).unwrap(), None);
        assert_eq!(g.phase(), GamePhase::Accepting);
        assert_eq!(g.tick(19.899999, &p).unwrap(), None);
        assert_eq!(g.tick(19.9, &p).unwrap(), Some(PayoutEvent { t: 19.9, coins: 3 }));
        assert_eq!(g.phase(), GamePhase::Done);
    }

    #[test]
    fn sixth_coin_is_rejected() {
        let mut g = TrustGame::new(0);
        for i in 0..5 {
            g.insert_coin(i as f64).unwrap();
        }
        assert_eq!(g.insert_coin(5.0).unwrap(), InsertOutcome::Rejected);
        assert_eq!(g.inserted(), 5);
        assert_eq!(g.rejected(), 1);
        assert_eq!(g.tick(14.0, &PayoutPolicy::PlusOne).unwrap().unwrap().coins, 6);
    }

    #[test]
    fn three_coins_pay_four() {
        let mut g = TrustGame::new(0);
        for t in [1.0, 3.0, 5.0] {
            g.insert_coin(t).unwrap();
        }
        assert_eq!(g.tick(14.99, &PayoutPolicy::PlusOne).unwrap(), None);
        assert_eq!(g.tick(15.0, &PayoutPolicy::PlusOne).unwrap(), Some(PayoutEvent { t: 15.0, coins: 4 }));
    }

    #[test]
    fn declined_game_has_no_payout_event() {
        let mut g = TrustGame::new(0);
        g.decline(0.0).unwrap();
        assert_eq!(g.phase(), GamePhase::Done);
        assert_eq!(g.tick(100.0, &PayoutPolicy::PlusOne).unwrap(), None);
        assert_eq!(g.payout(), Some(0));
        assert_eq!(g.insert_coin(101.0).unwrap(), InsertOutcome::Rejected);
    }

    #[test]
    fn coins_after_decision_bounce() {
        let mut g = TrustGame::new(0);
        g.insert_coin(0.0).unwrap();
        g.tick(10.0, &PayoutPolicy::PlusOne).unwrap();
        assert_eq!(g.insert_coin(11.0).unwrap(), InsertOutcome::Rejected);
        assert_eq!(g.coins_out(), 3);
    }

    #[test]
    fn time_regression_is_an_error() {
        let mut g = TrustGame::new(0);
        g.insert_coin(5.0).unwrap();
        assert!(matches!(g.tick(4.0, &PayoutPolicy::PlusOne), Err(Error::TimeRegression { .. })));
    }

    #[test]
    fn multiplier_policy_stays_in_band() {
        let policy = PayoutPolicy::Multiplier { factor: 1.5, variance: 0.1 };
        let mut rng = seed::rng(1);
        for n in 1..=MAX_COINS {
            for _ in 0..200 {
                let p = policy.payout(n, &mut rng);
                assert!(p >= (1.35 * n as f64).floor() as u32, "n={n} p={p}");
                assert!(p <= (1.65 * n as f64).ceil() as u32, "n={n} p={p}");
                assert!(p <= 3 * n);
            }
        }
        assert!(PayoutPolicy::Multiplier { factor: 1.5, variance: 1.5 }.validate().is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decision_waits_for_ten_idle_seconds(gaps in proptest::collection::vec(0u32..1500, 0..9), seed in any::<u64>()) {
                // Insert times in centiseconds; the game is ticked every centisecond.
                let mut at = Vec::new();
                let mut t = 0;
                for g in gaps {
                    t += g;
                    at.push(t);
                }
                let mut game = TrustGame::new(seed);
                let mut last_accepted: Option<u32> = None;
                let mut events = Vec::new();
                for k in 0..=(t + 1200) {
                    let now = f64::from(k) / 100.0;
                    for _ in at.iter().filter(|&&a| a == k) {
                        if let InsertOutcome::Accepted { .. } = game.insert_coin(now).unwrap() {
                            last_accepted = Some(k);
                        }
                    }
                    if let Some(ev) = game.tick(now, &PayoutPolicy::PlusOne).unwrap() {
                        let last = last_accepted.unwrap();
                        prop_assert_eq!(k - last, 1000);
                        events.push(ev);
                    }
                }
                match last_accepted {
                    None => prop_assert!(events.is_empty()),
                    Some(_) => {
                        prop_assert_eq!(events.len(), 1);
                        prop_assert_eq!(events[0].coins, game.inserted() + 1);
                        prop_assert!(events[0].coins <= PAYOUT_CEILING * game.inserted());
                    }
                }
                prop_assert_eq!(game.coins_out(), game.payout().unwrap_or(0) + game.rejected());
                prop_assert_eq!(game.inserted() + game.rejected(), at.len() as u32);
            }

            #[test]
            fn multiplier_payout_stays_in_band(n in 1u32..=5, seed in any::<u64>()) {
                let policy = PayoutPolicy::Multiplier { factor: 1.5, variance: 0.1 };
                let p = policy.payout(n, &mut seed::rng(seed));
                prop_assert!(p >= (1.35 * f64::from(n)).floor() as u32);
                prop_assert!(p <= (1.65 * f64::from(n)).ceil() as u32);
                prop_assert!(p <= PAYOUT_CEILING * n);
            }
        }
    }
}

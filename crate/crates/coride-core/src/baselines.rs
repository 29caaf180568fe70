//! Rule-based reference policies: random assignment (RAN), response-rate
//! greedy (RES, short orders first), and revenue greedy (REV, expensive
//! orders first). Dispatch only; these policies never issue fake orders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sim::{Order, OrderKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RulePolicy {
    Ran,
    Res,
    Rev,
}

impl RulePolicy {
    pub fn parse(s: &str) -> Option<RulePolicy> {
        match s.to_ascii_lowercase().as_str() {
            "ran" => Some(RulePolicy::Ran),
            "res" => Some(RulePolicy::Res),
            "rev" => Some(RulePolicy::Rev),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RulePolicy::Ran => "ran",
            RulePolicy::Res => "res",
            RulePolicy::Rev => "rev",
        }
    }
}

/// Picks up to `min(idle, orders)` real orders at one grid.
///
/// RAN takes a uniform random subset in random order; RES sorts by
/// ascending duration then descending price; REV sorts by descending price
/// then ascending duration. Residual ties break by ascending order id, so
/// RES/REV are deterministic and permutation-invariant to input order.
pub fn decide(policy: RulePolicy, orders: &[Order], idle: u32, rng: &mut ChaCha8Rng) -> Vec<Order> {
    let mut real: Vec<Order> = orders
        .iter()
        .filter(|o| o.kind == OrderKind::Real)
        .cloned()
        .collect();
    let k = (idle as usize).min(real.len());
    if k == 0 {
        return Vec::new();
    }
    match policy {
        RulePolicy::Ran => {
            let n = real.len();
            for i in 0..k {
                let j = rng.gen_range(i..n);
                real.swap(i, j);
            }
            real.truncate(k);
            real
        }
        RulePolicy::Res => {
            real.sort_by(|a, b| {
                a.duration
                    .cmp(&b.duration)
                    .then(b.price.partial_cmp(&a.price).expect("finite prices"))
                    .then(a.id.cmp(&b.id))
            });
            real.truncate(k);
            real
        }
        RulePolicy::Rev => {
            real.sort_by(|a, b| {
                b.price
                    .partial_cmp(&a.price)
                    .expect("finite prices")
                    .then(a.duration.cmp(&b.duration))
                    .then(a.id.cmp(&b.id))
            });
            real.truncate(k);
            real
        }
    }
}

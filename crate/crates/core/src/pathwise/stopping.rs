//! Exhaustive optimal stopping on small non-recombining joint trees.

use super::{CharacteristicData, EXHAUSTIVE_NODE_GUARD};
use crate::error::{Error, Result};
use crate::lattice::JointTree;

/// Largest number of stopping times [`brute_force_stopping`] will enumerate.
pub const DEFAULT_POLICY_BUDGET: u64 = 1_000_000;

/// Stop/continue flag per `[level][node]`; the last level always stops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingPolicy {
    pub stop: Vec<Vec<bool>>,
}

impl StoppingPolicy {
    /// Stop only at the horizon.
    pub fn at_horizon(tree: &JointTree) -> Self {
        let n = tree.steps();
        let stop = (0..=n).map(|k| vec![k == n; tree.level_size(k)]).collect();
        Self { stop }
    }

    /// `E[A_τ + ξ_τ 1{τ<T} + G 1{τ=T}]` from the root, summed path by path.
    pub fn value(&self, data: &CharacteristicData, tree: &JointTree) -> f64 {
        let n = tree.steps();
        let p = tree.edge_prob();
        let mut total = 0.0;
        let mut stack = vec![(0usize, 0usize, 1.0f64, 0.0f64)];
        while let Some((k, idx, prob, acc)) = stack.pop() {
            if k == n {
                total += prob * (acc + data.terminal[idx]);
            } else if self.stop[k][idx] {
                total += prob * (acc + data.obstacle[k][idx]);
            } else {
                for (c, _, cb) in tree.children(k, idx) {
                    stack.push((k + 1, c, prob * p, acc + data.edge_reward(k, idx, c, cb)));
                }
            }
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct StoppingOutcome {
    pub value: f64,
    pub best: StoppingPolicy,
    /// Number of distinct stopping times evaluated.
    pub policies: u64,
}

/// Distinct stopping times on a non-recombining tree of the given depth and
/// branching: `P_N = 1`, `P_k = 1 + P_{k+1}^b`. Saturates at `u64::MAX`.
pub fn policy_count(steps: usize, branching: usize) -> u64 {
    let mut p: u64 = 1;
    for _ in 0..steps {
        let mut prod: u64 = 1;
        for _ in 0..branching {
            prod = prod.saturating_mul(p);
        }
        p = prod.saturating_add(1);
    }
    p
}

/// Evaluate every stopping time of the joint tree and return the best.
///
/// Stopping times are enumerated as cuts of the tree: at each reached node
/// either stop, or continue and choose independently below every child.
pub fn brute_force_stopping(data: &CharacteristicData, tree: &JointTree, budget: u64) -> Result<StoppingOutcome> {
    if tree.w().is_recombining() || tree.b().is_recombining() {
        return Err(Error::InvalidInput("exhaustive stopping needs a non-recombining joint tree".into()));
    }
    if data.steps() != tree.steps() {
        return Err(Error::LevelMismatch { expected: tree.steps(), got: data.steps() });
    }
    let nodes = tree.total_nodes();
    if nodes > EXHAUSTIVE_NODE_GUARD {
        return Err(Error::Budget { requested: nodes, limit: EXHAUSTIVE_NODE_GUARD });
    }
    let count = policy_count(tree.steps(), tree.branching());
    if count > budget {
        return Err(Error::Budget {
            requested: usize::try_from(count).unwrap_or(usize::MAX),
            limit: usize::try_from(budget).unwrap_or(usize::MAX),
        });
    }

    let mut policy = StoppingPolicy::at_horizon(tree);
    let mut best: Option<(f64, StoppingPolicy)> = None;
    let mut seen = 0u64;
    let mut pending = vec![(0usize, 0usize)];
    let mut visit = |p: &StoppingPolicy| {
        seen += 1;
        let v = p.value(data, tree);
        if best.as_ref().map_or(true, |(b, _)| v > *b) {
            best = Some((v, p.clone()));
        }
    };
    enumerate(tree, &mut pending, &mut policy, &mut visit);
    let (value, best) = best.expect("at least one stopping time exists");
    Ok(StoppingOutcome { value, best, policies: seen })
}

/// Every completion of `policy` over the nodes in `pending`; returns with
/// `pending` and `policy` as they were on entry.
fn enumerate(
    tree: &JointTree,
    pending: &mut Vec<(usize, usize)>,
    policy: &mut StoppingPolicy,
    visit: &mut dyn FnMut(&StoppingPolicy),
) {
    let Some((k, idx)) = pending.pop() else {
        visit(policy);
        return;
    };
    if k == tree.steps() {
        enumerate(tree, pending, policy, visit);
    } else {
        policy.stop[k][idx] = true;
        enumerate(tree, pending, policy, visit);
        policy.stop[k][idx] = false;
        let before = pending.len();
        pending.extend(tree.children(k, idx).map(|(c, _, _)| (k + 1, c)));
        enumerate(tree, pending, policy, visit);
        pending.truncate(before);
    }
    pending.push((k, idx));
}

//! Anytime Repairing A* over integer edge costs.
//!
//! Keys are kept in integers: with `e2 = 2ε` the priority `g + ε·h` is
//! compared as `2g + e2·h`, which is exact for the half-step schedule.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

pub trait SearchSpace {
    type State: Clone + Ord + Hash;

    /// Appends `(successor, edge cost)` pairs. Costs must be positive.
    fn successors(&self, s: &Self::State, out: &mut Vec<(Self::State, u64)>);
    fn heuristic(&self, s: &Self::State) -> u64;
    fn is_goal(&self, s: &Self::State) -> bool;
}

/// A solution published at the end of one search iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvement {
    pub epsilon: f64,
    pub cost: u64,
    pub bound: f64,
    pub expansions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    /// The schedule finished with a proven bound.
    Complete,
    /// The expansion budget ran out.
    BudgetExhausted,
    /// No goal is reachable.
    Unreachable,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<S> {
    pub path: Option<Vec<S>>,
    pub cost: Option<u64>,
    pub bound: f64,
    pub expansions: usize,
    pub history: Vec<Improvement>,
    pub status: SearchStatus,
}

struct Node<S> {
    g: u64,
    parent: Option<(S, u64)>,
    open: bool,
    closed: bool,
    incons: bool,
}

/// The ε schedule 5.0, 4.5, ..., 1.0 as doubled integers.
pub fn default_schedule() -> Vec<u64> {
    (2..=10).rev().collect()
}

/// Runs the schedule until it ends, the budget is spent or the published
/// bound drops to `accept_bound` (1.0 runs to optimality).
pub fn ara_star<P: SearchSpace>(
    p: &P,
    start: P::State,
    schedule: &[u64],
    budget: usize,
    accept_bound: f64,
) -> SearchOutcome<P::State> {
    assert!(!schedule.is_empty() && schedule.iter().all(|&e| e >= 2), "weights must be at least 1");
    let mut nodes: HashMap<P::State, Node<P::State>> = HashMap::new();
    nodes.insert(start.clone(), Node { g: 0, parent: None, open: true, closed: false, incons: false });
    let mut heap: BinaryHeap<Reverse<(u128, u64, P::State)>> = BinaryHeap::new();
    let mut incons: Vec<P::State> = Vec::new();
    let mut goal: Option<(u64, P::State)> = p.is_goal(&start).then(|| (0, start.clone()));
    let mut expansions = 0usize;
    let mut history = Vec::new();
    let mut bound = f64::INFINITY;
    let mut succ = Vec::new();
    let key = |g: u64, h: u64, e2: u64| 2 * g as u128 + e2 as u128 * h as u128;
    heap.push(Reverse((key(0, p.heuristic(&start), schedule[0]), 0, start.clone())));

    let mut status = SearchStatus::Complete;
    'schedule: for (round, &e2) in schedule.iter().enumerate() {
        if round > 0 {
            for s in incons.drain(..) {
                if let Some(n) = nodes.get_mut(&s) {
                    n.incons = false;
                    n.open = true;
                }
            }
            heap = nodes
                .iter_mut()
                .filter(|(_, n)| n.open)
                .map(|(s, n)| {
                    n.closed = false;
                    Reverse((key(n.g, p.heuristic(s), e2), n.g, s.clone()))
                })
                .collect();
            for n in nodes.values_mut() {
                n.closed = false;
            }
        }
        loop {
            let Some(Reverse((k, g, s))) = heap.peek().cloned() else {
                break;
            };
            let stale = nodes.get(&s).is_none_or(|n| !n.open || n.g != g);
            if stale {
                heap.pop();
                continue;
            }
            if goal.as_ref().is_some_and(|(gg, _)| 2 * *gg as u128 <= k) {
                break;
            }
            if expansions >= budget {
                status = SearchStatus::BudgetExhausted;
                break 'schedule;
            }
            heap.pop();
            expansions += 1;
            {
                let n = nodes.get_mut(&s).expect("popped node exists");
                n.open = false;
                n.closed = true;
            }
            succ.clear();
            p.successors(&s, &mut succ);
            for (t, c) in succ.drain(..) {
                let ng = g + c;
                let entry = nodes
                    .entry(t.clone())
                    .or_insert(Node { g: u64::MAX, parent: None, open: false, closed: false, incons: false });
                if ng >= entry.g {
                    continue;
                }
                entry.g = ng;
                entry.parent = Some((s.clone(), c));
                if p.is_goal(&t) && goal.as_ref().is_none_or(|(gg, _)| ng < *gg) {
                    goal = Some((ng, t.clone()));
                }
                if entry.closed {
                    if !entry.incons {
                        entry.incons = true;
                        incons.push(t);
                    }
                } else {
                    entry.open = true;
                    heap.push(Reverse((key(ng, p.heuristic(&t), e2), ng, t)));
                }
            }
        }
        let Some((gg, _)) = goal.as_ref() else {
            if heap.is_empty() {
                status = SearchStatus::Unreachable;
                break;
            }
            continue;
        };
        // Lower bound on the optimum from OPEN and INCONS.
        let lower = nodes
            .iter()
            .filter(|(_, n)| n.open || n.incons)
            .map(|(s, n)| n.g as u128 + p.heuristic(s) as u128)
            .min();
        let eps = e2 as f64 / 2.0;
        let ratio = match lower {
            Some(l) if l > 0 => *gg as f64 / l as f64,
            Some(_) => eps,
            None => 1.0,
        };
        bound = bound.min(eps.min(ratio).max(1.0));
        history.push(Improvement { epsilon: eps, cost: *gg, bound, expansions });
        if bound <= accept_bound.max(1.0) {
            break;
        }
    }

    let (path, cost) = match &goal {
        Some((_, g)) => {
            let mut path = vec![g.clone()];
            let mut cost = 0;
            let mut cur = g.clone();
            while let Some((prev, c)) = nodes.get(&cur).and_then(|n| n.parent.clone()) {
                cost += c;
                path.push(prev.clone());
                cur = prev;
            }
            path.reverse();
            (Some(path), Some(cost))
        }
        None => (None, None),
    };
    if status == SearchStatus::Complete && goal.is_none() {
        status = SearchStatus::Unreachable;
    }
    SearchOutcome { path, cost, bound, expansions, history, status }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2-D grid with blocked cells and unit-ish costs.
    struct Grid {
        w: i32,
        h: i32,
        blocked: Vec<(i32, i32)>,
        goal: (i32, i32),
    }

    impl SearchSpace for Grid {
        type State = (i32, i32);

        fn successors(&self, s: &(i32, i32), out: &mut Vec<((i32, i32), u64)>) {
            for (dx, dy, c) in [(1, 0, 10), (-1, 0, 10), (0, 1, 10), (0, -1, 10), (1, 1, 14), (-1, -1, 14), (1, -1, 14), (-1, 1, 14)] {
                let t = (s.0 + dx, s.1 + dy);
                if t.0 >= 0 && t.1 >= 0 && t.0 < self.w && t.1 < self.h && !self.blocked.contains(&t) {
                    out.push((t, c));
                }
            }
        }

        fn heuristic(&self, s: &(i32, i32)) -> u64 {
            let (dx, dy) = ((s.0 - self.goal.0).abs() as u64, (s.1 - self.goal.1).abs() as u64);
            10 * dx.max(dy) + 4 * dx.min(dy)
        }

        fn is_goal(&self, s: &(i32, i32)) -> bool {
            *s == self.goal
        }
    }

    fn grid() -> Grid {
        let blocked = (0..9).map(|y| (5, y)).chain((3..12).map(|y| (9, y))).collect();
        Grid { w: 14, h: 12, blocked, goal: (13, 0) }
    }

    #[test]
    fn final_cost_matches_weight_one_search() {
        let g = grid();
        let anytime = ara_star(&g, (0, 0), &default_schedule(), usize::MAX, 1.0);
        let optimal = ara_star(&g, (0, 0), &[2], usize::MAX, 1.0);
        assert_eq!(anytime.status, SearchStatus::Complete);
        assert_eq!(anytime.cost, optimal.cost);
        assert_eq!(anytime.bound, 1.0);
    }

    #[test]
    fn history_is_monotone() {
        let out = ara_star(&grid(), (0, 0), &default_schedule(), usize::MAX, 1.0);
        for w in out.history.windows(2) {
            assert!(w[1].cost <= w[0].cost);
            assert!(w[1].bound <= w[0].bound);
        }
    }

    #[test]
    fn walled_off_goal_is_unreachable() {
        let mut g = grid();
        g.blocked = (0..12).map(|y| (7, y)).collect();
        let out = ara_star(&g, (0, 0), &default_schedule(), usize::MAX, 1.0);
        assert_eq!(out.status, SearchStatus::Unreachable);
        assert!(out.path.is_none());
    }

    #[test]
    fn tiny_budget_runs_out() {
        let out = ara_star(&grid(), (0, 0), &default_schedule(), 3, 1.0);
        assert_eq!(out.status, SearchStatus::BudgetExhausted);
        assert_eq!(out.expansions, 3);
    }

    #[test]
    fn start_at_goal_costs_nothing() {
        let g = grid();
        let out = ara_star(&g, g.goal, &default_schedule(), usize::MAX, 1.0);
        assert_eq!(out.cost, Some(0));
        assert_eq!(out.path.unwrap().len(), 1);
    }
}

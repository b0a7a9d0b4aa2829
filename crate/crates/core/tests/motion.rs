use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use plr_core::executor::{home_config, spec_for_command, ExecutorConfig};
use plr_core::motion::search::SearchSpace;
use plr_core::motion::{self, plan, Goal, Lattice, Mode, PlanQuery, RobotModel};
use plr_core::sim::SimParams;
use plr_core::strategy::{hardcoded_decision, Decision};
use plr_core::world::{generate_environment, perceive, EnvSpec, WorldState};

const EXPANSION_CAP: usize = 400_000;

/// Dijkstra from the start; returns the optimal path and its cost.
fn shortest<P: SearchSpace>(p: &P, start: P::State) -> Option<(Vec<(P::State, u64)>, u64)> {
    let mut dist: HashMap<P::State, u64> = HashMap::from([(start.clone(), 0)]);
    let mut parent: HashMap<P::State, P::State> = HashMap::new();
    let mut heap = BinaryHeap::from([Reverse((0u64, start.clone()))]);
    let mut succ = Vec::new();
    let mut pops = 0;
    while let Some(Reverse((g, s))) = heap.pop() {
        if dist[&s] < g {
            continue;
        }
        pops += 1;
        if pops > EXPANSION_CAP {
            return None;
        }
        if p.is_goal(&s) {
            let mut path = vec![(s.clone(), g)];
            let mut cur = s;
            while let Some(prev) = parent.get(&cur) {
                path.push((prev.clone(), dist[prev]));
                cur = prev.clone();
            }
            path.reverse();
            return Some((path, g));
        }
        succ.clear();
        p.successors(&s, &mut succ);
        for (t, c) in succ.drain(..) {
            let ng = g + c;
            if dist.get(&t).is_none_or(|&d| ng < d) {
                dist.insert(t.clone(), ng);
                parent.insert(t.clone(), s.clone());
                heap.push(Reverse((ng, t)));
            }
        }
    }
    None
}

/// Lattice queries of the expert's first action on a few generated trucks.
fn expert_queries() -> Vec<PlanQuery> {
    let cfg = ExecutorConfig::for_sim(&SimParams::default());
    let mut out = Vec::new();
    for spec in [EnvSpec::wall(1), EnvSpec::pile(2), EnvSpec::pile(5)] {
        let w: WorldState = perceive(&generate_environment(&spec).unwrap());
        let Decision::Act { action, command } = hardcoded_decision(&w, &cfg.hardcoded, &cfg.action) else { continue };
        out.extend(spec_for_command(action, command, &w, &cfg).queries(&w, &home_config(), &cfg));
    }
    out
}

#[test]
fn heuristic_never_exceeds_cost_to_go_on_optimal_paths() {
    let m = RobotModel::default();
    let mut checked = 0;
    for q in expert_queries().iter().filter(|q| matches!(q.goal, Goal::Pose(_) | Goal::Joints(_))) {
        let lat = Lattice::for_query(&m, q);
        let Some((path, total)) = shortest(&lat, lat.start_state()) else { continue };
        for (s, g) in &path {
            assert!(lat.heuristic(s) <= total - g, "{:?}: h={} > {}", q.mode, lat.heuristic(s), total - g);
            checked += 1;
        }
    }
    assert!(checked > 0, "no lattice query was solvable");
}

#[test]
fn lattice_trajectories_are_collision_free_and_near_optimal() {
    let m = RobotModel::default();
    let mut solved = 0;
    for q in expert_queries() {
        let Ok(t) = plan(&m, &q) else { continue };
        for c in &t.waypoints {
            assert!(m.within_limits(c), "{:?} waypoint out of limits", q.mode);
            if q.mode != Mode::M6SnapToValid {
                assert!(!motion::collides(&m, c, &q.world), "{:?} waypoint collides", q.mode);
            }
        }
        if matches!(q.goal, Goal::Pose(_) | Goal::Joints(_)) {
            let lat = Lattice::for_query(&m, &q);
            if let (Some((_, opt)), Some(last)) = (shortest(&lat, lat.start_state()), t.anytime.last()) {
                // The trajectory may end with an off-lattice snap to the
                // exact joint goal; the bound covers the lattice part.
                let opt = opt as f64 / 1e6;
                assert!(last.cost + 1e-9 >= opt, "cost {} below optimum {opt}", last.cost);
                assert!(last.cost <= last.bound * opt + 1e-6, "{:?} cost {} above {} x {opt}", q.mode, last.cost, last.bound);
                assert!(t.cost + 1e-9 >= last.cost);
            }
        }
        solved += 1;
    }
    assert!(solved > 0);
}

#[test]
fn snap_mode_ends_in_free_space() {
    let m = RobotModel::default();
    for q in expert_queries().into_iter().filter(|q| q.mode == Mode::M6SnapToValid) {
        let t = plan(&m, &q).unwrap();
        if let Some(end) = t.end() {
            assert!(!motion::collides(&m, end, &q.world));
        }
    }
}

#[test]
fn query_json_round_trips_through_validation() {
    for q in expert_queries() {
        let text = serde_json::to_string(&q).unwrap();
        assert_eq!(PlanQuery::from_json_str(&text).unwrap(), q);
    }
}

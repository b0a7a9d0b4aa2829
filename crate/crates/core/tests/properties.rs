use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use proptest::prelude::*;

use plr_core::chooser::{extract_features, Dataset, Label, NNIndex, Provenance, Row, Scaler};
use plr_core::executor::{ActionRecord, EpisodeLog};
use plr_core::generator::{propagate, Belief, GeneratorContext, Particle};
use plr_core::harness::{summarize, Method, Run};
use plr_core::motion::search::{ara_star, default_schedule, SearchSpace};
use plr_core::sim::{SimCommand, SimHandle, SimParams};
use plr_core::strategy::{AbstractAction, StrategyNode, FEATURE_DIM};
use plr_core::world::{generate_environment, BoxInstance, Cell, EnvSpec, Extent, Family, TrueWorldState, WorldState, DEFAULT_CELL_SIZE};

/// Columns of 2x2 boxes in a 6x8x10 truck, each fully supported.
fn arb_world() -> impl Strategy<Value = WorldState> {
    prop::collection::vec((0usize..7, 1usize..3), 0..8).prop_map(|spec| {
        let columns = [(0, 0), (0, 2), (0, 4), (0, 6), (2, 2), (2, 4), (4, 0)];
        let mut tops = [0usize; 7];
        let mut boxes = Vec::new();
        for (id, (c, h)) in spec.into_iter().enumerate() {
            if tops[c] + h > 10 {
                continue;
            }
            let (d, w) = columns[c];
            boxes.push(BoxInstance::new(id as u32, Cell::new(d, w, tops[c]), Extent::new(2, 2, h)));
            tops[c] += h;
        }
        WorldState::new(Extent::new(6, 8, 10), DEFAULT_CELL_SIZE, boxes).unwrap()
    })
}

fn arb_command() -> impl Strategy<Value = SimCommand> {
    prop_oneof![
        (0usize..8, 0usize..10, 1usize..5, 1usize..5).prop_map(|(w, h, fw, fh)| SimCommand::Pick { grasp: (w, h), footprint: (fw, fh) }),
        (1usize..=8).prop_map(|depth| SimCommand::Sweep { depth }),
    ]
}

fn record(duration: f64, boxes: usize) -> ActionRecord {
    ActionRecord {
        t_start: 0.0,
        action: AbstractAction::all()[0],
        kind: AbstractAction::all()[0].kind(),
        fallback: false,
        executed: true,
        modes: Vec::new(),
        snaps: 0,
        plan_time: 0.0,
        exec_time: duration,
        motion_time: 0.0,
        boxes_unloaded: boxes,
        boxes_dropped: 0,
        failures: 0,
    }
}

/// A random weighted grid with an admissible Manhattan heuristic.
struct Grid {
    n: i32,
    costs: Vec<u64>,
    blocked: Vec<bool>,
}

impl Grid {
    fn idx(&self, (x, y): (i32, i32)) -> usize {
        (y * self.n + x) as usize
    }
}

impl SearchSpace for Grid {
    type State = (i32, i32);

    fn successors(&self, s: &(i32, i32), out: &mut Vec<((i32, i32), u64)>) {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let t = (s.0 + dx, s.1 + dy);
            if t.0 >= 0 && t.1 >= 0 && t.0 < self.n && t.1 < self.n && !self.blocked[self.idx(t)] {
                out.push((t, self.costs[self.idx(t)]));
            }
        }
    }

    fn heuristic(&self, s: &(i32, i32)) -> u64 {
        ((self.n - 1 - s.0) + (self.n - 1 - s.1)) as u64
    }

    fn is_goal(&self, s: &(i32, i32)) -> bool {
        *s == (self.n - 1, self.n - 1)
    }
}

fn dijkstra(g: &Grid) -> Option<u64> {
    let mut dist = HashMap::from([((0, 0), 0u64)]);
    let mut heap = BinaryHeap::from([Reverse((0u64, (0, 0)))]);
    let mut succ = Vec::new();
    while let Some(Reverse((d, s))) = heap.pop() {
        if dist[&s] < d {
            continue;
        }
        if g.is_goal(&s) {
            return Some(d);
        }
        succ.clear();
        g.successors(&s, &mut succ);
        for (t, c) in succ.drain(..) {
            if dist.get(&t).is_none_or(|&old| d + c < old) {
                dist.insert(t, d + c);
                heap.push(Reverse((d + c, t)));
            }
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_are_fixed_length_and_order_free(w in arb_world()) {
        let f = extract_features(&w);
        prop_assert_eq!(f.len(), FEATURE_DIM);
        prop_assert!(f.iter().all(|x| x.is_finite()));
        let mut reversed: Vec<BoxInstance> = w.boxes().to_vec();
        reversed.reverse();
        let w2 = WorldState::new(w.dims(), w.cell_size(), reversed).unwrap();
        prop_assert_eq!(extract_features(&w2), f);
    }

    #[test]
    fn scaler_centres_its_fit_data(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), 2..20)) {
        let s = Scaler::fit(&rows);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        for j in 0..4 {
            let mean = z.iter().map(|r| r[j]).sum::<f64>() / z.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_matches_brute_force(
        anchors in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, FEATURE_DIM), 1..12),
        q in prop::collection::vec(-4.0f64..4.0, FEATURE_DIM),
    ) {
        let leaf = StrategyNode::leaf(AbstractAction::all()[0]);
        let idx = NNIndex::new(anchors.iter().map(|a| (a.clone(), leaf.clone())).collect()).unwrap();
        let s = Scaler::fit(&anchors);
        let zq = s.apply(&q);
        let d: Vec<f64> = anchors.iter().map(|a| s.apply(a).iter().zip(&zq).map(|(x, y)| (x - y).powi(2)).sum()).collect();
        let best = (0..d.len()).fold(0, |b, i| if d[i] < d[b] { i } else { b });
        let (id, dist) = idx.nearest(&q).unwrap();
        prop_assert_eq!(id, best);
        prop_assert!((dist - d[best].sqrt()).abs() < 1e-9);
    }

    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, FEATURE_DIM), any::<bool>(), any::<u64>()), 0..6),
    ) {
        let mut d = Dataset::default();
        for (step, (features, lib, seed)) in rows.into_iter().enumerate() {
            let label = if lib { Label::UseLibrary } else { Label::UseHardcoded };
            let provenance = Provenance { family: Family::PileUnstructured, env_seed: seed, step: step as u64 };
            d.push(Row { features, label, provenance }).unwrap();
        }
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn unloading_curves_never_decrease(steps in prop::collection::vec((0.0f64..30.0, 0usize..6), 0..20), probe in 0.0f64..700.0) {
        let mut log = EpisodeLog::new(200);
        log.records = steps.iter().map(|&(t, n)| record(t, n)).collect();
        let curve = log.curve();
        prop_assert!(curve.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert!(log.boxes_at(probe) <= log.boxes_at(probe + 10.0));
        let grid: Vec<f64> = (0..=70).map(|i| i as f64 * 10.0).collect();
        let run = Run { env: "wall-0".into(), method: Method::Hardcoded, seed: 0, result: Ok(log) };
        let report = summarize(&grid, vec![run]);
        prop_assert!(report.cells[0].mean.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn anytime_search_respects_its_bounds(
        n in 3i32..9,
        costs in prop::collection::vec(1u64..9, 81),
        blocked in prop::collection::vec(prop::bool::weighted(0.2), 81),
    ) {
        let mut g = Grid { n, costs, blocked };
        let (start, goal) = (g.idx((0, 0)), g.idx((n - 1, n - 1)));
        g.blocked[start] = false;
        g.blocked[goal] = false;
        let opt = dijkstra(&g);
        let out = ara_star(&g, (0, 0), &default_schedule(), usize::MAX, 1.0);
        prop_assert_eq!(out.cost, opt);
        if let Some(opt) = opt {
            prop_assert!(out.history.windows(2).all(|w| w[1].cost <= w[0].cost));
            for h in &out.history {
                prop_assert!(h.cost as f64 <= h.bound * opt as f64 + 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_conserves_boxes_and_replays(seed in 0u64..1000, cmds in prop::collection::vec(arb_command(), 1..6)) {
        let spec = EnvSpec::pile(seed);
        let mut sim = SimHandle::new(generate_environment(&spec).unwrap(), SimParams::default().with_seed(seed)).unwrap();
        let snap = sim.snapshot();
        let initial = sim.state().box_count();
        let mut first = Vec::new();
        for c in &cmds {
            first.push(sim.apply(c).ok());
            prop_assert_eq!(sim.unloaded_total() + sim.state().box_count(), initial);
            let w = sim.state().world();
            prop_assert!(WorldState::new(w.dims(), w.cell_size(), w.boxes().to_vec()).is_ok());
        }
        let end = sim.snapshot();
        sim.restore(&snap).unwrap();
        let again: Vec<_> = cmds.iter().map(|c| sim.apply(c).ok()).collect();
        prop_assert_eq!(again, first);
        prop_assert_eq!(sim.snapshot(), end);
    }

    #[test]
    fn belief_updates_stay_normalised(w in arb_world(), heavy in prop::collection::vec(any::<bool>(), 8), k in 0usize..12) {
        let ctx = GeneratorContext::for_sim(&SimParams { topple_prob: 0.3, ..SimParams::default() });
        let light: BTreeMap<u32, f64> = w.boxes().iter().map(|b| (b.id, 12.0)).collect();
        let mixed: BTreeMap<u32, f64> = w.boxes().iter().map(|b| (b.id, if heavy[b.id as usize % 8] { 90.0 } else { 12.0 })).collect();
        let b = Belief {
            particles: vec![
                Particle { state: TrueWorldState::new(w.clone(), light).unwrap(), weight: 0.3 },
                Particle { state: TrueWorldState::new(w, mixed).unwrap(), weight: 0.7 },
            ],
        };
        let branches = propagate(&b, &AbstractAction::all()[k], &ctx, k as u64, 16).unwrap();
        let total: f64 = branches.iter().map(|br| br.prob).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for br in &branches {
            prop_assert!((br.belief.total_weight() - 1.0).abs() < 1e-9);
            prop_assert!(br.cost >= 0.0);
        }
    }
}

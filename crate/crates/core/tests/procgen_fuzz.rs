use std::collections::{BTreeSet, VecDeque};

use navsim_core::geometry::Shape;
use navsim_core::grid::{Cell, CellKind, GridLayout};
use navsim_core::procgen::{generate_environment, AreaSpec, EnvironmentSpec};
use navsim_core::world::WorldState;
use navsim_core::Color;
use proptest::prelude::*;

const PALETTE: [Color; 6] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Orange,
    Color::Yellow,
    Color::Purple,
];

fn arb_area() -> impl Strategy<Value = AreaSpec> {
    (5usize..=10, 5usize..=10, 0u32..=4, prop::collection::vec((0usize..6, 0u32..=2), 0..3), 0usize..3)
        .prop_map(|(w, h, obstacles, objects, agents)| {
            let mut a = AreaSpec::new(w, h).with_obstacles(obstacles).with_agents(agents as u32);
            for (i, (c, n)) in objects.into_iter().enumerate() {
                a = if i % 2 == 0 {
                    a.with_ball(PALETTE[c], n)
                } else {
                    a.with_zone(PALETTE[c], n)
                };
            }
            a
        })
}

/// One to three areas chained through a single passage on a row both share.
fn arb_spec() -> impl Strategy<Value = EnvironmentSpec> {
    (any::<u64>(), prop::collection::vec(arb_area(), 1..=3), any::<u16>()).prop_map(|(seed, mut areas, row)| {
        for i in 1..areas.len() {
            let y = (row as usize % areas[i - 1].height_cells.min(areas[i].height_cells)) as i32;
            let x = areas[i - 1].width_cells as i32 - 1;
            areas[i - 1].exits.push((x, y));
            areas[i].entries.push((0, y));
        }
        EnvironmentSpec::new(seed, areas)
    })
    .prop_filter("spec within the item headroom", |s| s.validate().is_ok())
}

fn footprints(world: &WorldState) -> Vec<(usize, Shape)> {
    let mut out: Vec<(usize, Shape)> = world.obstacles.iter().map(|o| (o.area, o.shape)).collect();
    out.extend(world.balls.iter().map(|b| (b.area, b.footprint())));
    out.extend(world.zones.iter().map(|z| (z.area, z.footprint())));
    out.extend(
        world
            .agents
            .iter()
            .map(|a| (a.area, Shape::circle(a.pose.position(), world.robot.radius))),
    );
    out
}

/// Independent 4-neighbour BFS over non-obstacle cells of one area.
fn reachable(layout: &GridLayout, area: usize, from: Cell) -> BTreeSet<Cell> {
    let grid = &layout.areas[area];
    let open = |c: Cell| {
        grid.get_local(c.0 - grid.offset_x, c.1)
            .is_some_and(|k| k != CellKind::Obstacle)
    };
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some((x, y)) = queue.pop_front() {
        for n in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if open(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_worlds_hold_their_invariants(spec in arb_spec()) {
        let world = match generate_environment(&spec) {
            Ok(w) => w,
            // A tight random draw may legitimately exhaust its attempts.
            Err(navsim_core::procgen::GenError::InfeasiblePlacement { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };

        for (i, a) in spec.areas.iter().enumerate() {
            prop_assert_eq!(world.obstacles.iter().filter(|o| o.area == i).count(), a.obstacle_count as usize);
            prop_assert_eq!(world.agents.iter().filter(|g| g.area == i).count(), a.agents as usize);
            for (&c, &n) in &a.balls {
                prop_assert_eq!(world.balls.iter().filter(|b| b.area == i && b.color == c).count(), n as usize);
            }
            for (&c, &n) in &a.zones {
                prop_assert_eq!(world.zones.iter().filter(|z| z.area == i && z.color == c).count(), n as usize);
            }
        }

        let shapes = footprints(&world);
        for (i, (area, s)) in shapes.iter().enumerate() {
            prop_assert!(world.areas[*area].bounds().contains_box(&s.aabb()));
            for (_, t) in &shapes[i + 1..] {
                prop_assert!(s.distance_to_shape(t) > 0.0);
                prop_assert!(s.boundary_points(48).iter().all(|&p| !t.contains(p)));
                prop_assert!(t.boundary_points(48).iter().all(|&p| !s.contains(p)));
            }
        }

        let layout = &world.layout;
        for (i, grid) in layout.areas.iter().enumerate() {
            let cells = |pred: fn(CellKind) -> bool| -> Vec<Cell> {
                grid.local_cells()
                    .filter(|&(x, y)| grid.get_local(x, y).is_some_and(pred))
                    .map(|(x, y)| grid.to_global(x, y))
                    .collect()
            };
            let targets = cells(|k| matches!(k, CellKind::Ball | CellKind::Zone | CellKind::Entry | CellKind::Exit));
            for from in cells(|k| k == CellKind::Agent) {
                let r = reachable(layout, i, from);
                prop_assert!(targets.iter().all(|t| r.contains(t)));
            }
        }
        prop_assert!(layout.check_connectivity().connected);

        let again = generate_environment(&spec).unwrap();
        prop_assert_eq!(serde_json::to_string(&world).unwrap(), serde_json::to_string(&again).unwrap());
    }
}

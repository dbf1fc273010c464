//! Seeded procedural generation of single- and multi-area worlds.
//!
//! Generation runs in two stages. [`partition_grid`] assigns every item to
//! a cell of a per-area grid. Instantiation then places continuous
//! footprints at jittered cell centers, marks every cell an obstacle
//! reaches as blocked, and checks connectivity. A failed area is retried
//! with fresh draws up to `max_attempts` times.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Segment, Shape, Vec2};
use crate::grid::{AreaGrid, Cell, CellKind, GridLayout, Passage};
use crate::kinematics::{Pose, SimClock, Twist};
use crate::rng::SimRng;
use crate::world::{
    Agent, Area, Ball, Color, InventoryItem, ItemKind, Obstacle, RobotParams, WorldState, Zone, BALL_RADIUS,
    ZONE_RADIUS,
};

/// Obstacle side length (rectangles) or diameter (discs), meters.
pub const OBSTACLE_SIZE_RANGE: (f64, f64) = (0.4, 1.5);
/// Jitter of object centers around their cell center, as a fraction of the cell.
pub const JITTER_FRACTION: f64 = 0.25;
/// A cell is blocked when an obstacle comes closer than this to its square.
pub const BLOCK_MARGIN: f64 = 0.15;
/// Minimum separation between placed footprints.
pub const PLACEMENT_GAP: f64 = 0.02;
const SHAPE_TRIES: usize = 25;

fn default_cell_size() -> f64 {
    1.0
}

fn default_max_attempts() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSpec {
    pub width_cells: usize,
    pub height_cells: usize,
    #[serde(default)]
    pub obstacle_count: u32,
    /// Ball counts per color, in declaration order.
    #[serde(default)]
    pub balls: IndexMap<Color, u32>,
    #[serde(default)]
    pub zones: IndexMap<Color, u32>,
    #[serde(default)]
    pub agents: u32,
    /// Local cells on the west edge that open into the previous area.
    #[serde(default)]
    pub entries: Vec<(i32, i32)>,
    /// Local cells on the east edge that open into the next area.
    #[serde(default)]
    pub exits: Vec<(i32, i32)>,
}

impl AreaSpec {
    pub fn new(width_cells: usize, height_cells: usize) -> Self {
        Self {
            width_cells,
            height_cells,
            obstacle_count: 0,
            balls: IndexMap::new(),
            zones: IndexMap::new(),
            agents: 0,
            entries: Vec::new(),
            exits: Vec::new(),
        }
    }

    pub fn with_obstacles(mut self, n: u32) -> Self {
        self.obstacle_count = n;
        self
    }

    pub fn with_ball(mut self, color: Color, n: u32) -> Self {
        *self.balls.entry(color).or_default() += n;
        self
    }

    pub fn with_zone(mut self, color: Color, n: u32) -> Self {
        *self.zones.entry(color).or_default() += n;
        self
    }

    pub fn with_agents(mut self, n: u32) -> Self {
        self.agents = n;
        self
    }

    fn placed_items(&self) -> usize {
        self.obstacle_count as usize
            + self.balls.values().map(|&n| n as usize).sum::<usize>()
            + self.zones.values().map(|&n| n as usize).sum::<usize>()
            + self.agents as usize
            + self.entries.len()
            + self.exits.len()
    }

    fn inventory(&self) -> Vec<InventoryItem> {
        let balls = self.balls.iter().map(|(&color, &count)| InventoryItem {
            count,
            color,
            kind: ItemKind::Ball,
        });
        let zones = self.zones.iter().map(|(&color, &count)| InventoryItem {
            count,
            color,
            kind: ItemKind::Zone,
        });
        balls.chain(zones).filter(|i| i.count > 0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub seed: u64,
    pub areas: Vec<AreaSpec>,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

impl EnvironmentSpec {
    pub fn new(seed: u64, areas: Vec<AreaSpec>) -> Self {
        Self {
            seed,
            areas,
            cell_size: default_cell_size(),
            max_attempts: default_max_attempts(),
        }
    }

    /// Single 10x10 area with one Orange ball, Red and Green zones, five
    /// obstacles and one robot.
    pub fn fetch_and_deliver(seed: u64) -> Self {
        Self::new(
            seed,
            vec![AreaSpec::new(10, 10)
                .with_ball(Color::Orange, 1)
                .with_zone(Color::Red, 1)
                .with_zone(Color::Green, 1)
                .with_obstacles(5)
                .with_agents(1)],
        )
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.areas.is_empty() {
            return Err(GenError::NoAreas);
        }
        if !(self.cell_size.is_finite() && self.cell_size >= 0.8) {
            return Err(GenError::InvalidSpec(format!(
                "cell_size must be at least 0.8 m, got {}",
                self.cell_size
            )));
        }
        if self.max_attempts == 0 {
            return Err(GenError::InvalidSpec("max_attempts must be positive".into()));
        }
        for (i, a) in self.areas.iter().enumerate() {
            if a.width_cells < 3 || a.height_cells < 3 {
                return Err(GenError::InvalidSpec(format!(
                    "area {i} is {}x{}, minimum is 3x3",
                    a.width_cells, a.height_cells
                )));
            }
            let cells = a.width_cells * a.height_cells;
            if a.placed_items() * 2 > cells {
                return Err(GenError::InvalidSpec(format!(
                    "area {i} places {} items in {cells} cells, limit is half",
                    a.placed_items()
                )));
            }
        }
        self.passages().map(|_| ())
    }

    /// Resolves every declared entry and exit into a passage between
    /// neighboring areas.
    pub fn passages(&self) -> Result<Vec<Passage>, GenError> {
        let offsets = self.column_offsets();
        let mut passages = Vec::new();
        for (i, a) in self.areas.iter().enumerate() {
            for &(x, y) in &a.exits {
                let next = self.areas.get(i + 1);
                let ok = x == a.width_cells as i32 - 1
                    && y >= 0
                    && (y as usize) < a.height_cells
                    && next.is_some_and(|n| (y as usize) < n.height_cells && n.entries.contains(&(0, y)));
                if !ok {
                    return Err(GenError::BadPassage {
                        area: i,
                        cell: (x, y),
                    });
                }
                passages.push(Passage {
                    exit_area: i,
                    exit_cell: (offsets[i] + x, y),
                    entry_area: i + 1,
                    entry_cell: (offsets[i + 1], y),
                });
            }
            for &(x, y) in &a.entries {
                let ok = x == 0
                    && i > 0
                    && y >= 0
                    && (y as usize) < a.height_cells
                    && self.areas[i - 1]
                        .exits
                        .contains(&(self.areas[i - 1].width_cells as i32 - 1, y));
                if !ok {
                    return Err(GenError::BadPassage {
                        area: i,
                        cell: (x, y),
                    });
                }
            }
        }
        Ok(passages)
    }

    fn column_offsets(&self) -> Vec<i32> {
        let mut off = 0;
        self.areas
            .iter()
            .map(|a| {
                let o = off;
                off += a.width_cells as i32;
                o
            })
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("environment spec has no areas")]
    NoAreas,
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("area {area}: entry/exit {cell:?} is not on a shared boundary")]
    BadPassage { area: usize, cell: (i32, i32) },
    #[error("area {area}: placement failed after {attempts} attempts")]
    InfeasiblePlacement { area: usize, attempts: u32 },
}

/// Item assigned to a cell during partitioning.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Obstacle,
    Ball(Color),
    Zone(Color),
    Agent,
}

fn empty_layout(spec: &EnvironmentSpec, passages: &[Passage]) -> GridLayout {
    let offsets = spec.column_offsets();
    let mut layout = GridLayout {
        cell_size: spec.cell_size,
        areas: spec
            .areas
            .iter()
            .zip(&offsets)
            .map(|(a, &o)| AreaGrid::new(o, a.width_cells, a.height_cells))
            .collect(),
        passages: passages.to_vec(),
    };
    for p in passages {
        layout.set_kind(p.exit_cell, CellKind::Exit);
        layout.set_kind(p.entry_cell, CellKind::Entry);
    }
    layout
}

/// Draws cells for one area's items. Returns global cells with their slot.
fn assign_area(layout: &mut GridLayout, area_idx: usize, spec: &AreaSpec, rng: &mut SimRng) -> Vec<(Cell, Slot)> {
    let grid = &layout.areas[area_idx];
    let mut candidates: Vec<Cell> = grid
        .local_cells()
        .filter(|&(x, y)| grid.get_local(x, y) == Some(CellKind::Free))
        .map(|(x, y)| grid.to_global(x, y))
        .collect();
    rng.shuffle(&mut candidates);

    let mut slots = Vec::new();
    slots.extend(std::iter::repeat_n(Slot::Obstacle, spec.obstacle_count as usize));
    for (&c, &n) in &spec.balls {
        slots.extend(std::iter::repeat_n(Slot::Ball(c), n as usize));
    }
    for (&c, &n) in &spec.zones {
        slots.extend(std::iter::repeat_n(Slot::Zone(c), n as usize));
    }
    slots.extend(std::iter::repeat_n(Slot::Agent, spec.agents as usize));

    let assigned: Vec<(Cell, Slot)> = candidates.into_iter().zip(slots).collect();
    for &(cell, slot) in &assigned {
        let kind = match slot {
            Slot::Obstacle => CellKind::Obstacle,
            Slot::Ball(_) => CellKind::Ball,
            Slot::Zone(_) => CellKind::Zone,
            Slot::Agent => CellKind::Agent,
        };
        layout.set_kind(cell, kind);
    }
    assigned
}

/// Cell-level occupancy plan for `spec`, one draw per area.
pub fn partition_grid(spec: &EnvironmentSpec) -> Result<GridLayout, GenError> {
    spec.validate()?;
    let passages = spec.passages()?;
    let mut layout = empty_layout(spec, &passages);
    let mut rng = SimRng::seed_from(spec.seed);
    for (i, a) in spec.areas.iter().enumerate() {
        assign_area(&mut layout, i, a, &mut rng);
    }
    Ok(layout)
}

fn cell_square(layout: &GridLayout, cell: Cell) -> Shape {
    let cs = layout.cell_size;
    Shape::square(Vec2::new(cell.0 as f64 * cs, cell.1 as f64 * cs), cs)
}

/// Marks every cell of `area_idx` within [`BLOCK_MARGIN`] of an obstacle as
/// blocked. Non-free cells that would be blocked are reported instead.
fn mark_blocked(layout: &mut GridLayout, area_idx: usize, obstacles: &[Shape]) -> Result<(), Cell> {
    let grid = layout.areas[area_idx].clone();
    for (x, y) in grid.local_cells() {
        let cell = grid.to_global(x, y);
        let square = cell_square(layout, cell);
        let hit = obstacles
            .iter()
            .any(|o| o.distance_to_shape(&square) < BLOCK_MARGIN);
        if hit {
            match grid.get_local(x, y) {
                Some(CellKind::Free) | Some(CellKind::Obstacle) => layout.set_kind(cell, CellKind::Obstacle),
                _ => return Err(cell),
            }
        }
    }
    Ok(())
}

fn shape_inside(shape: &Shape, area: &Area) -> bool {
    area.bounds().contains_box(&shape.aabb())
}

/// Uniform jitter around a cell center, clamped so a footprint of radius
/// `keep` stays inside the area.
fn jittered_center(layout: &GridLayout, cell: Cell, area: &Area, keep: f64, rng: &mut SimRng) -> Vec2 {
    let j = JITTER_FRACTION * layout.cell_size;
    let c = layout.cell_center(cell) + Vec2::new(rng.range(-j, j), rng.range(-j, j));
    let b = area.bounds();
    Vec2::new(
        c.x.clamp(b.min.x + keep, b.max.x - keep),
        c.y.clamp(b.min.y + keep, b.max.y - keep),
    )
}

fn sample_obstacle(center: Vec2, rng: &mut SimRng) -> Shape {
    let (lo, hi) = OBSTACLE_SIZE_RANGE;
    if rng.coin() {
        Shape::circle(center, rng.range(lo, hi) * 0.5)
    } else {
        let w = rng.range(lo, hi);
        let h = rng.range(lo, hi);
        let rot = rng.range(0.0, std::f64::consts::PI);
        Shape::rect(center, Vec2::new(w * 0.5, h * 0.5), rot)
    }
}

#[derive(Default)]
struct AreaObjects {
    obstacles: Vec<Shape>,
    zones: Vec<(Color, Vec2)>,
    balls: Vec<(Color, Vec2)>,
    agents: Vec<Pose>,
}

impl AreaObjects {
    fn footprints(&self, robot_radius: f64) -> impl Iterator<Item = Shape> + '_ {
        self.obstacles
            .iter()
            .copied()
            .chain(self.zones.iter().map(|&(_, c)| Shape::circle(c, ZONE_RADIUS)))
            .chain(self.balls.iter().map(|&(_, c)| Shape::circle(c, BALL_RADIUS)))
            .chain(self.agents.iter().map(move |p| Shape::circle(p.position(), robot_radius)))
    }

    fn clear_of_all(&self, shape: &Shape, robot_radius: f64) -> bool {
        self.footprints(robot_radius)
            .all(|f| f.distance_to_shape(shape) > PLACEMENT_GAP)
    }
}

fn instantiate_area(
    layout: &mut GridLayout,
    area: &Area,
    assigned: &[(Cell, Slot)],
    robot: &RobotParams,
    rng: &mut SimRng,
) -> Option<AreaObjects> {
    let mut objs = AreaObjects::default();
    let reserved: Vec<Shape> = layout
        .areas
        .iter()
        .flat_map(|g| {
            g.local_cells()
                .filter(|&(x, y)| !matches!(g.get_local(x, y), Some(CellKind::Free | CellKind::Obstacle)))
                .map(|(x, y)| g.to_global(x, y))
                .collect::<Vec<_>>()
        })
        .map(|c| cell_square(layout, c))
        .collect();

    for &(cell, _) in assigned.iter().filter(|(_, s)| *s == Slot::Obstacle) {
        let placed = (0..SHAPE_TRIES).find_map(|_| {
            let center = jittered_center(layout, cell, area, 0.0, rng);
            let shape = sample_obstacle(center, rng);
            let ok = shape_inside(&shape, area)
                && reserved.iter().all(|r| r.distance_to_shape(&shape) >= BLOCK_MARGIN)
                && objs
                    .obstacles
                    .iter()
                    .all(|o| o.distance_to_shape(&shape) > PLACEMENT_GAP);
            ok.then_some(shape)
        })?;
        objs.obstacles.push(placed);
    }
    mark_blocked(layout, area.index, &objs.obstacles).ok()?;

    let edge_keep = robot.radius + 0.05;
    for &(cell, slot) in assigned {
        let (keep, radius) = match slot {
            Slot::Obstacle => continue,
            Slot::Zone(_) => (ZONE_RADIUS, ZONE_RADIUS),
            Slot::Ball(_) => (edge_keep.max(BALL_RADIUS), BALL_RADIUS),
            Slot::Agent => (edge_keep, robot.radius),
        };
        let center = (0..SHAPE_TRIES).find_map(|_| {
            let c = jittered_center(layout, cell, area, keep, rng);
            objs.clear_of_all(&Shape::circle(c, radius), robot.radius).then_some(c)
        })?;
        match slot {
            Slot::Zone(color) => objs.zones.push((color, center)),
            Slot::Ball(color) => objs.balls.push((color, center)),
            Slot::Agent => {
                let theta = rng.range(-std::f64::consts::PI, std::f64::consts::PI);
                objs.agents.push(Pose::new(center.x, center.y, theta));
            }
            Slot::Obstacle => unreachable!(),
        }
    }

    let connected = layout
        .check_connectivity()
        .witnesses
        .iter()
        .filter(|w| w.area == area.index)
        .all(|w| w.path.is_some());
    connected.then_some(objs)
}

fn reset_area(layout: &mut GridLayout, area_idx: usize) {
    let grid = &mut layout.areas[area_idx];
    for k in grid.cells.iter_mut() {
        if !k.is_passage() {
            *k = CellKind::Free;
        }
    }
}

fn build_areas(spec: &EnvironmentSpec, layout: &GridLayout) -> Vec<Area> {
    spec.areas
        .iter()
        .enumerate()
        .map(|(i, a)| Area {
            index: i,
            origin: Vec2::new(layout.areas[i].offset_x as f64 * spec.cell_size, 0.0),
            width_cells: a.width_cells,
            height_cells: a.height_cells,
            cell_size: spec.cell_size,
            inventory: a.inventory(),
            obstacle_count: a.obstacle_count,
        })
        .collect()
}

/// Boundary walls with one-cell gaps at passages. A shared wall between
/// neighbors is emitted once.
pub fn build_walls(layout: &GridLayout) -> Vec<Segment> {
    let cs = layout.cell_size;
    let mut walls = Vec::new();
    for (i, g) in layout.areas.iter().enumerate() {
        let x0 = g.offset_x as f64 * cs;
        let x1 = (g.offset_x + g.width as i32) as f64 * cs;
        let h = g.height as f64 * cs;
        walls.push(Segment::new(Vec2::new(x0, 0.0), Vec2::new(x1, 0.0)));
        walls.push(Segment::new(Vec2::new(x0, h), Vec2::new(x1, h)));
        // West side: only the part not already covered by the previous
        // area's east wall.
        let shared_below = if i > 0 { layout.areas[i - 1].height as f64 * cs } else { 0.0 };
        if shared_below < h {
            walls.push(Segment::new(Vec2::new(x0, shared_below), Vec2::new(x0, h)));
        }
        // East side, split around passage rows.
        let mut gaps: Vec<i32> = layout
            .passages
            .iter()
            .filter(|p| p.exit_area == i)
            .map(|p| p.exit_cell.1)
            .collect();
        gaps.sort_unstable();
        let mut y = 0.0;
        for row in gaps {
            let gap_lo = row as f64 * cs;
            if gap_lo > y {
                walls.push(Segment::new(Vec2::new(x1, y), Vec2::new(x1, gap_lo)));
            }
            y = gap_lo + cs;
        }
        if y < h {
            walls.push(Segment::new(Vec2::new(x1, y), Vec2::new(x1, h)));
        }
    }
    walls
}

/// Builds a world from `spec`. Same spec, same world.
pub fn generate_environment(spec: &EnvironmentSpec) -> Result<WorldState, GenError> {
    spec.validate()?;
    let passages = spec.passages()?;
    let mut layout = empty_layout(spec, &passages);
    let areas = build_areas(spec, &layout);
    let robot = RobotParams::default();
    let mut rng = SimRng::seed_from(spec.seed);

    let mut obstacles = Vec::new();
    let mut balls = Vec::new();
    let mut zones = Vec::new();
    let mut agents = Vec::new();
    for (i, a) in spec.areas.iter().enumerate() {
        let mut placed = None;
        for _ in 0..spec.max_attempts {
            let assigned = assign_area(&mut layout, i, a, &mut rng);
            match instantiate_area(&mut layout, &areas[i], &assigned, &robot, &mut rng) {
                Some(objs) => {
                    placed = Some(objs);
                    break;
                }
                None => reset_area(&mut layout, i),
            }
        }
        let objs = placed.ok_or(GenError::InfeasiblePlacement {
            area: i,
            attempts: spec.max_attempts,
        })?;
        obstacles.extend(objs.obstacles.into_iter().map(|shape| Obstacle { area: i, shape }));
        zones.extend(objs.zones.into_iter().map(|(color, center)| Zone {
            color,
            area: i,
            center,
            radius: ZONE_RADIUS,
        }));
        balls.extend(objs.balls.into_iter().map(|(color, position)| Ball {
            color,
            area: i,
            position,
            carried_by: None,
        }));
        for pose in objs.agents {
            agents.push(Agent {
                id: agents.len(),
                area: i,
                pose,
                carrying: None,
                twist: Twist::ZERO,
            });
        }
    }

    let walls = build_walls(&layout);
    Ok(WorldState {
        seed: spec.seed,
        areas,
        obstacles,
        balls,
        zones,
        agents,
        walls,
        layout,
        robot,
        clock: SimClock::default(),
    })
}

/// Hand-assembled worlds for tests and fixtures. Cell kinds are derived
/// from object positions with the same blocking rule generation uses, but
/// connectivity is not enforced.
#[derive(Debug, Clone)]
pub struct WorldBuilder {
    spec: EnvironmentSpec,
    obstacles: Vec<Shape>,
    balls: Vec<(Color, Vec2)>,
    zones: Vec<(Color, Vec2)>,
    agents: Vec<Pose>,
}

impl WorldBuilder {
    /// Areas with their entries/exits; item counts in the specs are ignored.
    pub fn new(areas: Vec<AreaSpec>) -> Self {
        Self {
            spec: EnvironmentSpec::new(0, areas),
            obstacles: Vec::new(),
            balls: Vec::new(),
            zones: Vec::new(),
            agents: Vec::new(),
        }
    }

    pub fn obstacle(mut self, shape: Shape) -> Self {
        self.obstacles.push(shape);
        self
    }

    pub fn ball(mut self, color: Color, at: Vec2) -> Self {
        self.balls.push((color, at));
        self
    }

    pub fn zone(mut self, color: Color, at: Vec2) -> Self {
        self.zones.push((color, at));
        self
    }

    pub fn agent(mut self, pose: Pose) -> Self {
        self.agents.push(pose);
        self
    }

    pub fn build(self) -> Result<WorldState, GenError> {
        let passages = self.spec.passages()?;
        let mut layout = empty_layout(&self.spec, &passages);
        let mut areas = build_areas(&self.spec, &layout);
        let area_at = |layout: &GridLayout, p: Vec2| layout.cell_of(p).and_then(|c| layout.area_of(c)).unwrap_or(0);

        for (i, a) in areas.iter_mut().enumerate() {
            let mut inv: Vec<InventoryItem> = Vec::new();
            let items = self
                .balls
                .iter()
                .map(|&(c, p)| (c, p, ItemKind::Ball))
                .chain(self.zones.iter().map(|&(c, p)| (c, p, ItemKind::Zone)));
            for (color, p, kind) in items {
                if area_at(&layout, p) != i {
                    continue;
                }
                match inv.iter_mut().find(|it| it.color == color && it.kind == kind) {
                    Some(it) => it.count += 1,
                    None => inv.push(InventoryItem { count: 1, color, kind }),
                }
            }
            a.inventory = inv;
            a.obstacle_count = self.obstacles.iter().filter(|o| area_at(&layout, o.center()) == i).count() as u32;
        }

        let marks = self
            .balls
            .iter()
            .map(|&(_, p)| (p, CellKind::Ball))
            .chain(self.zones.iter().map(|&(_, p)| (p, CellKind::Zone)))
            .chain(self.agents.iter().map(|p| (p.position(), CellKind::Agent)));
        for (p, kind) in marks {
            if let Some(c) = layout.cell_of(p) {
                layout.set_kind(c, kind);
            }
        }
        for i in 0..layout.areas.len() {
            let mine: Vec<Shape> = self
                .obstacles
                .iter()
                .filter(|o| area_at(&layout, o.center()) == i)
                .copied()
                .collect();
            // Reserved cells hit by an obstacle stay reserved here.
            let grid = layout.areas[i].clone();
            for (x, y) in grid.local_cells() {
                let cell = grid.to_global(x, y);
                let sq = cell_square(&layout, cell);
                if grid.get_local(x, y) == Some(CellKind::Free)
                    && mine.iter().any(|o| o.distance_to_shape(&sq) < BLOCK_MARGIN)
                {
                    layout.set_kind(cell, CellKind::Obstacle);
                }
            }
        }

        let walls = build_walls(&layout);
        Ok(WorldState {
            seed: 0,
            obstacles: self
                .obstacles
                .iter()
                .map(|&shape| Obstacle {
                    area: area_at(&layout, shape.center()),
                    shape,
                })
                .collect(),
            balls: self
                .balls
                .iter()
                .map(|&(color, position)| Ball {
                    color,
                    area: area_at(&layout, position),
                    position,
                    carried_by: None,
                })
                .collect(),
            zones: self
                .zones
                .iter()
                .map(|&(color, center)| Zone {
                    color,
                    area: area_at(&layout, center),
                    center,
                    radius: ZONE_RADIUS,
                })
                .collect(),
            agents: self
                .agents
                .iter()
                .enumerate()
                .map(|(id, &pose)| Agent {
                    id,
                    area: area_at(&layout, pose.position()),
                    pose,
                    carrying: None,
                    twist: Twist::ZERO,
                })
                .collect(),
            areas,
            walls,
            layout,
            robot: RobotParams::default(),
            clock: SimClock::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fetch_and_deliver_counts() {
        let w = generate_environment(&EnvironmentSpec::fetch_and_deliver(7)).unwrap();
        assert_eq!(w.obstacles.len(), 5);
        assert_eq!(w.balls.len(), 1);
        assert_eq!(w.balls[0].color, Color::Orange);
        let zone_colors: Vec<_> = w.zones.iter().map(|z| z.color).collect();
        assert_eq!(zone_colors, vec![Color::Red, Color::Green]);
        assert_eq!(w.agents.len(), 1);
        assert!(w.layout.check_connectivity().connected);
    }

    #[test]
    fn same_seed_same_world() {
        let spec = EnvironmentSpec::fetch_and_deliver(11);
        let a = generate_environment(&spec).unwrap();
        let b = generate_environment(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_environment(&EnvironmentSpec::fetch_and_deliver(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_spec_has_only_agent_and_walls() {
        let spec = EnvironmentSpec::new(1, vec![AreaSpec::new(4, 4).with_agents(1)]);
        let w = generate_environment(&spec).unwrap();
        assert!(w.obstacles.is_empty() && w.balls.is_empty() && w.zones.is_empty());
        assert_eq!(w.agents.len(), 1);
        assert_eq!(w.walls.len(), 4);
    }

    #[test]
    fn zero_areas_rejected() {
        assert_eq!(
            generate_environment(&EnvironmentSpec::new(1, vec![])),
            Err(GenError::NoAreas)
        );
    }

    #[test]
    fn overfull_area_rejected() {
        let spec = EnvironmentSpec::new(1, vec![AreaSpec::new(3, 3).with_obstacles(5)]);
        assert!(matches!(spec.validate(), Err(GenError::InvalidSpec(_))));
        let spec = EnvironmentSpec::new(1, vec![AreaSpec::new(2, 5)]);
        assert!(matches!(spec.validate(), Err(GenError::InvalidSpec(_))));
    }

    #[test]
    fn impossible_placement_reports_infeasible() {
        // A 3x3 room with a robot leaves no room for a 1.5 m obstacle next to
        // four reserved cells, so every attempt fails.
        let spec = EnvironmentSpec {
            max_attempts: 3,
            ..EnvironmentSpec::new(
                5,
                vec![AreaSpec::new(3, 3)
                    .with_obstacles(1)
                    .with_ball(Color::Red, 1)
                    .with_zone(Color::Blue, 1)
                    .with_agents(1)],
            )
        };
        match generate_environment(&spec) {
            Err(GenError::InfeasiblePlacement { area: 0, attempts: 3 }) | Ok(_) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn two_rooms(with_passage: bool) -> EnvironmentSpec {
        let mut a = AreaSpec::new(5, 5);
        let mut b = AreaSpec::new(5, 5);
        if with_passage {
            a.exits.push((4, 2));
            b.entries.push((0, 2));
        }
        EnvironmentSpec::new(3, vec![a, b])
    }

    #[test]
    fn side_by_side_areas_share_one_passage() {
        let layout = partition_grid(&two_rooms(true)).unwrap();
        let passage_cells: Vec<_> = layout
            .areas
            .iter()
            .flat_map(|g| g.cells.iter())
            .filter(|k| k.is_passage())
            .collect();
        assert_eq!(passage_cells.len(), 2);
        assert_eq!(layout.areas[0].get_local(4, 2), Some(CellKind::Exit));
        assert_eq!(layout.areas[1].get_local(0, 2), Some(CellKind::Entry));
        assert_eq!(layout.passages.len(), 1);
        let w = generate_environment(&two_rooms(true)).unwrap();
        // The shared wall has a one-cell gap at row 2.
        let shared: Vec<_> = w.walls.iter().filter(|s| s.a.x == 5.0 && s.b.x == 5.0).collect();
        let covered: f64 = shared.iter().map(|s| s.length()).sum();
        assert!((covered - 4.0).abs() < 1e-12);
    }

    #[test]
    fn unmatched_exit_rejected() {
        let mut spec = two_rooms(false);
        spec.areas[0].exits.push((4, 1));
        assert!(matches!(partition_grid(&spec), Err(GenError::BadPassage { area: 0, .. })));
        let mut spec = two_rooms(false);
        spec.areas[0].exits.push((2, 2));
        spec.areas[1].entries.push((0, 2));
        assert!(matches!(partition_grid(&spec), Err(GenError::BadPassage { .. })));
    }

    #[test]
    fn empty_partition_is_all_free() {
        let layout = partition_grid(&EnvironmentSpec::new(9, vec![AreaSpec::new(6, 4)])).unwrap();
        assert!(layout.areas[0].cells.iter().all(|&k| k == CellKind::Free));
    }

    #[test]
    fn partition_is_deterministic() {
        let spec = EnvironmentSpec::fetch_and_deliver(21);
        assert_eq!(partition_grid(&spec).unwrap(), partition_grid(&spec).unwrap());
    }

    #[test]
    fn spec_keeps_declaration_order() {
        let text = r#"{"seed": 7, "areas": [{"width_cells": 10, "height_cells": 10,
            "obstacle_count": 5, "agents": 1, "balls": {"Orange": 1},
            "zones": {"Red": 1, "Green": 1}}]}"#;
        let spec: EnvironmentSpec = serde_json::from_str(text).unwrap();
        let zones: Vec<_> = spec.areas[0].zones.keys().copied().collect();
        assert_eq!(zones, vec![Color::Red, Color::Green]);
        assert_eq!(spec, EnvironmentSpec::fetch_and_deliver(7));
        let back: EnvironmentSpec =
            serde_json::from_value(serde_json::to_value(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}

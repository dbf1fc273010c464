//! Cell-level layout of a world and the connectivity guard used by
//! generation and path planning.
//!
//! Areas are laid side by side along +x. Cell coordinates are global
//! `(column, row)` pairs; an area owns the columns
//! `offset_x .. offset_x + width` and rows `0 .. height`. Moving between
//! two areas is only possible through a passage (an exit cell of one area
//! facing an entry cell of the next).

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::geometry::Vec2;

pub type Cell = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Free,
    Obstacle,
    Ball,
    Zone,
    Agent,
    Entry,
    Exit,
}

impl CellKind {
    pub fn symbol(self) -> char {
        match self {
            CellKind::Free => '.',
            CellKind::Obstacle => '#',
            CellKind::Ball => 'b',
            CellKind::Zone => 'z',
            CellKind::Agent => 'a',
            CellKind::Entry => '<',
            CellKind::Exit => '>',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        Some(match c {
            '.' => CellKind::Free,
            '#' => CellKind::Obstacle,
            'b' => CellKind::Ball,
            'z' => CellKind::Zone,
            'a' => CellKind::Agent,
            '<' => CellKind::Entry,
            '>' => CellKind::Exit,
            _ => return None,
        })
    }

    pub fn is_passage(self) -> bool {
        matches!(self, CellKind::Entry | CellKind::Exit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaGrid {
    /// Global column of this area's local x = 0.
    pub offset_x: i32,
    pub width: usize,
    pub height: usize,
    /// Row-major, `cells[y * width + x]`.
    pub cells: Vec<CellKind>,
}

#[derive(Serialize, Deserialize)]
struct AreaGridRepr {
    offset_x: i32,
    width: usize,
    height: usize,
    /// One string per row, row 0 first.
    rows: Vec<String>,
}

impl Serialize for AreaGrid {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let rows = self
            .cells
            .chunks(self.width.max(1))
            .map(|r| r.iter().map(|k| k.symbol()).collect())
            .collect();
        AreaGridRepr {
            offset_x: self.offset_x,
            width: self.width,
            height: self.height,
            rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AreaGrid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = AreaGridRepr::deserialize(d)?;
        if repr.rows.len() != repr.height {
            return Err(D::Error::custom("row count does not match height"));
        }
        let mut cells = Vec::with_capacity(repr.width * repr.height);
        for row in &repr.rows {
            if row.chars().count() != repr.width {
                return Err(D::Error::custom("row length does not match width"));
            }
            for c in row.chars() {
                cells.push(
                    CellKind::from_symbol(c)
                        .ok_or_else(|| D::Error::custom(format!("unknown cell symbol {c:?}")))?,
                );
            }
        }
        Ok(AreaGrid {
            offset_x: repr.offset_x,
            width: repr.width,
            height: repr.height,
            cells,
        })
    }
}

impl AreaGrid {
    pub fn new(offset_x: i32, width: usize, height: usize) -> Self {
        Self {
            offset_x,
            width,
            height,
            cells: vec![CellKind::Free; width * height],
        }
    }

    pub fn contains_local(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn get_local(&self, x: i32, y: i32) -> Option<CellKind> {
        self.contains_local(x, y)
            .then(|| self.cells[y as usize * self.width + x as usize])
    }

    pub fn set_local(&mut self, x: i32, y: i32, kind: CellKind) {
        assert!(self.contains_local(x, y), "cell ({x}, {y}) outside area");
        self.cells[y as usize * self.width + x as usize] = kind;
    }

    pub fn to_global(&self, x: i32, y: i32) -> Cell {
        (x + self.offset_x, y)
    }

    /// Local cells in row-major order.
    pub fn local_cells(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        (0..self.height as i32).flat_map(move |y| (0..self.width as i32).map(move |x| (x, y)))
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.cells.iter().filter(|&&k| k == kind).count()
    }
}

/// An exit cell of `exit_area` facing an entry cell of `entry_area`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub exit_area: usize,
    pub exit_cell: Cell,
    pub entry_area: usize,
    pub entry_cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub cell_size: f64,
    pub areas: Vec<AreaGrid>,
    /// Global cell coordinates on both sides of every passage.
    pub passages: Vec<Passage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessPath {
    pub area: usize,
    pub from: Cell,
    pub to: Cell,
    /// `None` when `to` is unreachable from `from`.
    pub path: Option<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub connected: bool,
    pub witnesses: Vec<WitnessPath>,
}

impl GridLayout {
    pub fn area_of(&self, cell: Cell) -> Option<usize> {
        self.areas.iter().position(|a| {
            let lx = cell.0 - a.offset_x;
            a.contains_local(lx, cell.1)
        })
    }

    pub fn kind(&self, cell: Cell) -> Option<CellKind> {
        let idx = self.area_of(cell)?;
        let a = &self.areas[idx];
        a.get_local(cell.0 - a.offset_x, cell.1)
    }

    pub fn set_kind(&mut self, cell: Cell, kind: CellKind) {
        let idx = self.area_of(cell).expect("cell outside every area");
        let a = &mut self.areas[idx];
        let off = a.offset_x;
        a.set_local(cell.0 - off, cell.1, kind);
    }

    /// In some area and not blocked.
    pub fn is_free(&self, cell: Cell) -> bool {
        matches!(self.kind(cell), Some(k) if k != CellKind::Obstacle)
    }

    pub fn cell_center(&self, cell: Cell) -> Vec2 {
        Vec2::new(
            (cell.0 as f64 + 0.5) * self.cell_size,
            (cell.1 as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing `p`, if `p` lies in some area.
    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        if !p.is_finite() {
            return None;
        }
        let cell = (
            (p.x / self.cell_size).floor() as i32,
            (p.y / self.cell_size).floor() as i32,
        );
        self.area_of(cell).map(|_| cell)
    }

    fn crosses_passage(&self, a: Cell, b: Cell) -> bool {
        self.passages.iter().any(|p| {
            (p.exit_cell == a && p.entry_cell == b) || (p.exit_cell == b && p.entry_cell == a)
        })
    }

    /// Free 4-neighbors in E, N, W, S order. Crossing between areas is
    /// only allowed through a passage; `within` restricts to one area.
    pub fn neighbors(&self, cell: Cell, within: Option<usize>) -> Vec<Cell> {
        let Some(here) = self.area_of(cell) else {
            return Vec::new();
        };
        [(1, 0), (0, 1), (-1, 0), (0, -1)]
            .into_iter()
            .map(|(dx, dy)| (cell.0 + dx, cell.1 + dy))
            .filter(|&n| {
                let Some(there) = self.area_of(n) else {
                    return false;
                };
                if !self.is_free(n) {
                    return false;
                }
                if let Some(w) = within {
                    if there != w {
                        return false;
                    }
                }
                there == here || self.crosses_passage(cell, n)
            })
            .collect()
    }

    /// Breadth-first parents from `start` over free cells.
    pub fn bfs(&self, start: Cell, within: Option<usize>) -> BTreeMap<Cell, Option<Cell>> {
        let mut parents = BTreeMap::new();
        if !self.is_free(start) {
            return parents;
        }
        parents.insert(start, None);
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            for n in self.neighbors(c, within) {
                if let std::collections::btree_map::Entry::Vacant(e) = parents.entry(n) {
                    e.insert(Some(c));
                    queue.push_back(n);
                }
            }
        }
        parents
    }

    /// Global cells of the given kind, area by area, row-major.
    pub fn cells_of_kind(&self, kind: CellKind) -> Vec<(usize, Cell)> {
        let mut out = Vec::new();
        for (i, a) in self.areas.iter().enumerate() {
            for (x, y) in a.local_cells() {
                if a.get_local(x, y) == Some(kind) {
                    out.push((i, a.to_global(x, y)));
                }
            }
        }
        out
    }

    /// Every agent cell must reach every ball, zone and passage cell of its
    /// own area through free cells of that area.
    pub fn check_connectivity(&self) -> ConnectivityReport {
        let mut witnesses = Vec::new();
        let mut connected = true;
        for (area_idx, area) in self.areas.iter().enumerate() {
            let cells_of = |pred: &dyn Fn(CellKind) -> bool| -> Vec<Cell> {
                area.local_cells()
                    .filter(|&(x, y)| area.get_local(x, y).is_some_and(pred))
                    .map(|(x, y)| area.to_global(x, y))
                    .collect()
            };
            let agents = cells_of(&|k| k == CellKind::Agent);
            let targets = cells_of(&|k| matches!(k, CellKind::Ball | CellKind::Zone) || k.is_passage());
            for &from in &agents {
                let parents = self.bfs(from, Some(area_idx));
                for &to in &targets {
                    let path = reconstruct(&parents, to);
                    connected &= path.is_some();
                    witnesses.push(WitnessPath {
                        area: area_idx,
                        from,
                        to,
                        path,
                    });
                }
            }
        }
        ConnectivityReport {
            connected,
            witnesses,
        }
    }
}

pub(crate) fn reconstruct(parents: &BTreeMap<Cell, Option<Cell>>, to: Cell) -> Option<Vec<Cell>> {
    let mut cur = *parents.get(&to)?;
    let mut path = vec![to];
    while let Some(c) = cur {
        path.push(c);
        cur = parents[&c];
    }
    path.reverse();
    Some(path)
}

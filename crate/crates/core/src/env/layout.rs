//! Kitchen layouts and their plain-text grid format.
//!
//! A layout file is seven rows of seven characters. Lines starting with `;`
//! and blank lines are ignored. Legend:
//!
//! | char | cell                                  |
//! |------|---------------------------------------|
//! | `.`  | floor                                 |
//! | `#`  | counter                               |
//! | `K`  | cutting board 1                       |
//! | `k`  | cutting board 2                       |
//! | `*`  | delivery cell                         |
//! | `P`  | counter holding plate 1 at start      |
//! | `p`  | counter holding plate 2 at start      |
//! | `T`  | counter holding the tomato at start   |
//! | `L`  | counter holding the lettuce at start  |
//! | `O`  | counter holding the onion at start    |
//! | `M`  | center counter (layout B only)        |
//! | `1`..`3` | floor cell where that agent starts |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EnvError, Item, Pos, GRID_SIZE, NUM_AGENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayoutId {
    A,
    B,
    C,
}

impl LayoutId {
    pub const ALL: [LayoutId; 3] = [LayoutId::A, LayoutId::B, LayoutId::C];

    pub fn as_str(self) -> &'static str {
        match self {
            LayoutId::A => "A",
            LayoutId::B => "B",
            LayoutId::C => "C",
        }
    }
}

impl fmt::Display for LayoutId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(LayoutId::A),
            "B" => Ok(LayoutId::B),
            "C" => Ok(LayoutId::C),
            other => Err(EnvError::UnknownLayout(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Floor,
    Counter,
    CutBoard1,
    CutBoard2,
    Delivery,
    PlateSpawn1,
    PlateSpawn2,
    TomatoSpawn,
    LettuceSpawn,
    OnionSpawn,
    CenterCounter,
}

impl CellKind {
    pub fn is_floor(self) -> bool {
        self == CellKind::Floor
    }

    /// Cells that can hold an item and are not cutting boards or the delivery cell.
    pub fn is_counter(self) -> bool {
        matches!(
            self,
            CellKind::Counter
                | CellKind::PlateSpawn1
                | CellKind::PlateSpawn2
                | CellKind::TomatoSpawn
                | CellKind::LettuceSpawn
                | CellKind::OnionSpawn
                | CellKind::CenterCounter
        )
    }

    pub fn board_index(self) -> Option<usize> {
        match self {
            CellKind::CutBoard1 => Some(0),
            CellKind::CutBoard2 => Some(1),
            _ => None,
        }
    }

    fn from_char(c: char) -> Option<CellKind> {
        Some(match c {
            '.' | '1' | '2' | '3' => CellKind::Floor,
            '#' => CellKind::Counter,
            'K' => CellKind::CutBoard1,
            'k' => CellKind::CutBoard2,
            '*' => CellKind::Delivery,
            'P' => CellKind::PlateSpawn1,
            'p' => CellKind::PlateSpawn2,
            'T' => CellKind::TomatoSpawn,
            'L' => CellKind::LettuceSpawn,
            'O' => CellKind::OnionSpawn,
            'M' => CellKind::CenterCounter,
            _ => return None,
        })
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Floor => '.',
            CellKind::Counter => '#',
            CellKind::CutBoard1 => 'K',
            CellKind::CutBoard2 => 'k',
            CellKind::Delivery => '*',
            CellKind::PlateSpawn1 => 'P',
            CellKind::PlateSpawn2 => 'p',
            CellKind::TomatoSpawn => 'T',
            CellKind::LettuceSpawn => 'L',
            CellKind::OnionSpawn => 'O',
            CellKind::CenterCounter => 'M',
        }
    }
}

/// A validated 7×7 kitchen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub id: LayoutId,
    grid: [[CellKind; GRID_SIZE]; GRID_SIZE],
    agent_starts: [Pos; NUM_AGENTS],
    item_spawns: [Pos; Item::COUNT],
    boards: [Pos; 2],
    delivery: Pos,
    center: Option<Pos>,
}

const LAYOUT_A: &str = include_str!("../../layouts/a.txt");
const LAYOUT_B: &str = include_str!("../../layouts/b.txt");
const LAYOUT_C: &str = include_str!("../../layouts/c.txt");

impl Layout {
    /// One of the shipped layouts.
    pub fn builtin(id: LayoutId) -> Layout {
        let text = match id {
            LayoutId::A => LAYOUT_A,
            LayoutId::B => LAYOUT_B,
            LayoutId::C => LAYOUT_C,
        };
        Layout::parse(id, text).expect("shipped layout files are valid")
    }

    pub fn parse(id: LayoutId, text: &str) -> Result<Layout, EnvError> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty() && !l.starts_with(';'))
            .collect();
        if rows.len() != GRID_SIZE {
            return Err(EnvError::InvalidLayout(format!(
                "expected {GRID_SIZE} grid rows, found {}",
                rows.len()
            )));
        }

        let mut grid = [[CellKind::Counter; GRID_SIZE]; GRID_SIZE];
        let mut agents: [Option<Pos>; NUM_AGENTS] = [None; NUM_AGENTS];
        let mut spawns: [Option<Pos>; Item::COUNT] = [None; Item::COUNT];
        let mut boards: [Option<Pos>; 2] = [None; 2];
        let mut delivery = None;
        let mut center = None;

        let dup = |what: &str| EnvError::InvalidLayout(format!("duplicate {what}"));

        for (r, row) in rows.iter().enumerate() {
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != GRID_SIZE {
                return Err(EnvError::InvalidLayout(format!(
                    "row {r} has {} cells, expected {GRID_SIZE}",
                    chars.len()
                )));
            }
            for (c, ch) in chars.into_iter().enumerate() {
                let kind = CellKind::from_char(ch).ok_or_else(|| {
                    EnvError::InvalidLayout(format!("unknown cell character {ch:?} at ({r}, {c})"))
                })?;
                let pos = Pos::new(r as i8, c as i8);
                grid[r][c] = kind;
                if let Some(d) = ch.to_digit(10) {
                    let slot = &mut agents[d as usize - 1];
                    if slot.is_some() {
                        return Err(dup("agent start"));
                    }
                    *slot = Some(pos);
                }
                let spawn_item = match kind {
                    CellKind::TomatoSpawn => Some(Item::Tomato),
                    CellKind::LettuceSpawn => Some(Item::Lettuce),
                    CellKind::OnionSpawn => Some(Item::Onion),
                    CellKind::PlateSpawn1 => Some(Item::Plate1),
                    CellKind::PlateSpawn2 => Some(Item::Plate2),
                    _ => None,
                };
                if let Some(item) = spawn_item {
                    if spawns[item.index()].replace(pos).is_some() {
                        return Err(dup(item.name()));
                    }
                }
                if let Some(b) = kind.board_index() {
                    if boards[b].replace(pos).is_some() {
                        return Err(dup("cutting board"));
                    }
                }
                if kind == CellKind::Delivery && delivery.replace(pos).is_some() {
                    return Err(dup("delivery cell"));
                }
                if kind == CellKind::CenterCounter && center.replace(pos).is_some() {
                    return Err(dup("center counter"));
                }
            }
        }

        let missing = |what: &str| EnvError::InvalidLayout(format!("missing {what}"));
        let agent_starts = [
            agents[0].ok_or_else(|| missing("agent 1 start"))?,
            agents[1].ok_or_else(|| missing("agent 2 start"))?,
            agents[2].ok_or_else(|| missing("agent 3 start"))?,
        ];
        let mut item_spawns = [Pos::new(0, 0); Item::COUNT];
        for item in Item::ALL {
            item_spawns[item.index()] = spawns[item.index()].ok_or_else(|| missing(item.name()))?;
        }
        let boards = [
            boards[0].ok_or_else(|| missing("cutting board 1"))?,
            boards[1].ok_or_else(|| missing("cutting board 2"))?,
        ];
        let delivery = delivery.ok_or_else(|| missing("delivery cell"))?;
        match (id, center) {
            (LayoutId::B, None) => return Err(missing("center counter")),
            (LayoutId::A | LayoutId::C, Some(_)) => {
                return Err(EnvError::InvalidLayout(
                    "center counter is only allowed in layout B".into(),
                ))
            }
            _ => {}
        }

        let layout = Layout {
            id,
            grid,
            agent_starts,
            item_spawns,
            boards,
            delivery,
            center,
        };
        // Every interactive cell needs at least one floor neighbour.
        let mut interactive: Vec<Pos> = item_spawns.to_vec();
        interactive.extend(boards);
        interactive.push(delivery);
        interactive.extend(center);
        for p in interactive {
            if layout.floor_neighbors(p).next().is_none() {
                return Err(EnvError::InvalidLayout(format!(
                    "cell ({}, {}) has no adjacent floor",
                    p.row, p.col
                )));
            }
        }
        Ok(layout)
    }

    pub fn cell(&self, p: Pos) -> Option<CellKind> {
        if p.in_bounds() {
            Some(self.grid[p.row as usize][p.col as usize])
        } else {
            None
        }
    }

    pub fn is_floor(&self, p: Pos) -> bool {
        self.cell(p).is_some_and(CellKind::is_floor)
    }

    pub fn agent_start(&self, agent: usize) -> Pos {
        self.agent_starts[agent]
    }

    pub fn item_spawn(&self, item: Item) -> Pos {
        self.item_spawns[item.index()]
    }

    pub fn board(&self, idx: usize) -> Pos {
        self.boards[idx]
    }

    pub fn delivery(&self) -> Pos {
        self.delivery
    }

    pub fn center(&self) -> Option<Pos> {
        self.center
    }

    pub fn floor_neighbors(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        p.neighbors().filter(move |n| self.is_floor(*n))
    }

    /// Rows rendered back into the file format (agent markers omitted).
    pub fn rows(&self) -> Vec<String> {
        self.grid
            .iter()
            .map(|row| row.iter().map(|k| k.to_char()).collect())
            .collect()
    }

    /// Counter-like cells that may receive an item reset, for fallback placement.
    pub(crate) fn counter_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..GRID_SIZE as i8)
            .flat_map(|r| (0..GRID_SIZE as i8).map(move |c| Pos::new(r, c)))
            .filter(|p| {
                self.cell(*p).is_some_and(|k| k.is_counter() && k != CellKind::CenterCounter)
                    && self.floor_neighbors(*p).next().is_some()
            })
    }
}

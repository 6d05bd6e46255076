//! Deterministic macro-action kitchen gridworld for three cooperating agents.
//!
//! Agents chop vegetables on cutting boards, combine them on plates and
//! deliver the ordered salad. Every agent sees only a 5×5 window around
//! itself and remembers where it last saw everything else.

mod dynamics;
mod layout;
mod observe;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dynamics::{reset, Event, Kitchen, MacroEnd, RewardSpec, StepOutcome};
pub use layout::{CellKind, Layout, LayoutId};
pub use observe::{Observation, OBS_LEN};
pub use state::{EnvState, Memory, Place};

pub const GRID_SIZE: usize = 7;
pub const NUM_AGENTS: usize = 3;
pub const MAX_CHOP: u8 = 3;
pub const DEFAULT_MAX_STEPS: u32 = 200;
/// Half-width of the square view window (5×5).
pub const VIEW_RADIUS: i8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown layout {0:?}")]
    UnknownLayout(String),
    #[error("unknown recipe {0:?}")]
    UnknownRecipe(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid agent id {0}; agents are numbered 1..=3")]
    InvalidAgent(usize),
    #[error("unknown macro-action {0:?}")]
    UnknownAction(String),
}

/// 1-based agent identifier (agent 1 has the highest movement priority).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct AgentId(u8);

impl AgentId {
    pub fn new(id: usize) -> Result<AgentId, EnvError> {
        if (1..=NUM_AGENTS).contains(&id) {
            Ok(AgentId(id as u8))
        } else {
            Err(EnvError::InvalidAgent(id))
        }
    }

    pub fn from_index(idx: usize) -> AgentId {
        assert!(idx < NUM_AGENTS, "agent index {idx} out of range");
        AgentId(idx as u8 + 1)
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all() -> impl Iterator<Item = AgentId> {
        (0..NUM_AGENTS).map(AgentId::from_index)
    }

    /// Chef colour used when showing rollouts to people.
    pub fn color(self) -> &'static str {
        ["green", "rose", "blue"][self.index()]
    }
}

impl TryFrom<u8> for AgentId {
    type Error = EnvError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        AgentId::new(v as usize)
    }
}

impl From<AgentId> for u8 {
    fn from(a: AgentId) -> u8 {
        a.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i8,
    pub col: i8,
}

impl Pos {
    pub const fn new(row: i8, col: i8) -> Pos {
        Pos { row, col }
    }

    pub fn in_bounds(self) -> bool {
        (0..GRID_SIZE as i8).contains(&self.row) && (0..GRID_SIZE as i8).contains(&self.col)
    }

    pub fn offset(self, dr: i8, dc: i8) -> Pos {
        Pos::new(self.row + dr, self.col + dc)
    }

    /// In-bounds 4-neighbours in the fixed order up, down, left, right.
    pub fn neighbors(self) -> impl Iterator<Item = Pos> {
        [(-1, 0), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .map(move |(dr, dc)| self.offset(dr, dc))
            .filter(|p| p.in_bounds())
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        self.row.abs_diff(other.row) as u32 + self.col.abs_diff(other.col) as u32
    }

    pub fn chebyshev(self, other: Pos) -> u32 {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col)) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    Tomato,
    Lettuce,
    Onion,
    Plate1,
    Plate2,
}

impl Item {
    pub const COUNT: usize = 5;
    pub const ALL: [Item; 5] = [Item::Tomato, Item::Lettuce, Item::Onion, Item::Plate1, Item::Plate2];
    pub const VEGETABLES: [Item; 3] = [Item::Tomato, Item::Lettuce, Item::Onion];
    pub const PLATES: [Item; 2] = [Item::Plate1, Item::Plate2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_vegetable(self) -> bool {
        self.index() < 3
    }

    pub fn is_plate(self) -> bool {
        !self.is_vegetable()
    }

    pub fn name(self) -> &'static str {
        match self {
            Item::Tomato => "tomato",
            Item::Lettuce => "lettuce",
            Item::Onion => "onion",
            Item::Plate1 => "plate1",
            Item::Plate2 => "plate2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    LettuceTomato,
    LettuceOnionTomato,
}

impl Recipe {
    pub fn ingredients(self) -> &'static [Item] {
        match self {
            Recipe::LettuceTomato => &[Item::Tomato, Item::Lettuce],
            Recipe::LettuceOnionTomato => &[Item::Tomato, Item::Lettuce, Item::Onion],
        }
    }

    /// Slot in the 7-way order one-hot. Slots enumerate the non-empty
    /// ingredient sets in the order T, L, O, TL, TO, LO, TLO.
    pub fn order_slot(self) -> usize {
        match self {
            Recipe::LettuceTomato => 3,
            Recipe::LettuceOnionTomato => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Recipe::LettuceTomato => "lettuce_tomato",
            Recipe::LettuceOnionTomato => "lettuce_onion_tomato",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Recipe {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "lettuce_tomato" | "lettucetomato" | "tomato_lettuce" => Ok(Recipe::LettuceTomato),
            "lettuce_onion_tomato" | "lettuceoniontomato" | "tomato_lettuce_onion" => {
                Ok(Recipe::LettuceOnionTomato)
            }
            _ => Err(EnvError::UnknownRecipe(s.to_string())),
        }
    }
}

/// Temporally extended actions. The discriminant is the action index used by
/// external reward expressions (`act == 5` means `Chop`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MacroAction {
    Up,
    Down,
    Left,
    Right,
    Stay,
    Chop,
    GetLettuce,
    GetTomato,
    GetOnion,
    GetPlate1,
    GetPlate2,
    GoCutBoard1,
    GoCutBoard2,
    GoCounter,
    Deliver,
}

impl MacroAction {
    pub const COUNT: usize = 15;
    pub const ALL: [MacroAction; 15] = [
        MacroAction::Up,
        MacroAction::Down,
        MacroAction::Left,
        MacroAction::Right,
        MacroAction::Stay,
        MacroAction::Chop,
        MacroAction::GetLettuce,
        MacroAction::GetTomato,
        MacroAction::GetOnion,
        MacroAction::GetPlate1,
        MacroAction::GetPlate2,
        MacroAction::GoCutBoard1,
        MacroAction::GoCutBoard2,
        MacroAction::GoCounter,
        MacroAction::Deliver,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<MacroAction> {
        MacroAction::ALL.get(idx).copied()
    }

    /// One-tick actions that map directly onto a primitive.
    pub fn is_primitive(self) -> bool {
        self.index() <= MacroAction::Stay.index()
    }

    pub fn name(self) -> &'static str {
        match self {
            MacroAction::Up => "up",
            MacroAction::Down => "down",
            MacroAction::Left => "left",
            MacroAction::Right => "right",
            MacroAction::Stay => "stay",
            MacroAction::Chop => "chop",
            MacroAction::GetLettuce => "get_lettuce",
            MacroAction::GetTomato => "get_tomato",
            MacroAction::GetOnion => "get_onion",
            MacroAction::GetPlate1 => "get_plate1",
            MacroAction::GetPlate2 => "get_plate2",
            MacroAction::GoCutBoard1 => "go_cut_board1",
            MacroAction::GoCutBoard2 => "go_cut_board2",
            MacroAction::GoCounter => "go_counter",
            MacroAction::Deliver => "deliver",
        }
    }

    pub(crate) fn target_item(self) -> Option<Item> {
        match self {
            MacroAction::GetTomato => Some(Item::Tomato),
            MacroAction::GetLettuce => Some(Item::Lettuce),
            MacroAction::GetOnion => Some(Item::Onion),
            MacroAction::GetPlate1 => Some(Item::Plate1),
            MacroAction::GetPlate2 => Some(Item::Plate2),
            _ => None,
        }
    }
}

impl fmt::Display for MacroAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacroAction {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .collect();
        MacroAction::ALL
            .into_iter()
            .find(|a| a.name().replace('_', "") == norm)
            .ok_or_else(|| EnvError::UnknownAction(s.to_string()))
    }
}

/// Legal macro-actions: every action except `GoCounter` outside layout B.
/// Infeasible macros (e.g. `Chop` away from a board) stay legal and simply
/// terminate on their first tick.
pub fn legal_macro_actions(layout: LayoutId) -> Vec<MacroAction> {
    MacroAction::ALL
        .into_iter()
        .filter(|a| *a != MacroAction::GoCounter || layout == LayoutId::B)
        .collect()
}

use serde::{Deserialize, Serialize};

use super::{AgentId, Item, Layout, LayoutId, MacroAction, Pos, Recipe, MAX_CHOP, NUM_AGENTS, VIEW_RADIUS};

/// Where an item currently is. Every item is in exactly one place.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Place {
    /// On a counter-like cell or cutting board.
    Cell { pos: Pos },
    Held { agent: AgentId },
    /// On top of a plate (vegetables only).
    OnPlate { plate: Item },
    /// Part of a correctly delivered salad.
    Delivered { pos: Pos },
}

/// What an agent last saw of every movable entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    pub items: [Pos; Item::COUNT],
    pub status: [u8; 3],
    pub agents: [Pos; NUM_AGENTS],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct MacroProgress {
    pub active: Option<MacroAction>,
    /// A `Get-*` macro found nothing at the remembered cell and is now
    /// heading for the item's initial cell.
    pub checking_initial: bool,
}

/// Full kitchen configuration at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub layout: LayoutId,
    pub recipe: Recipe,
    pub seed: u64,
    pub timestep: u32,
    pub agents: [Pos; NUM_AGENTS],
    pub items: [Place; Item::COUNT],
    /// Chop progress per vegetable (tomato, lettuce, onion); `MAX_CHOP` is fully chopped.
    pub chop: [u8; 3],
    pub memory: [Memory; NUM_AGENTS],
    pub done: bool,
    #[serde(default)]
    pub(crate) progress: [MacroProgress; NUM_AGENTS],
}

impl EnvState {
    /// Deterministic initial state. Spawn positions come from the layout;
    /// the seed is recorded for provenance only since dynamics are deterministic.
    pub fn initial(layout: &Layout, recipe: Recipe, seed: u64) -> EnvState {
        let agents = [layout.agent_start(0), layout.agent_start(1), layout.agent_start(2)];
        let items = Item::ALL.map(|i| Place::Cell { pos: layout.item_spawn(i) });
        let memory = Memory {
            items: Item::ALL.map(|i| layout.item_spawn(i)),
            status: [0; 3],
            agents,
        };
        let mut state = EnvState {
            layout: layout.id,
            recipe,
            seed,
            timestep: 0,
            agents,
            items,
            chop: [0; 3],
            memory: [memory.clone(), memory.clone(), memory],
            done: false,
            progress: Default::default(),
        };
        state.refresh_memory();
        state
    }

    /// Grid position of an item; held items are at the holder's cell and
    /// plated vegetables at their plate's position.
    pub fn item_pos(&self, item: Item) -> Pos {
        match self.items[item.index()] {
            Place::Cell { pos } | Place::Delivered { pos } => pos,
            Place::Held { agent } => self.agents[agent.index()],
            Place::OnPlate { plate } => self.item_pos(plate),
        }
    }

    pub fn held(&self, agent: AgentId) -> Option<Item> {
        Item::ALL
            .into_iter()
            .find(|i| self.items[i.index()] == Place::Held { agent })
    }

    /// The top-level item resting on a cell (a plate stands for its contents).
    pub fn item_at(&self, pos: Pos) -> Option<Item> {
        Item::ALL
            .into_iter()
            .find(|i| self.items[i.index()] == Place::Cell { pos })
    }

    pub fn board_contents(&self, layout: &Layout, board: usize) -> Option<Item> {
        self.item_at(layout.board(board))
    }

    pub fn plate_contents(&self, plate: Item) -> Vec<Item> {
        Item::VEGETABLES
            .into_iter()
            .filter(|v| self.items[v.index()] == Place::OnPlate { plate })
            .collect()
    }

    /// The agent holding `item`, directly or via a held plate.
    pub fn holder_of(&self, item: Item) -> Option<AgentId> {
        match self.items[item.index()] {
            Place::Held { agent } => Some(agent),
            Place::OnPlate { plate } => self.holder_of(plate),
            _ => None,
        }
    }

    pub fn is_chopped(&self, veg: Item) -> bool {
        veg.is_vegetable() && self.chop[veg.index()] >= MAX_CHOP
    }

    pub fn agent_at(&self, pos: Pos) -> Option<AgentId> {
        self.agents
            .iter()
            .position(|p| *p == pos)
            .map(AgentId::from_index)
    }

    pub fn in_view(&self, agent: AgentId, pos: Pos) -> bool {
        self.agents[agent.index()].chebyshev(pos) <= VIEW_RADIUS as u32
    }

    /// Update every agent's memory with whatever is inside its window.
    pub fn refresh_memory(&mut self) {
        for a in AgentId::all() {
            for item in Item::ALL {
                let pos = self.item_pos(item);
                if self.in_view(a, pos) {
                    self.memory[a.index()].items[item.index()] = pos;
                    if item.is_vegetable() {
                        self.memory[a.index()].status[item.index()] = self.chop[item.index()];
                    }
                }
            }
            for other in 0..NUM_AGENTS {
                let pos = self.agents[other];
                if self.in_view(a, pos) {
                    self.memory[a.index()].agents[other] = pos;
                }
            }
        }
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self, layout: &Layout) -> Result<(), String> {
        for i in 0..NUM_AGENTS {
            if !layout.is_floor(self.agents[i]) {
                return Err(format!("agent {} is off the floor", i + 1));
            }
            for j in i + 1..NUM_AGENTS {
                if self.agents[i] == self.agents[j] {
                    return Err(format!("agents {} and {} share a cell", i + 1, j + 1));
                }
            }
        }
        let mut occupied = Vec::new();
        for item in Item::ALL {
            match self.items[item.index()] {
                Place::Cell { pos } => {
                    if layout.cell(pos).map_or(true, |k| k.is_floor()) {
                        return Err(format!("{} rests on a floor cell", item.name()));
                    }
                    if occupied.contains(&pos) {
                        return Err(format!("two items stacked at ({}, {})", pos.row, pos.col));
                    }
                    occupied.push(pos);
                }
                Place::OnPlate { plate } => {
                    if item.is_plate() || plate.is_vegetable() {
                        return Err(format!("{} is on a non-plate", item.name()));
                    }
                    if matches!(self.items[plate.index()], Place::OnPlate { .. }) {
                        return Err("plate stacked on a plate".into());
                    }
                    if !self.is_chopped(item) {
                        return Err(format!("unchopped {} on a plate", item.name()));
                    }
                }
                Place::Held { .. } | Place::Delivered { .. } => {}
            }
        }
        for a in AgentId::all() {
            let n = Item::ALL
                .into_iter()
                .filter(|i| self.items[i.index()] == Place::Held { agent: a })
                .count();
            if n > 1 {
                return Err(format!("agent {a} holds {n} items"));
            }
        }
        if self.chop.iter().any(|c| *c > MAX_CHOP) {
            return Err("chop progress out of range".into());
        }
        Ok(())
    }
}

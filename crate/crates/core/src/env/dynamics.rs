use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::observe::observe;
use super::state::MacroProgress;
use super::{
    legal_macro_actions, AgentId, CellKind, EnvState, Item, Layout, MacroAction,
    Observation, Place, Pos, Recipe, DEFAULT_MAX_STEPS, MAX_CHOP, NUM_AGENTS,
};

/// Original task reward, in tenths so episode accounting stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub time_penalty_tenths: i64,
    pub chop_tenths: i64,
    pub correct_delivery_tenths: i64,
    pub wrong_delivery_tenths: i64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            time_penalty_tenths: 1,
            chop_tenths: 100,
            correct_delivery_tenths: 2000,
            wrong_delivery_tenths: 50,
        }
    }
}

impl RewardSpec {
    pub fn with_wrong_delivery_penalty(mut self, penalty: f64) -> Self {
        self.wrong_delivery_tenths = (penalty * 10.0).round() as i64;
        self
    }

    /// Episode return implied by event counts.
    pub fn episode_return_tenths(&self, ticks: u32, chops: u32, correct: u32, wrong: u32) -> i64 {
        -self.time_penalty_tenths * ticks as i64
            + self.chop_tenths * chops as i64
            + self.correct_delivery_tenths * correct as i64
            - self.wrong_delivery_tenths * wrong as i64
    }

    /// Largest absolute reward a single tick can produce.
    pub fn max_abs_tick(&self) -> f64 {
        let best = self.correct_delivery_tenths + NUM_AGENTS as i64 * self.chop_tenths;
        let worst = self.time_penalty_tenths + NUM_AGENTS as i64 * self.wrong_delivery_tenths;
        best.max(worst) as f64 / 10.0
    }
}

/// Why a macro-action ended this tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroEnd {
    /// A one-tick primitive finished.
    OneStep,
    /// The macro achieved its purpose (picked, placed, delivered, chopped).
    Completed,
    /// Navigation reached the target cell with nothing to hand over.
    Arrived,
    HandsFull,
    NotAdjacentToBoard,
    NoUnchoppedVegetable,
    TargetHeld,
    PathBlocked,
    Unreachable,
    NotFound,
    LostPriority,
    TeammateAtTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Moved { agent: AgentId, to: Pos },
    Picked { agent: AgentId, item: Item },
    Placed { agent: AgentId, item: Item, pos: Pos },
    Plated { agent: AgentId, vegetable: Item, plate: Item },
    Chopped { agent: AgentId, vegetable: Item, progress: u8 },
    ChopCompleted { agent: AgentId, vegetable: Item },
    Delivered { agent: AgentId, item: Item, correct: bool },
    ItemReset { item: Item, pos: Pos },
    MacroEnded { agent: AgentId, action: MacroAction, reason: MacroEnd },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub reward_tenths: i64,
    pub macro_done: [bool; NUM_AGENTS],
    pub end_reasons: [Option<MacroEnd>; NUM_AGENTS],
    pub done: bool,
    pub chops: u32,
    pub correct_deliveries: u32,
    pub wrong_deliveries: u32,
    pub events: Vec<Event>,
}

/// One environment instance. Single-threaded; independent instances share
/// only the immutable layout.
#[derive(Debug, Clone)]
pub struct Kitchen {
    layout: Arc<Layout>,
    rewards: RewardSpec,
    max_steps: u32,
    state: EnvState,
}

impl Kitchen {
    pub fn new(layout: Arc<Layout>, recipe: Recipe, seed: u64) -> Kitchen {
        let state = EnvState::initial(&layout, recipe, seed);
        Kitchen {
            layout,
            rewards: RewardSpec::default(),
            max_steps: DEFAULT_MAX_STEPS,
            state,
        }
    }

    pub fn with_rewards(mut self, rewards: RewardSpec) -> Kitchen {
        self.rewards = rewards;
        self
    }

    pub fn with_max_steps(mut self, max_steps: u32) -> Kitchen {
        self.max_steps = max_steps;
        self
    }

    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.state = EnvState::initial(&self.layout, self.state.recipe, seed);
        &self.state
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    pub fn rewards(&self) -> RewardSpec {
        self.rewards
    }

    pub fn max_steps(&self) -> u32 {
        self.max_steps
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Replace the current state (used to construct test scenarios and to
    /// resume from a replay).
    pub fn set_state(&mut self, state: EnvState) {
        self.state = state;
    }

    pub fn observe(&self, agent: AgentId) -> Observation {
        observe(&self.layout, &self.state, agent)
    }

    pub fn observe_all(&self) -> [Observation; NUM_AGENTS] {
        [0, 1, 2].map(|i| self.observe(AgentId::from_index(i)))
    }

    pub fn legal_macro_actions(&self, _agent: AgentId) -> Vec<MacroAction> {
        legal_macro_actions(self.layout.id)
    }

    /// Advance one tick. Each agent executes one primitive of its macro;
    /// an agent whose macro ended last tick (or that receives a different
    /// action) starts the given macro fresh.
    pub fn step(&mut self, actions: &[MacroAction; NUM_AGENTS]) -> StepOutcome {
        step(&self.layout, &self.rewards, self.max_steps, &mut self.state, actions)
    }
}

/// Initial state for a layout/recipe pair.
pub fn reset(layout: &Layout, recipe: Recipe, seed: u64) -> EnvState {
    EnvState::initial(layout, recipe, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Interaction {
    /// Primitive "move against a cell": place, chop or pick as appropriate.
    Use,
    Pick,
    Place,
    Chop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Intent {
    Idle,
    Move(Pos),
    Interact(Pos, Interaction),
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    intent: Intent,
    /// Termination decided before acting.
    end: Option<MacroEnd>,
    /// Movement is part of a navigation macro (a lost contention ends it).
    navigating: bool,
}

impl Plan {
    fn end(reason: MacroEnd) -> Plan {
        Plan { intent: Intent::Idle, end: Some(reason), navigating: false }
    }

    fn act(intent: Intent, end: Option<MacroEnd>) -> Plan {
        Plan { intent, end, navigating: false }
    }

    fn nav(to: Pos) -> Plan {
        Plan { intent: Intent::Move(to), end: None, navigating: true }
    }
}

enum Nav {
    At,
    Step(Pos),
    Blocked,
    Unreachable,
}

fn bfs_first_step(layout: &Layout, state: &EnvState, me: usize, goals: &[Pos], avoid_agents: bool) -> Option<Option<Pos>> {
    let start = state.agents[me];
    if goals.contains(&start) {
        return Some(None);
    }
    let blocked = |p: Pos| {
        avoid_agents && state.agents.iter().enumerate().any(|(j, a)| j != me && *a == p)
    };
    let mut first: [[Option<Pos>; 7]; 7] = [[None; 7]; 7];
    let mut seen = [[false; 7]; 7];
    seen[start.row as usize][start.col as usize] = true;
    let mut queue = VecDeque::new();
    for n in start.neighbors() {
        if layout.is_floor(n) && !blocked(n) {
            seen[n.row as usize][n.col as usize] = true;
            first[n.row as usize][n.col as usize] = Some(n);
            queue.push_back(n);
        }
    }
    while let Some(p) = queue.pop_front() {
        if goals.contains(&p) {
            return Some(first[p.row as usize][p.col as usize]);
        }
        for n in p.neighbors() {
            if layout.is_floor(n) && !blocked(n) && !seen[n.row as usize][n.col as usize] {
                seen[n.row as usize][n.col as usize] = true;
                first[n.row as usize][n.col as usize] = first[p.row as usize][p.col as usize];
                queue.push_back(n);
            }
        }
    }
    None
}

/// Shortest-path navigation over floor with teammates as obstacles.
fn navigate(layout: &Layout, state: &EnvState, me: usize, goals: &[Pos]) -> Nav {
    match bfs_first_step(layout, state, me, goals, true) {
        Some(None) => Nav::At,
        Some(Some(p)) => Nav::Step(p),
        None => match bfs_first_step(layout, state, me, goals, false) {
            Some(_) => Nav::Blocked,
            None => Nav::Unreachable,
        },
    }
}

fn nav_plan(nav: Nav) -> Plan {
    match nav {
        Nav::At => Plan::end(MacroEnd::Arrived),
        Nav::Step(p) => Plan::nav(p),
        Nav::Blocked => Plan::end(MacroEnd::PathBlocked),
        Nav::Unreachable => Plan::end(MacroEnd::Unreachable),
    }
}

fn primitive_plan(layout: &Layout, state: &EnvState, me: usize, action: MacroAction) -> Plan {
    let (dr, dc) = match action {
        MacroAction::Up => (-1, 0),
        MacroAction::Down => (1, 0),
        MacroAction::Left => (0, -1),
        MacroAction::Right => (0, 1),
        _ => return Plan::end(MacroEnd::OneStep),
    };
    let target = state.agents[me].offset(dr, dc);
    let intent = match layout.cell(target) {
        Some(CellKind::Floor) => Intent::Move(target),
        Some(_) => Intent::Interact(target, Interaction::Use),
        None => Intent::Idle,
    };
    Plan::act(intent, Some(MacroEnd::OneStep))
}

fn chop_plan(layout: &Layout, state: &EnvState, me: usize) -> Plan {
    if state.held(AgentId::from_index(me)).is_some() {
        return Plan::end(MacroEnd::HandsFull);
    }
    let pos = state.agents[me];
    let boards: Vec<Pos> = (0..2).map(|b| layout.board(b)).filter(|b| b.manhattan(pos) == 1).collect();
    if boards.is_empty() {
        return Plan::end(MacroEnd::NotAdjacentToBoard);
    }
    match boards.into_iter().find(|b| unchopped_on(state, *b).is_some()) {
        Some(board) => Plan::act(Intent::Interact(board, Interaction::Chop), None),
        None => Plan::end(MacroEnd::NoUnchoppedVegetable),
    }
}

fn unchopped_on(state: &EnvState, cell: Pos) -> Option<Item> {
    state
        .item_at(cell)
        .filter(|i| i.is_vegetable() && state.chop[i.index()] < MAX_CHOP)
}

/// Cell whose top-level stack contains `item`, if it rests on a cell.
fn resting_cell(state: &EnvState, item: Item) -> Option<Pos> {
    match state.items[item.index()] {
        Place::Cell { pos } => Some(pos),
        Place::OnPlate { plate } => resting_cell(state, plate),
        _ => None,
    }
}

fn get_plan(layout: &Layout, state: &EnvState, me: usize, item: Item, progress: &mut MacroProgress) -> Plan {
    let agent = AgentId::from_index(me);
    if state.held(agent).is_some() {
        return Plan::end(MacroEnd::HandsFull);
    }
    if matches!(state.items[item.index()], Place::Delivered { .. }) {
        return Plan::end(MacroEnd::NotFound);
    }
    let true_pos = state.item_pos(item);
    let visible = state.in_view(agent, true_pos);
    if visible && state.holder_of(item).is_some() {
        return Plan::end(MacroEnd::TargetHeld);
    }
    let spawn = layout.item_spawn(item);
    let mut target = if visible {
        progress.checking_initial = false;
        true_pos
    } else if progress.checking_initial {
        spawn
    } else {
        let remembered = state.memory[me].items[item.index()];
        if layout.is_floor(remembered) {
            // Last seen in someone's hands; only the initial cell is left to check.
            progress.checking_initial = true;
            spawn
        } else {
            remembered
        }
    };
    let here = state.agents[me];
    if target.manhattan(here) == 1 {
        if resting_cell(state, item) == Some(target) {
            return Plan::act(Intent::Interact(target, Interaction::Pick), Some(MacroEnd::Completed));
        }
        if progress.checking_initial || target == spawn {
            return Plan::end(MacroEnd::NotFound);
        }
        progress.checking_initial = true;
        target = spawn;
        if target.manhattan(here) == 1 {
            if resting_cell(state, item) == Some(target) {
                return Plan::act(Intent::Interact(target, Interaction::Pick), Some(MacroEnd::Completed));
            }
            return Plan::end(MacroEnd::NotFound);
        }
    }
    let goals: Vec<Pos> = layout.floor_neighbors(target).collect();
    match navigate(layout, state, me, &goals) {
        // Adjacent was handled above; standing on a goal means the target is
        // reachable only from here yet not adjacent, which cannot happen.
        Nav::At => Plan::end(MacroEnd::NotFound),
        other => nav_plan(other),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Arrival {
    Board,
    Deliver,
    Counter,
}

fn goto_plan(layout: &Layout, state: &EnvState, me: usize, target: Pos, arrival: Arrival) -> Plan {
    let agent = AgentId::from_index(me);
    let here = state.agents[me];
    let dests: Vec<Pos> = layout.floor_neighbors(target).collect();
    if dests.contains(&here) {
        let holding = state.held(agent).is_some();
        return match arrival {
            Arrival::Board | Arrival::Deliver if holding => {
                Plan::act(Intent::Interact(target, Interaction::Place), Some(MacroEnd::Completed))
            }
            Arrival::Board | Arrival::Deliver => Plan::end(MacroEnd::Arrived),
            Arrival::Counter => {
                Plan::act(Intent::Interact(target, Interaction::Use), Some(MacroEnd::Completed))
            }
        };
    }
    let free: Vec<Pos> = dests.iter().copied().filter(|d| state.agent_at(*d).is_none()).collect();
    if free.is_empty() {
        // Every access cell is taken: stop next to the teammate using it.
        let teammates: Vec<Pos> = dests.clone();
        if teammates.iter().any(|t| t.manhattan(here) == 1) {
            return Plan::end(MacroEnd::TeammateAtTarget);
        }
        let near: Vec<Pos> = teammates
            .iter()
            .flat_map(|t| layout.floor_neighbors(*t))
            .filter(|p| state.agent_at(*p).is_none())
            .collect();
        return match navigate(layout, state, me, &near) {
            Nav::Step(p) => Plan::nav(p),
            _ => Plan::end(MacroEnd::TeammateAtTarget),
        };
    }
    nav_plan(navigate(layout, state, me, &free))
}

fn plan(layout: &Layout, state: &EnvState, me: usize, action: MacroAction, progress: &mut MacroProgress) -> Plan {
    if action.is_primitive() {
        return primitive_plan(layout, state, me, action);
    }
    match action {
        MacroAction::Chop => chop_plan(layout, state, me),
        MacroAction::GoCutBoard1 => goto_plan(layout, state, me, layout.board(0), Arrival::Board),
        MacroAction::GoCutBoard2 => goto_plan(layout, state, me, layout.board(1), Arrival::Board),
        MacroAction::Deliver => goto_plan(layout, state, me, layout.delivery(), Arrival::Deliver),
        MacroAction::GoCounter => match layout.center() {
            Some(c) => goto_plan(layout, state, me, c, Arrival::Counter),
            None => Plan::end(MacroEnd::Unreachable),
        },
        other => {
            let item = other.target_item().expect("remaining macros fetch an item");
            get_plan(layout, state, me, item, progress)
        }
    }
}

struct Tick<'a> {
    layout: &'a Layout,
    rewards: &'a RewardSpec,
    state: &'a mut EnvState,
    events: Vec<Event>,
    reward_tenths: i64,
    chops: u32,
    correct: u32,
    wrong: u32,
}

impl Tick<'_> {
    fn interact(&mut self, me: usize, cell: Pos, how: Interaction) -> bool {
        let agent = AgentId::from_index(me);
        let held = self.state.held(agent);
        match how {
            Interaction::Pick => held.is_none() && self.pick(agent, cell),
            Interaction::Place => held.is_some_and(|h| self.place(agent, h, cell)),
            Interaction::Chop => held.is_none() && self.chop(agent, cell),
            Interaction::Use => match held {
                Some(h) => self.place(agent, h, cell),
                None if unchopped_on(self.state, cell).is_some()
                    && self.layout.cell(cell).and_then(CellKind::board_index).is_some() =>
                {
                    self.chop(agent, cell)
                }
                None => self.pick(agent, cell),
            },
        }
    }

    fn pick(&mut self, agent: AgentId, cell: Pos) -> bool {
        if self.layout.cell(cell) == Some(CellKind::Delivery) {
            return false;
        }
        match self.state.item_at(cell) {
            Some(item) => {
                self.state.items[item.index()] = Place::Held { agent };
                self.events.push(Event::Picked { agent, item });
                true
            }
            None => false,
        }
    }

    fn place(&mut self, agent: AgentId, held: Item, cell: Pos) -> bool {
        let kind = match self.layout.cell(cell) {
            Some(k) if !k.is_floor() => k,
            _ => return false,
        };
        if kind == CellKind::Delivery {
            self.deliver(agent, held);
            return true;
        }
        match self.state.item_at(cell) {
            None => {
                self.state.items[held.index()] = Place::Cell { pos: cell };
                self.events.push(Event::Placed { agent, item: held, pos: cell });
                true
            }
            Some(plate) if plate.is_plate() && held.is_vegetable() && self.state.is_chopped(held) => {
                self.state.items[held.index()] = Place::OnPlate { plate };
                self.events.push(Event::Plated { agent, vegetable: held, plate });
                true
            }
            Some(veg) if veg.is_vegetable() && held.is_plate() && self.state.is_chopped(veg) => {
                self.state.items[veg.index()] = Place::OnPlate { plate: held };
                self.events.push(Event::Plated { agent, vegetable: veg, plate: held });
                true
            }
            Some(_) => false,
        }
    }

    fn chop(&mut self, agent: AgentId, cell: Pos) -> bool {
        let Some(veg) = unchopped_on(self.state, cell) else {
            return false;
        };
        let c = &mut self.state.chop[veg.index()];
        *c += 1;
        let progress = *c;
        self.events.push(Event::Chopped { agent, vegetable: veg, progress });
        if progress == MAX_CHOP {
            self.events.push(Event::ChopCompleted { agent, vegetable: veg });
            self.reward_tenths += self.rewards.chop_tenths;
            self.chops += 1;
        }
        true
    }

    fn deliver(&mut self, agent: AgentId, item: Item) {
        let delivery = self.layout.delivery();
        let contents = if item.is_plate() { self.state.plate_contents(item) } else { Vec::new() };
        let wanted = self.state.recipe.ingredients();
        let correct = item.is_plate()
            && contents.len() == wanted.len()
            && wanted.iter().all(|w| contents.contains(w))
            && contents.iter().all(|v| self.state.is_chopped(*v));
        self.events.push(Event::Delivered { agent, item, correct });
        if correct {
            self.reward_tenths += self.rewards.correct_delivery_tenths;
            self.correct += 1;
            self.state.items[item.index()] = Place::Delivered { pos: delivery };
            for v in contents {
                self.state.items[v.index()] = Place::Delivered { pos: delivery };
            }
            self.state.done = true;
        } else {
            self.reward_tenths -= self.rewards.wrong_delivery_tenths;
            self.wrong += 1;
            self.reset_item(item);
            for v in contents {
                self.reset_item(v);
            }
        }
    }

    /// Return an item to its initial cell, or the nearest free counter if
    /// something else occupies it.
    fn reset_item(&mut self, item: Item) {
        let spawn = self.layout.item_spawn(item);
        let target = if self.state.item_at(spawn).is_none() {
            spawn
        } else {
            let mut free: Vec<Pos> = self
                .layout
                .counter_cells()
                .filter(|p| self.state.item_at(*p).is_none())
                .collect();
            free.sort_by_key(|p| (p.manhattan(spawn), *p));
            // Five items can never fill every counter of a valid layout.
            free[0]
        };
        self.state.items[item.index()] = Place::Cell { pos: target };
        self.events.push(Event::ItemReset { item, pos: target });
    }
}

pub(crate) fn step(
    layout: &Layout,
    rewards: &RewardSpec,
    max_steps: u32,
    state: &mut EnvState,
    actions: &[MacroAction; NUM_AGENTS],
) -> StepOutcome {
    let mut plans = Vec::with_capacity(NUM_AGENTS);
    for (me, &action) in actions.iter().enumerate() {
        let mut progress = state.progress[me];
        if progress.active != Some(action) {
            progress = MacroProgress { active: Some(action), checking_initial: false };
        }
        let p = plan(layout, state, me, action, &mut progress);
        state.progress[me] = progress;
        plans.push(p);
    }

    let mut tick = Tick {
        layout,
        rewards,
        state,
        events: Vec::new(),
        reward_tenths: -rewards.time_penalty_tenths,
        chops: 0,
        correct: 0,
        wrong: 0,
    };
    let mut ends: [Option<MacroEnd>; NUM_AGENTS] = [None; NUM_AGENTS];

    // Moves: a cell must be free at tick start and unclaimed by a
    // higher-priority agent.
    let start = tick.state.agents;
    let mut claimed: Vec<Pos> = Vec::new();
    for (me, p) in plans.iter().enumerate() {
        ends[me] = p.end;
        if let Intent::Move(to) = p.intent {
            let free = layout.is_floor(to) && !start.contains(&to) && !claimed.contains(&to);
            if free {
                tick.state.agents[me] = to;
                claimed.push(to);
                tick.events.push(Event::Moved { agent: AgentId::from_index(me), to });
            } else if p.navigating && claimed.contains(&to) {
                ends[me] = Some(MacroEnd::LostPriority);
            } else if p.navigating {
                ends[me] = Some(MacroEnd::PathBlocked);
            }
        }
    }

    for (me, p) in plans.iter().enumerate() {
        if let Intent::Interact(cell, how) = p.intent {
            let ok = tick.interact(me, cell, how);
            match how {
                Interaction::Chop => {
                    let veg_done = tick.events.iter().any(|e| {
                        matches!(e, Event::ChopCompleted { agent, .. } if agent.index() == me)
                    });
                    if veg_done {
                        ends[me] = Some(MacroEnd::Completed);
                    } else if !ok {
                        ends[me] = Some(MacroEnd::NoUnchoppedVegetable);
                    }
                }
                Interaction::Pick if !ok => ends[me] = Some(MacroEnd::NotFound),
                _ => {}
            }
        }
    }

    let Tick { events: mut tick_events, reward_tenths, chops, correct, wrong, .. } = tick;
    for (me, end) in ends.iter().enumerate() {
        if let Some(reason) = end {
            state.progress[me].active = None;
            tick_events.push(Event::MacroEnded {
                agent: AgentId::from_index(me),
                action: actions[me],
                reason: *reason,
            });
        }
    }

    state.timestep += 1;
    state.refresh_memory();
    if state.timestep >= max_steps {
        state.done = true;
    }

    StepOutcome {
        reward: reward_tenths as f64 / 10.0,
        reward_tenths,
        macro_done: ends.map(|e| e.is_some()),
        end_reasons: ends,
        done: state.done,
        chops,
        correct_deliveries: correct,
        wrong_deliveries: wrong,
        events: tick_events,
    }
}


use serde::{Deserialize, Serialize};

use super::{AgentId, EnvState, Item, Layout, Pos, GRID_SIZE, MAX_CHOP, NUM_AGENTS};

pub const OBS_LEN: usize = 32;

/// Per-agent observation vector.
///
/// | indices | content                           |
/// |---------|-----------------------------------|
/// | 0–2     | tomato row, col, chop status      |
/// | 3–5     | lettuce row, col, chop status     |
/// | 6–8     | onion row, col, chop status       |
/// | 9–10    | plate 1 row, col                  |
/// | 11–12   | plate 2 row, col                  |
/// | 13–14   | cutting board 1 row, col          |
/// | 15–16   | cutting board 2 row, col          |
/// | 17–18   | delivery row, col                 |
/// | 19–24   | agents 1–3 row, col               |
/// | 25–31   | order one-hot                     |
///
/// Positions are scaled by `1/(GRID_SIZE-1)`, chop status by `1/MAX_CHOP`, so a
/// fully chopped vegetable reads exactly `1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(#[serde(with = "obs_serde")] pub [f64; OBS_LEN]);

impl Observation {
    pub fn zeros() -> Observation {
        Observation([0.0; OBS_LEN])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for Observation {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

mod obs_serde {
    use super::OBS_LEN;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; OBS_LEN], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; OBS_LEN], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| D::Error::custom(format!("expected {OBS_LEN} entries, got {}", v.len())))
    }
}

pub(crate) fn norm(coord: i8) -> f64 {
    coord as f64 / (GRID_SIZE - 1) as f64
}

fn put_pos(v: &mut [f64; OBS_LEN], at: usize, p: Pos) {
    v[at] = norm(p.row);
    v[at + 1] = norm(p.col);
}

pub(crate) fn observe(layout: &Layout, state: &EnvState, agent: AgentId) -> Observation {
    let mem = &state.memory[agent.index()];
    let mut v = [0.0; OBS_LEN];
    for veg in Item::VEGETABLES {
        let true_pos = state.item_pos(veg);
        let (pos, status) = if state.in_view(agent, true_pos) {
            (true_pos, state.chop[veg.index()])
        } else {
            (mem.items[veg.index()], mem.status[veg.index()])
        };
        let base = veg.index() * 3;
        put_pos(&mut v, base, pos);
        v[base + 2] = status as f64 / MAX_CHOP as f64;
    }
    for (k, plate) in Item::PLATES.into_iter().enumerate() {
        let true_pos = state.item_pos(plate);
        let pos = if state.in_view(agent, true_pos) {
            true_pos
        } else {
            mem.items[plate.index()]
        };
        put_pos(&mut v, 9 + 2 * k, pos);
    }
    put_pos(&mut v, 13, layout.board(0));
    put_pos(&mut v, 15, layout.board(1));
    put_pos(&mut v, 17, layout.delivery());
    for other in 0..NUM_AGENTS {
        let true_pos = state.agents[other];
        let pos = if state.in_view(agent, true_pos) {
            true_pos
        } else {
            mem.agents[other]
        };
        put_pos(&mut v, 19 + 2 * other, pos);
    }
    v[25 + state.recipe.order_slot()] = 1.0;
    Observation(v)
}

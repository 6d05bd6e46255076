//! Environment scenarios shared by the scenario tests and the acceptance
//! harness. Each one panics on failure.

use std::sync::Arc;

use fbmarl::env::{
    reset, AgentId, EnvState, Item, Kitchen, Layout, LayoutId, MacroAction, MacroEnd, Place, Pos, Recipe,
    RewardSpec, OBS_LEN,
};

use MacroAction::*;

pub struct Scenario {
    pub name: &'static str,
    /// Termination reasons the scenario demonstrates.
    pub ends: &'static [MacroEnd],
    pub run: fn(),
}

pub const ALL: &[Scenario] = &[
    Scenario { name: "reset_is_deterministic_and_clean", ends: &[], run: reset_is_deterministic_and_clean },
    Scenario { name: "idle_tick_costs_a_tenth", ends: &[], run: idle_tick_costs_a_tenth },
    Scenario { name: "episode_ends_at_max_steps", ends: &[], run: episode_ends_at_max_steps },
    Scenario { name: "chop_completes_after_three_ticks_with_bonus", ends: &[MacroEnd::Completed], run: chop_completes_after_three_ticks_with_bonus },
    Scenario { name: "chop_ends_when_not_next_to_board", ends: &[MacroEnd::NotAdjacentToBoard], run: chop_ends_when_not_next_to_board },
    Scenario { name: "chop_ends_without_unchopped_vegetable", ends: &[MacroEnd::NoUnchoppedVegetable], run: chop_ends_without_unchopped_vegetable },
    Scenario { name: "chop_ends_when_holding_something", ends: &[MacroEnd::HandsFull], run: chop_ends_when_holding_something },
    Scenario { name: "get_vegetable_picks_it_up", ends: &[MacroEnd::Completed], run: get_vegetable_picks_it_up },
    Scenario { name: "get_vegetable_ends_when_target_held_by_teammate", ends: &[MacroEnd::TargetHeld], run: get_vegetable_ends_when_target_held_by_teammate },
    Scenario { name: "get_vegetable_ends_when_hands_full", ends: &[MacroEnd::HandsFull], run: get_vegetable_ends_when_hands_full },
    Scenario { name: "get_vegetable_ends_when_path_blocked", ends: &[MacroEnd::PathBlocked], run: get_vegetable_ends_when_path_blocked },
    Scenario { name: "get_vegetable_ends_when_not_found", ends: &[MacroEnd::NotFound], run: get_vegetable_ends_when_not_found },
    Scenario { name: "get_vegetable_checks_initial_cell_after_stale_memory", ends: &[], run: get_vegetable_checks_initial_cell_after_stale_memory },
    Scenario { name: "get_vegetable_loses_contention_to_higher_priority", ends: &[MacroEnd::LostPriority], run: get_vegetable_loses_contention_to_higher_priority },
    Scenario { name: "get_plate_picks_it_up", ends: &[MacroEnd::Completed], run: get_plate_picks_it_up },
    Scenario { name: "get_plate_ends_when_target_held_by_teammate", ends: &[MacroEnd::HandsFull, MacroEnd::TargetHeld], run: get_plate_ends_when_target_held_by_teammate },
    Scenario { name: "get_plate_ends_when_hands_full", ends: &[MacroEnd::HandsFull], run: get_plate_ends_when_hands_full },
    Scenario { name: "get_plate_ends_when_path_blocked", ends: &[MacroEnd::PathBlocked], run: get_plate_ends_when_path_blocked },
    Scenario { name: "get_plate_ends_when_not_found", ends: &[MacroEnd::NotFound], run: get_plate_ends_when_not_found },
    Scenario { name: "get_plate_loses_contention_to_higher_priority", ends: &[MacroEnd::LostPriority], run: get_plate_loses_contention_to_higher_priority },
    Scenario { name: "go_cut_board_places_item", ends: &[MacroEnd::Completed], run: go_cut_board_places_item },
    Scenario { name: "go_cut_board_stops_next_to_teammate_using_it", ends: &[MacroEnd::TeammateAtTarget], run: go_cut_board_stops_next_to_teammate_using_it },
    Scenario { name: "go_cut_board_loses_contention_to_higher_priority", ends: &[MacroEnd::LostPriority], run: go_cut_board_loses_contention_to_higher_priority },
    Scenario { name: "deliver_wrong_item_is_penalised_and_reset", ends: &[MacroEnd::Completed], run: deliver_wrong_item_is_penalised_and_reset },
    Scenario { name: "deliver_correct_salad_finishes_episode", ends: &[], run: deliver_correct_salad_finishes_episode },
    Scenario { name: "deliver_stops_next_to_teammate_at_star", ends: &[MacroEnd::TeammateAtTarget], run: deliver_stops_next_to_teammate_at_star },
    Scenario { name: "deliver_loses_contention_to_higher_priority", ends: &[MacroEnd::LostPriority], run: deliver_loses_contention_to_higher_priority },
    Scenario { name: "go_counter_passes_items_across_the_partition", ends: &[MacroEnd::Completed], run: go_counter_passes_items_across_the_partition },
    Scenario { name: "go_counter_outside_layout_b_ends_immediately", ends: &[MacroEnd::Unreachable], run: go_counter_outside_layout_b_ends_immediately },
    Scenario { name: "only_chopped_vegetables_go_on_plates", ends: &[], run: only_chopped_vegetables_go_on_plates },
    Scenario { name: "observation_reports_visible_tomato", ends: &[], run: observation_reports_visible_tomato },
    Scenario { name: "observation_keeps_initial_position_for_unseen_moves", ends: &[], run: observation_keeps_initial_position_for_unseen_moves },
    Scenario { name: "observation_order_one_hot", ends: &[], run: observation_order_one_hot },
    Scenario { name: "observation_agent_sees_itself", ends: &[], run: observation_agent_sees_itself },
    Scenario { name: "max_abs_tick_reward", ends: &[], run: max_abs_tick_reward },
    Scenario { name: "idle_primitive_ends_after_one_tick", ends: &[MacroEnd::OneStep], run: idle_primitive_ends_after_one_tick },
    Scenario { name: "go_cut_board_with_empty_hands_arrives", ends: &[MacroEnd::Arrived], run: go_cut_board_with_empty_hands_arrives },
    Scenario { name: "deliver_with_empty_hands_arrives", ends: &[MacroEnd::Arrived], run: deliver_with_empty_hands_arrives },
];

fn kitchen(id: LayoutId) -> Kitchen {
    Kitchen::new(Arc::new(Layout::builtin(id)), Recipe::LettuceTomato, 0)
}

fn edit(k: &mut Kitchen, f: impl FnOnce(&mut EnvState)) {
    let mut s = k.state().clone();
    f(&mut s);
    s.refresh_memory();
    s.check_invariants(k.layout()).expect("scenario must be a valid state");
    k.set_state(s);
}

fn a(i: usize) -> AgentId {
    AgentId::new(i).unwrap()
}

fn cell(r: i8, c: i8) -> Place {
    Place::Cell { pos: Pos::new(r, c) }
}

/// Step until agent `who` ends its macro; returns the reason and the summed reward.
fn run_until_end(k: &mut Kitchen, actions: [MacroAction; 3], who: usize, limit: usize) -> (MacroEnd, f64) {
    let mut total = 0.0;
    for _ in 0..limit {
        let out = k.step(&actions);
        total += out.reward;
        if let Some(r) = out.end_reasons[who - 1] {
            return (r, total);
        }
    }
    panic!("agent {who} macro did not end within {limit} ticks");
}

pub fn reset_is_deterministic_and_clean() {
    let layout = Layout::builtin(LayoutId::A);
    let s1 = reset(&layout, Recipe::LettuceTomato, 0);
    let s2 = reset(&layout, Recipe::LettuceTomato, 0);
    assert_eq!(s1, s2);
    assert_eq!(s1.timestep, 0);
    assert_eq!(s1.chop, [0, 0, 0]);
    assert!(AgentId::all().all(|ag| s1.held(ag).is_none()));
    s1.check_invariants(&layout).unwrap();
}

pub fn idle_tick_costs_a_tenth() {
    let mut k = kitchen(LayoutId::A);
    let out = k.step(&[Stay, Stay, Stay]);
    assert_eq!(out.reward_tenths, -1);
    assert_eq!(out.reward, -0.1);
    assert!(!out.done);
    assert_eq!(out.macro_done, [true; 3]);
}

pub fn episode_ends_at_max_steps() {
    let mut k = kitchen(LayoutId::A);
    let mut ticks = 0;
    loop {
        ticks += 1;
        if k.step(&[Stay, Stay, Stay]).done {
            break;
        }
    }
    assert_eq!(ticks, 200);
    assert_eq!(k.state().timestep, 200);
}

// ---- Chop ----

pub fn chop_completes_after_three_ticks_with_bonus() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.items[Item::Tomato.index()] = cell(0, 3);
        s.agents[0] = Pos::new(1, 3);
    });
    for tick in 0..3 {
        let out = k.step(&[Chop, Stay, Stay]);
        if tick < 2 {
            assert_eq!(out.reward_tenths, -1);
            assert!(!out.macro_done[0]);
        } else {
            assert_eq!(out.reward_tenths, 99, "+10 chop completion minus the tick");
            assert_eq!(out.end_reasons[0], Some(MacroEnd::Completed));
            assert_eq!(out.chops, 1);
        }
    }
    assert_eq!(k.state().chop[Item::Tomato.index()], 3);
}

pub fn chop_ends_when_not_next_to_board() {
    let mut k = kitchen(LayoutId::A);
    let out = k.step(&[Chop, Stay, Stay]);
    assert_eq!(out.end_reasons[0], Some(MacroEnd::NotAdjacentToBoard));
}

pub fn chop_ends_without_unchopped_vegetable() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.agents[0] = Pos::new(1, 3));
    assert_eq!(k.step(&[Chop, Stay, Stay]).end_reasons[0], Some(MacroEnd::NoUnchoppedVegetable));

    edit(&mut k, |s| {
        s.items[Item::Tomato.index()] = cell(0, 3);
        s.chop[0] = 3;
    });
    assert_eq!(k.step(&[Chop, Stay, Stay]).end_reasons[0], Some(MacroEnd::NoUnchoppedVegetable));
}

pub fn chop_ends_when_holding_something() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.items[Item::Tomato.index()] = cell(0, 3);
        s.items[Item::Lettuce.index()] = Place::Held { agent: a(1) };
        s.agents[0] = Pos::new(1, 3);
    });
    assert_eq!(k.step(&[Chop, Stay, Stay]).end_reasons[0], Some(MacroEnd::HandsFull));
    assert_eq!(k.state().chop[0], 0);
}

// ---- Get-Tomato (vegetable fetch) ----

pub fn get_vegetable_picks_it_up() {
    let mut k = kitchen(LayoutId::A);
    let (reason, _) = run_until_end(&mut k, [GetTomato, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().held(a(1)), Some(Item::Tomato));
}

pub fn get_vegetable_ends_when_target_held_by_teammate() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[1] = Pos::new(3, 2);
        s.items[Item::Tomato.index()] = Place::Held { agent: a(2) };
    });
    assert_eq!(k.step(&[GetTomato, Stay, Stay]).end_reasons[0], Some(MacroEnd::TargetHeld));
}

pub fn get_vegetable_ends_when_hands_full() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Lettuce.index()] = Place::Held { agent: a(1) });
    assert_eq!(k.step(&[GetTomato, Stay, Stay]).end_reasons[0], Some(MacroEnd::HandsFull));
}

pub fn get_vegetable_ends_when_path_blocked() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[0] = Pos::new(3, 3);
        s.agents[1] = Pos::new(1, 1);
    });
    assert_eq!(k.step(&[GetOnion, Stay, Stay]).end_reasons[0], Some(MacroEnd::PathBlocked));
}

pub fn get_vegetable_ends_when_not_found() {
    let mut k = kitchen(LayoutId::A);
    // Tomato moved to board 2, outside agent 1's view; agent 1 still remembers the spawn.
    edit(&mut k, |s| s.items[Item::Tomato.index()] = cell(2, 6));
    assert_eq!(k.state().memory[0].items[0], Pos::new(0, 1));
    let (reason, _) = run_until_end(&mut k, [GetTomato, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::NotFound);
    assert_eq!(k.state().held(a(1)), None);
}

pub fn get_vegetable_checks_initial_cell_after_stale_memory() {
    let mut k = kitchen(LayoutId::A);
    // Agent 1 remembers the tomato on board 2 but it is back at its spawn.
    edit(&mut k, |s| {
        s.agents[0] = Pos::new(1, 1);
    });
    let mut s = k.state().clone();
    s.memory[0].items[0] = Pos::new(2, 6);
    s.agents[0] = Pos::new(5, 1);
    k.set_state(s);
    let (reason, _) = run_until_end(&mut k, [GetTomato, Stay, Stay], 1, 20);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().held(a(1)), Some(Item::Tomato));
}

pub fn get_vegetable_loses_contention_to_higher_priority() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[0] = Pos::new(2, 2);
        s.agents[1] = Pos::new(3, 1);
    });
    let out = k.step(&[Left, GetTomato, Stay]);
    assert_eq!(k.state().agents[0], Pos::new(2, 1));
    assert_eq!(out.end_reasons[1], Some(MacroEnd::LostPriority));
    assert_eq!(k.state().agents[1], Pos::new(3, 1));
}

// ---- Get-Plate ----

pub fn get_plate_picks_it_up() {
    let mut k = kitchen(LayoutId::A);
    let (reason, _) = run_until_end(&mut k, [Stay, GetPlate1, Stay], 2, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().held(a(2)), Some(Item::Plate1));
}

pub fn get_plate_ends_when_target_held_by_teammate() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Plate1.index()] = Place::Held { agent: a(3) });
    assert_eq!(k.step(&[Stay, Stay, GetPlate1]).end_reasons[2], Some(MacroEnd::HandsFull));
    edit(&mut k, |s| s.agents[2] = Pos::new(5, 3));
    assert_eq!(k.step(&[Stay, GetPlate1, Stay]).end_reasons[1], Some(MacroEnd::TargetHeld));
}

pub fn get_plate_ends_when_hands_full() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Plate2.index()] = Place::Held { agent: a(2) });
    assert_eq!(k.step(&[Stay, GetPlate1, Stay]).end_reasons[1], Some(MacroEnd::HandsFull));
}

pub fn get_plate_ends_when_path_blocked() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.agents[2] = Pos::new(3, 1));
    assert_eq!(k.step(&[Stay, GetPlate1, Stay]).end_reasons[1], Some(MacroEnd::PathBlocked));
}

pub fn get_plate_ends_when_not_found() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Plate1.index()] = cell(2, 6));
    let (reason, _) = run_until_end(&mut k, [Stay, GetPlate1, Stay], 2, 10);
    assert_eq!(reason, MacroEnd::NotFound);
}

pub fn get_plate_loses_contention_to_higher_priority() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.agents[1] = Pos::new(4, 2));
    let out = k.step(&[Down, GetPlate1, Stay]);
    assert_eq!(k.state().agents[0], Pos::new(3, 2));
    assert_eq!(out.end_reasons[1], Some(MacroEnd::LostPriority));
}

// ---- Go-Cut-Board ----

pub fn go_cut_board_places_item() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Tomato.index()] = Place::Held { agent: a(1) });
    let (reason, _) = run_until_end(&mut k, [GoCutBoard1, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().board_contents(k.layout(), 0), Some(Item::Tomato));
    assert_eq!(k.state().agents[0], Pos::new(1, 3));
}

pub fn go_cut_board_stops_next_to_teammate_using_it() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.agents[1] = Pos::new(1, 3));
    let (reason, _) = run_until_end(&mut k, [GoCutBoard1, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::TeammateAtTarget);
    assert_eq!(k.state().agents[0].manhattan(Pos::new(1, 3)), 1);
}

pub fn go_cut_board_loses_contention_to_higher_priority() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[0] = Pos::new(1, 5);
        s.agents[1] = Pos::new(2, 4);
    });
    let out = k.step(&[Left, GoCutBoard1, Stay]);
    assert_eq!(out.end_reasons[1], Some(MacroEnd::LostPriority));
}

// ---- Deliver ----

pub fn deliver_wrong_item_is_penalised_and_reset() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Tomato.index()] = Place::Held { agent: a(3) });
    let (reason, total) = run_until_end(&mut k, [Stay, Stay, Deliver], 3, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().items[Item::Tomato.index()], cell(0, 1));
    // one move tick (-0.1) then the delivery tick (-0.1 - 5)
    assert!((total - (-5.2)).abs() < 1e-9, "{total}");
}

pub fn deliver_correct_salad_finishes_episode() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.chop = [3, 3, 0];
        s.items[Item::Plate1.index()] = Place::Held { agent: a(3) };
        s.items[Item::Tomato.index()] = Place::OnPlate { plate: Item::Plate1 };
        s.items[Item::Lettuce.index()] = Place::OnPlate { plate: Item::Plate1 };
    });
    let out1 = k.step(&[Stay, Stay, Deliver]);
    assert!(!out1.done);
    let out2 = k.step(&[Stay, Stay, Deliver]);
    assert_eq!(out2.reward_tenths, 1999);
    assert!(out2.done);
    assert_eq!(out2.correct_deliveries, 1);
}

pub fn deliver_stops_next_to_teammate_at_star() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[1] = Pos::new(5, 5);
        s.agents[2] = Pos::new(3, 4);
    });
    let (reason, _) = run_until_end(&mut k, [Stay, Stay, Deliver], 3, 10);
    assert_eq!(reason, MacroEnd::TeammateAtTarget);
    assert_eq!(k.state().agents[2].manhattan(Pos::new(5, 5)), 1);
}

pub fn deliver_loses_contention_to_higher_priority() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[1] = Pos::new(5, 4);
        s.agents[2] = Pos::new(4, 5);
    });
    let out = k.step(&[Stay, Right, Deliver]);
    assert_eq!(k.state().agents[1], Pos::new(5, 5));
    assert_eq!(out.end_reasons[2], Some(MacroEnd::LostPriority));
}

// ---- Go-Counter (layout B) ----

pub fn go_counter_passes_items_across_the_partition() {
    let mut k = kitchen(LayoutId::B);
    edit(&mut k, |s| s.items[Item::Tomato.index()] = Place::Held { agent: a(1) });
    let (reason, _) = run_until_end(&mut k, [GoCounter, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().item_at(Pos::new(3, 3)), Some(Item::Tomato));
    let (reason, _) = run_until_end(&mut k, [Stay, GoCounter, Stay], 2, 10);
    assert_eq!(reason, MacroEnd::Completed);
    assert_eq!(k.state().held(a(2)), Some(Item::Tomato));
}

pub fn go_counter_outside_layout_b_ends_immediately() {
    let mut k = kitchen(LayoutId::A);
    assert_eq!(k.step(&[GoCounter, Stay, Stay]).end_reasons[0], Some(MacroEnd::Unreachable));
}

// ---- Plating ----

pub fn only_chopped_vegetables_go_on_plates() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.items[Item::Plate1.index()] = Place::Held { agent: a(1) };
        s.items[Item::Tomato.index()] = cell(0, 3);
        s.agents[0] = Pos::new(1, 3);
    });
    k.step(&[GoCutBoard1, Stay, Stay]);
    assert_eq!(k.state().items[Item::Tomato.index()], cell(0, 3));
    edit(&mut k, |s| s.chop[0] = 3);
    k.step(&[GoCutBoard1, Stay, Stay]);
    assert_eq!(k.state().items[Item::Tomato.index()], Place::OnPlate { plate: Item::Plate1 });
}

// ---- Observation ----

pub fn observation_reports_visible_tomato() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| {
        s.agents[0] = Pos::new(1, 1);
        s.chop[0] = 2;
    });
    let o = k.observe(a(1));
    assert_eq!(o.0.len(), OBS_LEN);
    assert_eq!(o[0], 0.0);
    assert_eq!(o[1], 1.0 / 6.0);
    assert_eq!(o[2], 2.0 / 3.0);
}

pub fn observation_keeps_initial_position_for_unseen_moves() {
    let mut k = kitchen(LayoutId::A);
    edit(&mut k, |s| s.items[Item::Tomato.index()] = cell(2, 6));
    // Agent 3 at (5,4) never saw the tomato move.
    let o = k.observe(a(3));
    assert_eq!((o[0], o[1]), (0.0, 1.0 / 6.0));
    // Agent 2 at (4,3) cannot see (2,6) either; agent 1 at (2,2) cannot.
    let o1 = k.observe(a(1));
    assert_eq!((o1[0], o1[1]), (0.0, 1.0 / 6.0));
}

pub fn observation_order_one_hot() {
    let k = kitchen(LayoutId::A);
    let o = k.observe(a(2));
    let order = &o.0[25..32];
    assert_eq!(order.iter().sum::<f64>(), 1.0);
    assert_eq!(order[Recipe::LettuceTomato.order_slot()], 1.0);
}

pub fn observation_agent_sees_itself() {
    let k = kitchen(LayoutId::A);
    for ag in AgentId::all() {
        let o = k.observe(ag);
        let p = k.state().agents[ag.index()];
        let base = 19 + 2 * ag.index();
        assert_eq!(o[base], p.row as f64 / 6.0);
        assert_eq!(o[base + 1], p.col as f64 / 6.0);
    }
}

pub fn max_abs_tick_reward() {
    assert_eq!(RewardSpec::default().max_abs_tick(), 230.0);
}

pub fn idle_primitive_ends_after_one_tick() {
    let mut k = kitchen(LayoutId::A);
    let out = k.step(&[Stay, Up, Stay]);
    assert_eq!(out.end_reasons[0], Some(MacroEnd::OneStep));
    assert_eq!(out.end_reasons[1], Some(MacroEnd::OneStep));
}

pub fn go_cut_board_with_empty_hands_arrives() {
    let mut k = kitchen(LayoutId::A);
    let (reason, _) = run_until_end(&mut k, [GoCutBoard1, Stay, Stay], 1, 10);
    assert_eq!(reason, MacroEnd::Arrived);
    assert_eq!(k.state().agents[0].manhattan(Pos::new(0, 3)), 1);
}

pub fn deliver_with_empty_hands_arrives() {
    let mut k = kitchen(LayoutId::A);
    let (reason, _) = run_until_end(&mut k, [Stay, Stay, Deliver], 3, 10);
    assert_eq!(reason, MacroEnd::Arrived);
}

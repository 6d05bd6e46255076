mod common;

use common::scenarios::ALL;

#[test]
fn every_scenario_passes() {
    for s in ALL {
        eprintln!("scenario {}", s.name);
        (s.run)();
    }
}

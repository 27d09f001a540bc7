mod common;

use common::{mp, mp_3x2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use replab::equilibrium::{maximal_support_equilibrium, EquilibriumReport};
use replab::game::StrategyProfile;
use replab::generator::{classify_3x2_faces, GeneratorReport};
use replab::io::{read_game, read_json, read_trajectory_csv, write_atomic, write_json, write_trajectory_csv, game_to_json};
use replab::measures::{corner_mass, occupation_histogram, regret_report, Axis, CornerMassReport, OccupationHistogram, RegretReport};
use replab::recipes::bundled_games;
use replab::sde::{simulate_sde, DiffusionSpec, NoiseMode, SdeConfig};

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(v: &T) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.json");
    write_json(&p, v).unwrap();
    let back: T = read_json(&p).unwrap();
    assert_eq!(&back, v);
}

#[test]
fn reports_round_trip() {
    let g = mp_3x2();
    let eq = maximal_support_equilibrium(&g).unwrap();
    round_trip::<EquilibriumReport>(&eq);
    round_trip::<EquilibriumReport>(&maximal_support_equilibrium(&mp()).unwrap());

    let spec = DiffusionSpec::uniform(3, 2, 0.2, 0.2).unwrap();
    round_trip::<GeneratorReport>(&classify_3x2_faces(&g, &spec).unwrap());

    let mspec = DiffusionSpec::reduced(0.3, 0.3).unwrap();
    let mut cfg = SdeConfig::new(StrategyProfile::barycenter(2, 2), 100.0, 4);
    cfg.noise = NoiseMode::Reduced;
    let t = simulate_sde(&mp(), &mspec, &cfg).unwrap();
    round_trip::<OccupationHistogram>(&occupation_histogram(&t, &[Axis::X(0), Axis::Y(0)], 25, 10.0).unwrap());
    round_trip::<CornerMassReport>(&corner_mass(&t, 0.1, 10.0).unwrap());
    round_trip::<RegretReport>(&regret_report(&mp(), &t, Some(&mspec)).unwrap());
}

#[test]
fn trajectory_and_games_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DiffusionSpec::uniform(3, 2, 0.5, 0.5).unwrap();
    let t = simulate_sde(&mp_3x2(), &spec, &SdeConfig::new(StrategyProfile::barycenter(3, 2), 20.0, 1)).unwrap();
    let p = dir.path().join("t.csv");
    write_trajectory_csv(&p, &t).unwrap();
    let back = read_trajectory_csv(&p).unwrap();
    assert_eq!(back.times(), t.times());
    for k in 0..t.len() {
        assert_eq!((back.x(k), back.y(k)), (t.x(k), t.y(k)));
    }

    for g in bundled_games() {
        let p = dir.path().join("g.json");
        write_atomic(&p, game_to_json(&g).as_bytes()).unwrap();
        assert_eq!(read_game(&p).unwrap(), g);
    }
}

#[test]
fn corrupted_reports_are_rejected() {
    let text = serde_json::to_string(&maximal_support_equilibrium(&mp()).unwrap()).unwrap();
    let bad_point = text.replacen("\"p\":[", "\"p\":[0.7,", 1);
    assert!(serde_json::from_str::<EquilibriumReport>(&bad_point).is_err());
    let bad_support = text.replacen("\"indices\":[1,2]", "\"indices\":[0,2]", 1);
    assert!(serde_json::from_str::<EquilibriumReport>(&bad_support).is_err());
}

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sevlogit::data::{load_dataset, ChoiceDataset, CodingSchema};
use sevlogit::model::{parse_model_spec, validate_spec, ModelSpec};

const ALTS: &str = r#"{"names": ["minor", "serious", "fatal"], "base": "minor"}"#;

fn term(name: &str, alt: &str, random: bool) -> String {
    let kind = if random { "random" } else { "fixed" };
    format!(r#"{{"name": "{name}", "alternative": "{alt}", "kind": "{kind}"}}"#)
}

fn build(terms: &[String], shifters: &[(&str, &str)], block: &[&str]) -> ModelSpec {
    let shifters: Vec<String> = shifters
        .iter()
        .map(|(t, v)| format!(r#"{{"term": "{t}", "variable": "{v}"}}"#))
        .collect();
    let block: Vec<String> = block.iter().map(|b| format!("\"{b}\"")).collect();
    let text = format!(
        r#"{{"alternatives": {ALTS}, "terms": [{}], "mean_shifters": [{}], "correlated_block": [{}]}}"#,
        terms.join(","),
        shifters.join(","),
        block.join(",")
    );
    parse_model_spec(&text).unwrap()
}

/// Front-vehicle occupant model: 31 utility terms of which 5 are random,
/// 6 mean shifters, and 3 correlated random terms.
fn front_vehicle() -> ModelSpec {
    let mut terms = vec![
        r#"{"name": "asc", "variable": "CONSTANT", "alternatives": ["serious", "fatal"]}"#.to_string(),
    ];
    let fixed = [
        ("safety_belt", "serious"), ("safety_belt", "fatal"), ("driver_position", "serious"),
        ("driver_position", "fatal"), ("stopped", "serious"), ("slower", "fatal"),
        ("decelerating", "serious"), ("asphalt", "serious"), ("asphalt", "fatal"),
        ("wet_surface", "fatal"), ("weekend", "serious"), ("front_older_driver", "fatal"),
        ("front_male_driver", "fatal"), ("front_overturn", "serious"), ("front_disable_damage", "serious"),
        ("front_disable_damage", "fatal"), ("rear_young_driver", "serious"), ("rear_older_driver", "fatal"),
        ("rear_male_driver", "fatal"), ("rear_distracted", "serious"), ("rear_pickup", "fatal"),
        ("rear_suv", "fatal"), ("rear_overturn", "fatal"), ("rear_disable_damage", "serious"),
    ];
    for (v, a) in fixed {
        terms.push(format!(r#"{{"name": "{v}:{a}", "variable": "{v}", "alternative": "{a}"}}"#));
    }
    for (v, a) in [
        ("front_right", "serious"),
        ("decelerating", "fatal"),
        ("lighted", "fatal"),
        ("rear_large_truck", "fatal"),
        ("front_young_driver", "fatal"),
    ] {
        terms.push(term(v, a, true));
    }
    build(
        &terms,
        &[
            ("lighted", "rear_young_driver"),
            ("lighted", "adverse_weather"),
            ("rear_large_truck", "adverse_weather"),
            ("front_right", "safety_belt"),
            ("decelerating", "dark"),
            ("front_young_driver", "weekend"),
        ],
        &["decelerating", "rear_large_truck", "lighted"],
    )
}

/// Rear-vehicle occupant model: 20 utility terms of which 3 are random,
/// 2 mean shifters, no correlated block.
fn rear_vehicle() -> ModelSpec {
    let mut terms = vec![
        r#"{"name": "asc", "variable": "CONSTANT", "alternatives": ["serious", "fatal"]}"#.to_string(),
    ];
    let fixed = [
        ("safety_belt", "serious"), ("safety_belt", "fatal"), ("driver_position", "fatal"),
        ("front_right", "fatal"), ("slower", "fatal"), ("front_van", "fatal"), ("front_suv", "fatal"),
        ("front_pickup", "fatal"), ("front_overturn", "fatal"), ("rear_overturn", "fatal"),
        ("front_disable_damage", "fatal"), ("rear_disable_damage", "serious"), ("rear_older_driver", "fatal"),
        ("front_male_driver", "serious"), ("dark", "fatal"),
    ];
    for (v, a) in fixed {
        terms.push(format!(r#"{{"name": "{v}:{a}", "variable": "{v}", "alternative": "{a}"}}"#));
    }
    for (v, a) in [("front_young_driver", "fatal"), ("front_large_truck", "serious"), ("lighted", "fatal")] {
        terms.push(term(v, a, true));
    }
    build(
        &terms,
        &[("front_large_truck", "rear_young_driver"), ("lighted", "rear_young_driver")],
        &[],
    )
}

fn without_block(spec: &ModelSpec) -> ModelSpec {
    let mut s = spec.clone();
    s.correlated_block.clear();
    s
}

#[test]
fn front_vehicle_ladder_counts() {
    let crplhm = front_vehicle();
    assert_eq!(crplhm.terms.len(), 31);
    assert_eq!(crplhm.layout().len(), 45);
    assert_eq!(without_block(&crplhm).layout().len(), 42);
    assert_eq!(crplhm.as_uncorrelated_without_shifters().layout().len(), 36);
}

#[test]
fn rear_vehicle_ladder_counts() {
    let rplhm = rear_vehicle();
    assert_eq!(rplhm.terms.len(), 20);
    assert_eq!(rplhm.layout().len(), 25);
    assert_eq!(rplhm.as_uncorrelated_without_shifters().layout().len(), 23);
}

const LEVELS: &[(&str, &[&str])] = &[
    ("safety_belt", &["yes", "no"]),
    ("seat_position", &["driver", "front_right", "second"]),
    ("collision_cause", &["stopped", "slower", "decelerating", "other"]),
    ("light_condition", &["lighted", "dark", "daylight"]),
    ("surface_type", &["concrete", "asphalt", "others"]),
    ("road_condition", &["wet", "dry"]),
    ("weather", &["adverse", "clear"]),
    ("weekend", &["yes", "no"]),
    ("front_driver_age", &["young", "middle", "older"]),
    ("front_driver_sex", &["male", "female"]),
    ("front_vehicle_type", &["passenger_car"]),
    ("front_overturn", &["yes", "no"]),
    ("front_disable_damage", &["yes", "no"]),
    ("rear_driver_age", &["young", "middle", "older"]),
    ("rear_driver_sex", &["male", "female"]),
    ("rear_distracted", &["yes", "no"]),
    ("rear_vehicle_type", &["passenger_car", "pickup", "van", "suv", "large_truck"]),
    ("rear_overturn", &["yes", "no"]),
    ("rear_disable_damage", &["yes", "no"]),
];

fn raw_front_vehicle_file(n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(1078);
    let mut out = String::from("crash_id,occupant_id,severity");
    for (c, _) in LEVELS {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    let labels = ["fatal injury", "suspected serious injury", "possible injury", "K", "A", "O"];
    for i in 0..n {
        write!(out, "{},{},{}", i / 2, i, labels[rng.random_range(0..labels.len())]).unwrap();
        for (_, levels) in LEVELS {
            write!(out, ",{}", levels[rng.random_range(0..levels.len())]).unwrap();
        }
        out.push('\n');
    }
    out
}

#[test]
fn raw_front_vehicle_file_codes_to_schema_width() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fv.csv");
    std::fs::write(&path, raw_front_vehicle_file(1078)).unwrap();
    let schema = CodingSchema::rear_end_default();
    let (data, report): (ChoiceDataset<f64>, _) = load_dataset(&path, &schema).unwrap();
    assert_eq!(data.len(), 1078);
    assert_eq!(report.dropped, 0);
    assert_eq!(data.variable_names().len(), 32);
    assert_eq!(data.variable_names(), schema.dummy_names().as_slice());
    for o in data.observations() {
        assert!(o.x.iter().all(|v| *v == 0.0 || *v == 1.0));
        for (k, var) in schema.variables.iter().enumerate() {
            let set: f64 = var.levels.iter().map(|l| o.x[data.variable_index(&l.dummy).unwrap()]).sum();
            assert!(set <= 1.0);
            assert!(schema.decode(k, &o.x).is_some());
        }
    }

    let report = validate_spec(&front_vehicle(), &data);
    assert!(report.is_ok() && report.issues.is_empty(), "{:?}", report.issues);
    // Every front vehicle is a passenger car here, so the rear-vehicle
    // model's front vehicle types have no variance.
    let report = validate_spec(&rear_vehicle(), &data);
    assert!(report.is_ok());
    assert_eq!(report.warnings().count(), 4);
}

use std::collections::BTreeMap;
use std::time::Instant;

use biham_core::catalog::{instantiate, Printed};
use biham_core::expr::parse;
use biham_core::poisson::NambuStructure;
use biham_core::vecfield::{scalar, Frame, ScalarField};
use biham_core::verify::{compare_printed, verify_fundamental_identity, verify_structure, SampleConfig};

const TRANSFORMED: [&str; 6] = ["lu-transformed", "modified-lu", "t-system", "chen", "chen-variant", "qi"];
const CHECKS: [&str; 8] =
    ["jacobi", "compatibility", "pencil", "casimir", "multiplier", "bi-hamiltonian", "nambu", "orthogonality"];

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn catalog_structures_hold() {
    let start = Instant::now();
    for name in TRANSFORMED {
        let def = instantiate(name, &BTreeMap::new()).unwrap();
        let rep = verify_structure(&def, &SampleConfig::default()).unwrap();
        let names: Vec<&str> = rep.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, CHECKS, "{name}");
        for c in &rep.checks {
            assert_eq!(c.n, 1000);
            assert!(c.pass && c.max_rel < 1e-12, "{name} {}: {:e}", c.name, c.max_rel);
        }
        assert_eq!(rep.orientation, Some(-1), "{name}");
    }
    eprintln!("structure suite: {:?}", start.elapsed());
}

#[test]
fn qi_poisson_vector_matches_print() {
    let def = instantiate("qi", &params(&[("gamma", 2.0)])).unwrap();
    let j1 = def.j1().unwrap().simplify();
    let expected = ["4*u", "-2*v", "-6*w"].map(|s| parse(s).unwrap());
    for i in 0..3 {
        let got = j1.components[i].substitute("gamma", &biham_core::Expr::int(2));
        assert!((&got - &expected[i]).simplify().is_zero(), "{got}");
    }
    let d = compare_printed(&def, &SampleConfig::default().with_n(100)).unwrap();
    for x in d.iter().filter(|x| x.formula.starts_with("j")) {
        assert!(x.matches, "{}", x.formula);
    }
}

#[test]
fn lu_original_fails_multiplier_and_skips_hamiltonian_checks() {
    let def = instantiate("lu-original", &params(&[("alpha", 1.0), ("beta", 1.0), ("gamma", 1.0)])).unwrap();
    let rep = verify_structure(&def, &SampleConfig::default().with_n(100)).unwrap();
    assert_eq!(rep.checks.len(), 1);
    assert!(!rep.check("multiplier").unwrap().pass);
    assert!(!rep.pass());
    assert!(rep.notes.iter().any(|n| n.starts_with("bi-hamiltonian: skipped")));

    let balanced = instantiate("lu-original", &params(&[("alpha", 1.0), ("beta", 1.0), ("gamma", 2.0)])).unwrap();
    let rep = verify_structure(&balanced, &SampleConfig::default().with_n(100)).unwrap();
    assert!(rep.check("multiplier").unwrap().pass);
}

#[test]
fn every_single_sign_flip_is_caught() {
    let watched = ["multiplier", "bi-hamiltonian", "orthogonality"];
    let s = SampleConfig::default().with_n(50);
    for name in TRANSFORMED {
        let def = instantiate(name, &BTreeMap::new()).unwrap();
        for comp in 0..3 {
            for term in 0.. {
                let Some(m) = def.with_flipped_sign(comp, term) else { break };
                let rep = verify_structure(&m, &s).unwrap();
                let failed = watched.iter().any(|w| !rep.check(w).unwrap().pass);
                assert!(failed, "{name} component {comp} term {term}");
            }
        }
    }
}

#[test]
fn documented_print_slips_are_reported() {
    let s = SampleConfig::default().with_n(200);
    let find = |name: &str, p: &[(&str, f64)], formula: &str| {
        let def = instantiate(name, &params(p)).unwrap();
        compare_printed(&def, &s).unwrap().into_iter().find(|d| d.formula == formula).unwrap()
    };
    let lu = find("lu-transformed", &[], "field[3]");
    assert!(!lu.matches && lu.max_dev > 0.1);
    assert!(find("lu-transformed", &[], "field[1]").matches);
    assert!(!find("t-system", &[], "j2[1]").matches);
    assert!(find("t-system", &[], "j2[2]").matches);
    assert!(find("qi", &[], "j2[1] against gradient of printed h2").matches);
    assert!(find("chen", &[("alpha", 1.0)], "field[2]").matches);
    assert!(!find("chen", &[("alpha", 2.0)], "field[2]").matches);
    assert_eq!(find("chen", &[("alpha", 2.0)], "field[2]").at.len(), 4);
}

#[test]
fn printed_entries_all_compared() {
    let def = instantiate("modified-lu", &BTreeMap::new()).unwrap();
    let d = compare_printed(&def, &SampleConfig::default().with_n(20)).unwrap();
    let expected: usize = def
        .printed
        .values()
        .map(|p| match p {
            Printed::Scalar(_) => 1,
            Printed::Vector(_) => 3,
        })
        .sum();
    assert!(d.len() >= expected);
}

#[test]
fn fundamental_identity_on_random_polynomials() {
    let s = SampleConfig::default().with_n(100);
    let unit = NambuStructure::unit(Frame::uvw());
    let r = verify_fundamental_identity(&unit, &s).unwrap();
    assert!(r.pass && r.max_rel < 1e-8, "{r:?}");
    assert_eq!(r.n, 500);

    let decaying = NambuStructure::new(scalar(parse("exp(-t)").unwrap())).unwrap();
    let r = verify_fundamental_identity(&decaying, &s).unwrap();
    assert!(r.pass && r.max_rel < 1e-8, "{r:?}");
}

#[test]
fn fundamental_identity_vanishes_on_constants() {
    use biham_core::poisson::fundamental_identity_terms;
    let c: Vec<ScalarField> =
        ["3", "-1", "2", "1/2", "5"].iter().map(|e| ScalarField::new(parse(e).unwrap(), Frame::uvw())).collect();
    let r = fundamental_identity_terms(&c[0], &c[1], [&c[2], &c[3], &c[4]], &NambuStructure::unit(Frame::uvw()));
    assert!(r.unwrap().is_symbolically_zero());
}

#[test]
fn reports_are_deterministic() {
    let def = instantiate("t-system", &BTreeMap::new()).unwrap();
    let s = SampleConfig::default().with_n(200).with_seed(7);
    let a = verify_structure(&def, &s).unwrap().to_json(None);
    let b = verify_structure(&def, &s).unwrap().to_json(None);
    assert_eq!(a, b);
    let c = verify_structure(&def, &s.clone().with_seed(8)).unwrap().to_json(None);
    assert_ne!(a, c);
}

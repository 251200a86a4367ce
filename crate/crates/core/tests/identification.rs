//! Identification of individual direct effects on a fixed suite of models.

use idenet_core::error::ReasonError;
use idenet_core::ground::{build_ground_graph, Instance, Skeleton};
use idenet_core::nagg::{build_nagg, find_ide_adjustment, AdjustmentResult, FailureCase, Nagg};
use idenet_core::schema::{AttributeDecl, ItemClass, Nscm, RelationalVariable, Schema};

use ItemClass::{Entity as E, Relationship as R};

fn schema() -> Schema {
    Schema::new(
        "U",
        "F",
        vec![
            AttributeDecl::new("Dem", E),
            AttributeDecl::new("Aff", E).binary(),
            AttributeDecl::new("St", E),
            AttributeDecl::new("L", E).latent(),
            AttributeDecl::new("L2", E).latent(),
            AttributeDecl::new("M", E).latent(),
            AttributeDecl::new("StL", E).latent(),
            AttributeDecl::existence("Ex"),
            AttributeDecl::new("Dur", R),
            AttributeDecl::new("Q", R).latent(),
        ],
    )
    .unwrap()
}

const BASE: [&str; 6] = [
    "[F,U].Dem -> [F].Ex",
    "[U].Dem -> [U].Aff",
    "[U].Dem -> [U].St",
    "[U].Aff -> [U].St",
    "[U,F,U].Aff -> [U].St",
    "[U,F].Ex -> [U].St",
];

fn model(extra: &[&str]) -> Nscm {
    let deps: Vec<&str> = BASE.iter().chain(extra).copied().collect();
    Nscm::parse(schema(), &deps).unwrap()
}

fn query(g: &Nagg) -> (RelationalVariable, RelationalVariable) {
    (g.parse_variable("[U].Aff").unwrap(), g.parse_variable("[U].St").unwrap())
}

fn identify(m: &Nscm) -> AdjustmentResult {
    let g = build_nagg(m, E).unwrap();
    let (x, y) = query(&g);
    let res = find_ide_adjustment(&g, &x, &y).unwrap();
    assert_eq!(res.identifiable, ground_identifiable(m, &g), "ground graphs disagree");
    res
}

/// Backdoor test on explicit ground graphs: the maximal set, instantiated at
/// entity 0, must separate its treatment and outcome in the graph without the
/// treatment's outgoing arcs, on every skeleton of 3 to 5 entities.
fn ground_identifiable(m: &Nscm, g: &Nagg) -> bool {
    let (x, y) = query(g);
    let w = g.maximal_adjustment_set(&x, &y);
    (3..=5).all(|n| {
        let sk = Skeleton::complete(n);
        let gg = build_ground_graph(m, &sk);
        let base = Instance::Entity(0);
        let xi = gg.index_of(&(base, "Aff".to_string())).unwrap();
        let yi = gg.index_of(&(base, "St".to_string())).unwrap();
        let z: Vec<usize> = w
            .iter()
            .flat_map(|v| sk.terminal_set(base, &v.path).into_iter().map(move |i| (i, v.attribute.clone())))
            .map(|gv| gg.index_of(&gv).unwrap())
            .collect();
        gg.dag().without_outgoing(&[xi]).d_separated(&[xi], &[yi], &z)
    })
}

fn names(g: &Nagg, vs: &[RelationalVariable]) -> Vec<String> {
    let mut out: Vec<String> = vs.iter().map(|v| g.name(v)).collect();
    out.sort();
    out
}

#[test]
fn fully_observed_model_uses_the_maximal_set() {
    let m = model(&["[U,F,U].Dem -> [U].Aff", "[U,F].Dur -> [U].St", "[U,F,U].StL -> [U].St"]);
    let g = build_nagg(&m, E).unwrap();
    let ex = g.parse_variable("[U,F].Ex").unwrap();
    assert!(g.has_arc(&ex, &g.parse_variable("[U].St").unwrap()));
    let res = identify(&m);
    assert!(res.identifiable);
    assert_eq!(res.failure_case, None);
    let mut expected: Vec<String> =
        ["[U,F,U].Aff", "[U].Dem", "[U,F].Ex", "[U,F,U].Dem", "[U,F,U,F].Ex", "[U,F].Dur", "[U,F,U,F].Dur"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    expected.sort();
    assert_eq!(names(&g, &res.adjustment_set), expected);
}

#[test]
fn labelled_fixture_suite() {
    // (name, extra dependencies, expected label; None means identifiable)
    let fixtures: Vec<(&str, Vec<&str>, Option<FailureCase>)> = vec![
        ("treatment only", vec![], None),
        (
            "exogenous latents on the outcome",
            vec!["[U].L -> [U].St", "[U,F,U].L2 -> [U].St", "[U,F,U].StL -> [U].St"],
            None,
        ),
        ("ego latent confounder", vec!["[U].L -> [U].Aff", "[U].L -> [U].St"], Some(FailureCase::CaseI)),
        (
            "ego latent through a latent mediator",
            vec!["[U].L -> [U].Aff", "[U].L -> [U].M", "[U].M -> [U].St"],
            Some(FailureCase::CaseI),
        ),
        ("latent relationship attribute", vec!["[U,F].Q -> [U].Aff", "[U,F].Q -> [U].St"], Some(FailureCase::CaseI)),
        ("peer latent confounder", vec!["[U,F,U].L -> [U].Aff", "[U,F,U].L -> [U].St"], Some(FailureCase::CaseI)),
        (
            "ego latent reaching the lagged peer outcome",
            vec!["[U].L -> [U].Aff", "[U,F,U].L -> [U].StL", "[U,F,U].StL -> [U].St"],
            Some(FailureCase::CaseIII),
        ),
        (
            "peer latent reaching the lagged peer outcome",
            vec!["[U,F,U].L -> [U].Aff", "[U].L -> [U].StL", "[U,F,U].StL -> [U].St"],
            Some(FailureCase::CaseIII),
        ),
        (
            "background collider",
            vec!["[U].L -> [U].Aff", "[U].L -> [U].Dem", "[U].L2 -> [U].Dem", "[U].L2 -> [U].St"],
            Some(FailureCase::CaseII),
        ),
        (
            "peer treatment collider",
            vec!["[U,F,U].L -> [U].Aff", "[U].L2 -> [U].Aff", "[U,F,U].L2 -> [U].St"],
            Some(FailureCase::CaseII),
        ),
        (
            "existence collider",
            vec!["[U].L -> [U].Aff", "[F,U].L -> [F].Ex", "[F,U].L2 -> [F].Ex", "[U].L2 -> [U].St"],
            Some(FailureCase::CaseII),
        ),
        ("latent on the peer outcome only", vec!["[U,F,U].L -> [U].StL", "[U,F,U].StL -> [U].St"], None),
    ];
    assert!(fixtures.len() >= 10);
    for (name, extra, expected) in fixtures {
        let m = model(&extra);
        let res = identify(&m);
        assert_eq!(res.identifiable, expected.is_none(), "{name}");
        assert_eq!(res.failure_case, expected, "{name}: witness {:?}", res.witness);
        if expected.is_some() {
            assert!(res.adjustment_set.is_empty(), "{name}");
            assert!(res.witness.len() >= 3, "{name}");
        }
    }
}

#[test]
fn background_descendants_violate_the_assumption() {
    for extra in [["[F,U].Aff -> [F].Dur"], ["[U].St -> [U].Dem"], ["[F,U].St -> [F].Dur"]] {
        let deps: Vec<&str> = ["[U].Aff -> [U].St"].iter().chain(&extra).copied().collect();
        let m = Nscm::parse(schema(), &deps).unwrap();
        let g = build_nagg(&m, E).unwrap();
        let (x, y) = query(&g);
        assert!(matches!(find_ide_adjustment(&g, &x, &y), Err(ReasonError::AssumptionViolated(_))), "{extra:?}");
    }
}

#[test]
fn user_sets_cannot_include_peer_outcomes() {
    let m = model(&[]);
    let g = build_nagg(&m, E).unwrap();
    let (x, y) = query(&g);
    let mut z = g.maximal_adjustment_set(&x, &y);
    assert!(g.check_adjustment_set(&x, &y, &z).unwrap().identifiable);
    z.push(g.parse_variable("[U,F,U].St").unwrap());
    assert_eq!(g.check_adjustment_set(&x, &y, &z), Err(ReasonError::PeerOutcomeConditioned("[U,F,U].St".to_string())));
}

#[test]
fn queries_must_be_canonical_entity_attributes() {
    let m = model(&[]);
    let g = build_nagg(&m, E).unwrap();
    let y = g.parse_variable("[U].St").unwrap();
    let peer = g.parse_variable("[U,F,U].Aff").unwrap();
    assert!(matches!(find_ide_adjustment(&g, &peer, &y), Err(ReasonError::InvalidQuery(_))));
    let rel = build_nagg(&m, R).unwrap();
    let fx = rel.parse_variable("[F,U].Aff").unwrap();
    let fy = rel.parse_variable("[F,U].St").unwrap();
    assert!(matches!(find_ide_adjustment(&rel, &fx, &fy), Err(ReasonError::InvalidQuery(_))));
}

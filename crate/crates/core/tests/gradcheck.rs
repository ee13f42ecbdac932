use canet_core::gradcheck::*;
use canet_core::{rng_from_seed, Error, Tensor};

fn square_case(seed: u64, factor: f64) -> canet_core::Result<GradCase> {
    let x = Tensor::uniform(&[3, 4], -1.0, 1.0, &mut rng_from_seed(seed));
    Ok(GradCase {
        inputs: vec![CheckInput { name: "x".into(), value: x, coords: Coords::All }],
        forward: Box::new(move |t, v| {
            let sq = t.value(v[0]).map(|a| a * a);
            Ok(t.custom(&[v[0]], sq, Box::new(move |ins, _, g| {
                let d = g.data().iter().zip(ins[0].data()).map(|(g, a)| g * factor * a).collect();
                vec![Tensor::from_vec(g.shape(), d).unwrap()]
            })))
        }),
    })
}

fn honest(seed: u64) -> canet_core::Result<GradCase> {
    square_case(seed, 2.0)
}

fn corrupted(seed: u64) -> canet_core::Result<GradCase> {
    square_case(seed, 2.0 * (1.0 + 1e-3))
}

#[test]
fn custom_backward_is_validated() {
    let cfg = CheckConfig::default();
    let ok = check_case(&CaseSpec { name: "square", kind: CaseKind::Primitive, make: honest }, &cfg).unwrap();
    assert!(ok.passed && ok.worst < 1e-9, "{ok:?}");
    assert_eq!(ok.checked, 12 * 20);
    let bad = check_case(&CaseSpec { name: "square_bad", kind: CaseKind::Primitive, make: corrupted }, &cfg).unwrap();
    assert!(!bad.passed);
    assert!((bad.worst - 1e-3 / 1.001).abs() < 1e-6, "{}", bad.worst);
}

#[test]
fn every_primitive_passes() {
    let cfg = CheckConfig::default();
    for r in run_suite(&primitives(), &cfg).unwrap() {
        assert!(r.passed, "{r:?}");
        assert_eq!(r.seeds, 20);
        assert!(r.unchecked.is_empty() && r.checked > 0);
        assert!(r.skipped as f64 <= cfg.max_skip_fraction * (r.checked + r.skipped) as f64);
    }
}

#[test]
fn fusion_variants_pass() {
    let cases: Vec<_> = composites().into_iter().filter(|c| c.name.starts_with("fca_")).collect();
    assert_eq!(cases.len(), 6);
    for r in run_suite(&cases, &CheckConfig::default()).unwrap() {
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn five_point_beats_three_point_on_smooth_ops() {
    let spec = find("sigmoid").unwrap();
    let three = CheckConfig { stencil: Stencil::ThreePoint, seeds: 5, ..CheckConfig::default() };
    let five = CheckConfig { seeds: 5, ..CheckConfig::default() };
    let (a, b) = (check_case(&spec, &three).unwrap(), check_case(&spec, &five).unwrap());
    assert!(a.passed && b.passed);
    assert!(b.worst < a.worst);
}

#[test]
fn registry_lookup() {
    assert_eq!(composites().len(), 10);
    assert!(composites().iter().all(|c| c.kind == CaseKind::Composite));
    assert!(find("canet_train").is_ok());
    assert!(matches!(find("no_such_op"), Err(Error::Config(_))));
    assert_eq!(Stencil::FivePoint.name(), "5-point");
}

#[test]
fn relative_error_is_symmetric_and_floored() {
    assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
    assert_eq!(relative_error(2.0, 1.0, 1e-6), relative_error(1.0, 2.0, 1e-6));
    assert_eq!(relative_error(1e-9, 0.0, 1e-6), 1e-3);
}

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use heatbound::fields::{
    condition_report, lie_bracket, ricci_proxy, CallbackFields, FieldConfig, FiniteDifferenceFields, PluginRegistry,
    SampleDomain, ValueOnly, VectorFieldSpec,
};
use heatbound::flow::{simulate_flow, FlowConfig};

/// `A₁ = (1, sin x)`, `A₂ = (0, cos x)` on R², with analytic derivatives.
fn trig_fields() -> CallbackFields {
    CallbackFields::new(
        2,
        2,
        |a, x| match a {
            0 => DVector::zeros(2),
            1 => DVector::from_column_slice(&[1.0, x[0].sin()]),
            _ => DVector::from_column_slice(&[0.0, x[0].cos()]),
        },
        |a, x| {
            let mut j = DMatrix::zeros(2, 2);
            match a {
                1 => j[(1, 0)] = x[0].cos(),
                2 => j[(1, 0)] = -x[0].sin(),
                _ => {}
            }
            Some(j)
        },
        |a, x| {
            let mut h = vec![DMatrix::zeros(2, 2); 2];
            match a {
                1 => h[1][(0, 0)] = -x[0].sin(),
                2 => h[1][(0, 0)] = -x[0].cos(),
                _ => {}
            }
            Some(h)
        },
    )
}

#[test]
fn analytic_and_finite_difference_brackets_agree() {
    let exact = trig_fields();
    let fd = FiniteDifferenceFields::new(ValueOnly(trig_fields()), 1.0);
    for x in [[0.3, -1.0], [1.7, 0.2], [-2.5, 3.0]] {
        for b in 0..=2 {
            for a in 0..=2 {
                let d = lie_bracket(&exact, b, a, &x).unwrap() - lie_bracket(&fd, b, a, &x).unwrap();
                assert!(d.amax() < 1e-8, "bracket ({b},{a}) at {x:?}: {}", d.amax());
            }
        }
        for a in 1..=2 {
            let d = ricci_proxy(&exact, a, &x).unwrap() - ricci_proxy(&fd, a, &x).unwrap();
            assert!(d.amax() < 1e-6, "ricci {a}: {}", d.amax());
        }
        // [A₁, A₂] = ∂ₓA₂ = −sin x ∂y
        let br = lie_bracket(&exact, 1, 2, &x).unwrap();
        assert!(br[0].abs() < 1e-15 && (br[1] + x[0].sin()).abs() < 1e-15);
    }
}

#[test]
fn plugin_family_runs_through_conditions_and_flow() {
    let mut registry = PluginRegistry::default();
    registry.register("trig", Arc::new(trig_fields()));
    let spec = FieldConfig::from_json(r#"{"family": "plugin", "name": "trig"}"#).unwrap().build(&registry).unwrap();
    assert_eq!((spec.dim(), spec.n_fields()), (2, 2));
    // the frame spans R² while cos x ≠ 0, so both constants are finite
    let r = condition_report(spec.as_ref(), &SampleDomain::cube(2, 1.0), 32, 4).unwrap();
    assert!(r.c1_holds && r.c2_holds);
    assert!(r.frobenius_residual < 1e-12);
    let ens = simulate_flow(spec.as_ref(), &FlowConfig::new(0.5, 1e-2, 8, 1, vec![0.0, 0.0])).unwrap();
    assert_eq!(ens.excluded, 0);
    assert!(FieldConfig::from_json(r#"{"family": "plugin", "name": "missing"}"#).unwrap().build(&registry).is_err());
}

#[test]
fn linear_config_matches_hand_built_family() {
    let cfg = FieldConfig::from_json(
        r#"{"family": "linear",
            "drift": {"matrix": [[0.0, 1.0], [-1.0, 0.0]]},
            "fields": [{"matrix": [[0.0, 0.0], [0.0, 0.0]], "offset": [1.0, 0.0]},
                       {"matrix": [[1.0, 0.0], [0.0, 0.0]], "offset": [0.0, 1.0]}]}"#,
    )
    .unwrap();
    let spec = cfg.build(&PluginRegistry::default()).unwrap();
    let x = [0.4, -0.7];
    // [A₁, A₂] = M₂A₁ − M₁A₂ = (1, 0)
    let br = lie_bracket(spec.as_ref(), 1, 2, &x).unwrap();
    assert_eq!(br.as_slice(), &[1.0, 0.0]);
    let drift = spec.value(0, &x).unwrap();
    assert_eq!(drift.as_slice(), &[-0.7, -0.4]);
}

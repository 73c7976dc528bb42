//! Property tests for the cross-cutting invariants: marginal consistency
//! under projection, exact mass preservation, and the row-duplication /
//! weight-scaling invariance of the conditional-probability metrics.

use std::sync::Arc;

use fairsynth::metrics::{aod, cod, spd, ProtectedSpec};
use fairsynth::tabular::{
    compute_marginal, marginal_of_joint, Attribute, Dataset, JointDistribution, MarginalSpec,
    Role, Schema,
};
use proptest::prelude::*;

fn schema() -> Arc<Schema> {
    Arc::new(
        Schema::new(vec![
            Attribute::new("g", vec!["u".into(), "p".into()], Role::Protected),
            Attribute::new("x", vec!["a".into(), "b".into(), "c".into()], Role::Feature),
            Attribute::new("z", vec!["l".into(), "h".into()], Role::Feature),
            Attribute::new("y", vec!["n".into(), "f".into()], Role::Outcome),
        ])
        .unwrap(),
    )
}

prop_compose! {
    fn arb_dataset()(rows in prop::collection::vec((0u16..2, 0u16..3, 0u16..2, 0u16..2), 1..120),
                     weights in prop::option::of(prop::collection::vec(0.0f64..5.0, 120)))
        -> Dataset
    {
        let schema = schema();
        let n = rows.len();
        let rows: Vec<Vec<u16>> = rows.into_iter().map(|(a, b, c, d)| vec![a, b, c, d]).collect();
        let d = Dataset::new(schema, rows).unwrap();
        match weights {
            Some(w) => d.with_weights(w[..n].to_vec()).unwrap(),
            None => d,
        }
    }
}

proptest! {
    /// A marginal over a subset equals the projection of any superset marginal.
    #[test]
    fn marginal_consistency(d in arb_dataset(), bits in 1u8..15) {
        let sub_attrs: Vec<usize> = (0..4).filter(|i| bits & (1 << i) != 0).collect();
        prop_assume!(!sub_attrs.is_empty());
        let sub = MarginalSpec::new(sub_attrs).unwrap();
        let full = MarginalSpec::new(vec![0, 1, 2, 3]).unwrap();
        let direct = compute_marginal(&d, &sub).unwrap();
        let projected = compute_marginal(&d, &full).unwrap().project(d.schema(), &sub).unwrap();
        for (a, b) in direct.counts.iter().zip(&projected.counts) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    /// Joint marginals preserve total mass exactly.
    #[test]
    fn joint_marginal_mass(masses in prop::collection::vec(0.01f64..10.0, 24), bits in 1u8..15) {
        let schema = schema();
        let p = JointDistribution::from_masses(schema, masses).unwrap();
        let attrs: Vec<usize> = (0..4).filter(|i| bits & (1 << i) != 0).collect();
        prop_assume!(!attrs.is_empty());
        let m = marginal_of_joint(&p, &MarginalSpec::new(attrs).unwrap()).unwrap();
        prop_assert!((m.total() - 1.0).abs() < 1e-12);
    }

    /// Conditional-probability metrics are invariant to row duplication and
    /// uniform weight scaling.
    #[test]
    fn metric_invariances(d in arb_dataset(), dup in 2usize..4, scale in 0.1f64..10.0) {
        let spec = ProtectedSpec::new(&d, &["g"]).unwrap();
        let preds: Vec<bool> = d.rows().map(|r| r[1] != 1).collect();
        let base = (cod(&d, &spec), spd(&d, &preds, &spec), aod(&d, &preds, &spec));
        prop_assume!(base.0.is_ok() && base.1.is_ok() && base.2.is_ok());
        let base = (base.0.unwrap(), base.1.unwrap(), base.2.unwrap());

        let mut rows = Vec::new();
        let mut weights = Vec::new();
        let mut preds_dup = Vec::new();
        for _ in 0..dup {
            rows.extend(d.rows().map(|r| r.to_vec()));
            weights.extend((0..d.n_rows()).map(|i| d.weight(i)));
            preds_dup.extend(preds.iter().cloned());
        }
        let dupd = Dataset::new(d.schema().clone(), rows).unwrap().with_weights(weights).unwrap();
        prop_assert!((cod(&dupd, &spec).unwrap() - base.0).abs() < 1e-12);
        prop_assert!((spd(&dupd, &preds_dup, &spec).unwrap() - base.1).abs() < 1e-12);
        prop_assert!((aod(&dupd, &preds_dup, &spec).unwrap() - base.2).abs() < 1e-12);

        let scaled_w: Vec<f64> = (0..d.n_rows()).map(|i| d.weight(i) * scale).collect();
        let scaled = d.clone().with_weights(scaled_w).unwrap();
        prop_assert!((cod(&scaled, &spec).unwrap() - base.0).abs() < 1e-10);
        prop_assert!((spd(&scaled, &preds, &spec).unwrap() - base.1).abs() < 1e-10);
        prop_assert!((aod(&scaled, &preds, &spec).unwrap() - base.2).abs() < 1e-10);
    }
}

use labcli::{config_id, keys, parse_seeds, Experiment, Params};
use proptest::prelude::*;

fn experiment() -> impl Strategy<Value = Experiment> {
    (0..Experiment::ALL.len()).prop_map(|i| Experiment::ALL[i])
}

#[test]
fn every_experiment_defaults_resolve() {
    for e in Experiment::ALL {
        let p = Params::defaults(e);
        assert!(labcli::experiments::Settings::from_params(&p).is_ok(), "{e}");
        assert_eq!(p.values().len(), keys(e).len());
    }
}

proptest! {
    #[test]
    fn config_id_ignores_override_order(e in experiment(), picks in proptest::collection::vec((0usize..16, 1u32..1000), 0..6)) {
        let ks = keys(e);
        let sets: Vec<(&str, String)> = picks.iter().map(|(i, v)| (ks[i % ks.len()].key, v.to_string())).collect();
        let mut fwd = Params::defaults(e);
        let mut last = std::collections::BTreeMap::new();
        for (k, v) in &sets {
            fwd.set(k, v).unwrap();
            last.insert(*k, v.clone());
        }
        let mut rev = Params::defaults(e);
        for (k, v) in last.iter().rev() {
            rev.set(k, v).unwrap();
        }
        prop_assert_eq!(config_id(&fwd), config_id(&rev));
        prop_assert_eq!(config_id(&fwd).len(), 8);
    }

    #[test]
    fn changing_a_value_changes_the_config_id(e in experiment(), i in 0usize..16) {
        let k = keys(e)[i % keys(e).len()].key;
        let mut p = Params::defaults(e);
        let before = config_id(&p);
        p.set(k, "123456789").unwrap();
        prop_assert_ne!(before, config_id(&p));
    }

    #[test]
    fn seed_ranges_round_trip(a in 0u64..1000, n in 1u64..50) {
        let v = parse_seeds(&format!("{a}..{}", a + n)).unwrap();
        prop_assert_eq!(v.len() as u64, n);
        let listed: Vec<String> = v.iter().map(u64::to_string).collect();
        prop_assert_eq!(parse_seeds(&listed.join(",")).unwrap(), v);
    }
}

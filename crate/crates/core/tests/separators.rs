mod common;

use common::*;
use ndarray::Array2;
use tcnsep::frontend::max_sum_deviation;
use tcnsep::separators::{
    count_parameters, split_sources, PyramidSeparator, Separator, SeparatorConfig, SeparatorRegistry, SerialSeparator,
};
use tcnsep::tcn::BlockStyle;
use tcnsep::{Graph, Initializer, ParamStore};

fn built(variant: &str, n: usize) -> (Box<dyn Separator>, ParamStore) {
    let sep = SeparatorRegistry::builtin().build(&toy_separator(variant), n).unwrap();
    let mut store = ParamStore::new();
    sep.init_params(&Initializer::new(11), &mut store);
    (sep, store)
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn registry_knows_all_variants() {
    let reg = SeparatorRegistry::builtin();
    let mut names = reg.names();
    names.sort();
    assert_eq!(names, ["pa", "porta", "py", "sh", "su"]);
    for v in VARIANTS {
        assert_eq!(reg.build(&toy_separator(v), 8).unwrap().name(), v);
    }
}

#[test]
fn unknown_variant_and_zero_basis_are_config_errors() {
    let reg = SeparatorRegistry::builtin();
    let err = reg.build(&toy_separator("nope"), 8).unwrap_err();
    assert!(matches!(err, tcnsep::Error::Config(_)), "{err}");
    let err = reg.build(&toy_separator("porta"), 0).unwrap_err();
    assert!(matches!(err, tcnsep::Error::Config(_)), "{err}");
}

#[test]
fn registry_accepts_custom_factories() {
    let mut reg = SeparatorRegistry::empty();
    assert!(reg.build(&toy_separator("porta"), 8).is_err());
    reg.register("mine", |c, n| Ok(Box::new(SerialSeparator::porta(c, n)?)));
    let sep = reg.build(&toy_separator("mine"), 8).unwrap();
    assert_eq!(sep.name(), "porta");
}

#[test]
fn parameter_counts_are_ordered() {
    let cfg = |v: &str| SeparatorConfig { variant: v.into(), ..SeparatorConfig::default() };
    let count = |v: &str| count_parameters(&cfg(v), 256).unwrap();
    let (porta, sh, pa, su, py) = (count("porta"), count("sh"), count("pa"), count("su"), count("py"));
    assert_eq!(porta, sh);
    assert!(pa > porta && su > porta);
    // Twelve TCNs over three branches outweigh four in series.
    assert!(py > 2 * porta, "py {py} porta {porta}");
}

#[test]
fn porta_count_matches_hand_tally() {
    let cfg = toy_separator("porta");
    let (n, b, h, k) = (8, cfg.bottleneck, cfg.hidden, cfg.kernel);
    let front = 2 * n + (n * b + b);
    // Input site: gated 1x1 in, PReLU, norm. Output site: depthwise, PReLU, norm, gated 1x1 out.
    let input = 2 * (b * h + h) + h + 2 * h;
    let output = k * h + h + 2 * h + 2 * (h * b + b);
    let head = b * 2 * n + 2 * n;
    let blocks = cfg.dilations.len() * cfg.num_tcns;
    assert_eq!(count_parameters(&cfg, n).unwrap(), front + blocks * (input + output) + head);
}

#[test]
fn masks_sum_to_one_for_every_variant() {
    let mut r = rng(3);
    let rep = random_matrix(&mut r, 17, 8).mapv(f64::abs);
    for v in VARIANTS {
        let (sep, store) = built(v, 8);
        let mut g = Graph::new();
        let x = g.constant(rep.clone());
        let out = sep.forward(&mut g, &store, x).unwrap();
        let masks = g.value(out.masks);
        assert_eq!(masks.dim(), (17, 16), "{v}");
        assert!(masks.iter().all(|m| (0.0..=1.0).contains(m)), "{v}");
        assert!(max_sum_deviation(&split_sources(masks, 2)) < 1e-12, "{v}");
    }
}

#[test]
fn pyramid_weights_lie_on_simplex() {
    let (sep, store) = built("py", 8);
    let mut r = rng(5);
    let mut g = Graph::new();
    let x = g.constant(random_matrix(&mut r, 21, 8).mapv(f64::abs));
    let out = sep.forward(&mut g, &store, x).unwrap();
    let w = g.value(out.branch_weights.expect("py reports weights"));
    assert_eq!(w.dim(), (1, 2));
    assert!(w.iter().all(|v| *v >= 0.0));
    assert!((w.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn serial_variants_report_no_branch_weights() {
    let mut r = rng(6);
    let rep = random_matrix(&mut r, 9, 8);
    for v in ["porta", "sh", "pa", "su"] {
        let (sep, store) = built(v, 8);
        let mut g = Graph::new();
        let x = g.constant(rep.clone());
        assert!(sep.forward(&mut g, &store, x).unwrap().branch_weights.is_none(), "{v}");
    }
}

/// With every branch carrying the same weights, any simplex weighting gives the same logits.
#[test]
fn identical_pyramid_branches_ignore_weighting() {
    let mut cfg = toy_separator("py");
    cfg.py_branch_depths = vec![2, 2];
    let py = PyramidSeparator::new(&cfg, 8).unwrap();
    let mut store = ParamStore::new();
    py.init_params(&Initializer::new(2), &mut store);
    let copies: Vec<(String, _)> = store
        .iter()
        .filter(|(k, _)| k.starts_with("separator.branch0."))
        .map(|(k, v)| (k.replacen("branch0", "branch1", 1), v.clone()))
        .collect();
    for (k, v) in copies {
        assert!(store.contains(&k), "{k}");
        store.insert(k, v);
    }
    let mut r = rng(8);
    let rep = random_matrix(&mut r, 13, 8);
    let logits_for = |w: &[f64]| {
        let mut g = Graph::new();
        let x = g.constant(rep.clone());
        let l = py.forward_with_weights(&mut g, &store, x, w).unwrap().logits;
        g.value(l).clone()
    };
    let a = logits_for(&[0.5, 0.5]);
    for w in [[1.0, 0.0], [0.2, 0.8], [0.93, 0.07]] {
        assert!(max_abs_diff(&a, &logits_for(&w)) < 1e-12, "{w:?}");
    }
    // The predicted weighting agrees as well.
    let mut g = Graph::new();
    let x = g.constant(rep.clone());
    let l = py.logits(&mut g, &store, x).unwrap().logits;
    assert!(max_abs_diff(&a, g.value(l)) < 1e-12);
}

#[test]
fn pyramid_rejects_wrong_weight_count() {
    let py = PyramidSeparator::new(&toy_separator("py"), 8).unwrap();
    let mut store = ParamStore::new();
    py.init_params(&Initializer::new(0), &mut store);
    let mut g = Graph::new();
    let x = g.constant(Array2::zeros((5, 8)));
    assert!(py.forward_with_weights(&mut g, &store, x, &[1.0]).is_err());
}

#[test]
fn mask_set_checks_channel_count() {
    let (sep, store) = built("porta", 8);
    let rep = tcnsep::frontend::LatentRep { values: Array2::zeros((4, 7)), sample_rate: 8000 };
    assert!(sep.mask_set(&rep, &store).is_err());
    let rep = tcnsep::frontend::LatentRep { values: Array2::from_elem((4, 8), 0.3), sample_rate: 8000 };
    let set = sep.mask_set(&rep, &store).unwrap();
    assert_eq!(set.num_sources(), 2);
}

#[test]
fn default_receptive_fields() {
    let sep = SeparatorRegistry::builtin().build(&SeparatorConfig::default(), 256).unwrap();
    let rf = sep.receptive_fields().unwrap();
    assert_eq!(rf, vec![("per_tcn".to_string(), 23), ("total".to_string(), 89)]);
    let py = SeparatorRegistry::builtin()
        .build(&SeparatorConfig { variant: "py".into(), ..SeparatorConfig::default() }, 256)
        .unwrap();
    let rf: Vec<usize> = py.receptive_fields().unwrap().into_iter().map(|(_, v)| v).collect();
    assert!(rf.contains(&(1 + 2 * 3 * 11)) && rf.contains(&(1 + 2 * 5 * 11)), "{rf:?}");
}

#[test]
fn receptive_field_matches_gradient_support() {
    for (dilations, k) in [(vec![1, 2], 3), (vec![1, 2, 4], 3), (vec![1, 3], 5)] {
        let mut cfg = toy_separator("porta");
        cfg.dilations = dilations.clone();
        cfg.kernel = k;
        let tcn_cfg = cfg.tcn_config();
        let expected = tcn_cfg.receptive_field().unwrap();
        for style in [BlockStyle::Gated, BlockStyle::Plain] {
            let measured = gradient_support(&tcn_cfg, style, 1, 3 * expected, expected + 2);
            assert_eq!(measured, expected, "{dilations:?} K={k} {style:?}");
        }
    }
}

#[test]
fn causal_stack_only_looks_back() {
    let mut cfg = toy_separator("porta");
    cfg.causal = true;
    let tcn_cfg = cfg.tcn_config();
    let rf = tcn_cfg.receptive_field().unwrap();
    let len = 3 * rf;
    // Probing the last frame still sees the full window, all of it in the past.
    assert_eq!(gradient_support(&tcn_cfg, BlockStyle::Gated, 4, len, len - 1), rf);
    // Near the start the window is truncated by the sequence boundary.
    assert_eq!(gradient_support(&tcn_cfg, BlockStyle::Gated, 4, len, 0), 1);
}

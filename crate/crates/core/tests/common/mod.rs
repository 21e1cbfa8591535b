#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcnsep::frontend::FrontendConfig;
use tcnsep::separators::{SeparatorConfig, WeightorConfig};
use tcnsep::tcn::{BlockStyle, Tcn, TcnConfig};
use tcnsep::{Graph, Initializer, ParamStore};

pub const VARIANTS: [&str; 5] = ["porta", "py", "sh", "pa", "su"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

pub fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Toy-sized model used by gradient and structural checks.
pub fn toy_frontend() -> FrontendConfig {
    FrontendConfig { num_basis: 8, win_len: 8, stride: 6 }
}

pub fn toy_separator(variant: &str) -> SeparatorConfig {
    SeparatorConfig {
        variant: variant.into(),
        num_tcns: 2,
        bottleneck: 6,
        hidden: 6,
        kernel: 3,
        dilations: vec![1, 2],
        py_branch_depths: vec![1, 2],
        weightor: WeightorConfig { hidden: 5, kernel: 3 },
        ..SeparatorConfig::default()
    }
}

/// Copies every Porta parameter into each branch of the matching Pa site.
pub fn tie_parallel_to_porta(porta: &ParamStore, pa: &mut ParamStore, branches: usize) {
    for (name, value) in porta.iter() {
        if pa.contains(name) {
            pa.insert(name.clone(), value.clone());
            continue;
        }
        let (head, tail) = site_split(name).unwrap_or_else(|| panic!("unmapped parameter {name}"));
        for b in 0..branches {
            let target = format!("{head}.branch{b}.{tail}");
            assert!(pa.contains(&target), "missing {target}");
            pa.insert(target, value.clone());
        }
    }
}

/// `"x.block0.a.conv.weight"` → `("x.block0.a", "conv.weight")`.
fn site_split(name: &str) -> Option<(String, String)> {
    for site in [".a.", ".b."] {
        if let Some(i) = name.find(site) {
            let cut = i + site.len() - 1;
            return Some((name[..cut].to_string(), name[cut + 1..].to_string()));
        }
    }
    None
}

/// Drives every highway gate of a Su store to (numerically) zero.
pub fn close_highway_gates(store: &mut ParamStore) {
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let closed = if name.ends_with(".a.branch0.norm.gain") || name.ends_with(".b.branch0.conv.weight") {
            Some(0.0)
        } else if name.ends_with(".a.branch0.norm.bias") || name.ends_with(".b.branch0.conv.bias") {
            Some(-60.0)
        } else {
            None
        };
        if let Some(v) = closed {
            store.get_mut(&name).unwrap().fill(v);
        }
    }
}

/// Input frames whose gradient reaches output frame `p` of the stack, as the
/// span between the outermost nonzero rows. Normalization statistics are held
/// fixed so that only the convolutions couple frames.
pub fn gradient_support(cfg: &TcnConfig, style: BlockStyle, seed: u64, len: usize, p: usize) -> usize {
    let tcn = Tcn::new(cfg, style).unwrap();
    let mut store = ParamStore::new();
    tcn.init_params(&Initializer::new(seed), &mut store, "probe");
    let mut r = rng(seed ^ 0x5eed);
    let mut g = Graph::new().with_frozen_norm_stats();
    let x = g.input(random_matrix(&mut r, len, cfg.block.in_channels));
    let out = tcn.forward(&mut g, &store, "probe", x).unwrap().out;
    let mut pick = Array2::zeros((len, cfg.block.in_channels));
    pick.row_mut(p).fill(1.0);
    let pick = g.constant(pick);
    let probe = g.mul(out, pick);
    let grads = g.backward(probe);
    let gx = grads.wrt(x).unwrap();
    let rows: Vec<usize> = (0..len).filter(|&i| gx.row(i).iter().any(|v| *v != 0.0)).collect();
    rows.last().unwrap() - rows.first().unwrap() + 1
}

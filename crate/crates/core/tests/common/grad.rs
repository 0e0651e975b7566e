//! Gradient checks shared by the gradient and acceptance suites.

use hoi_contact::autodiff::gradcheck::{check, GradCheck};
use hoi_contact::autodiff::Var;
use hoi_contact::backbone::{Backbone, BackboneConfig};
use hoi_contact::cpam::{cpam_loss_graph, Cpam, CpamConfig};
use hoi_contact::geometry::GridRect;
use hoi_contact::matching::{cost_matrix, hungarian, match_loss, GtTarget, MatchWeights, PredictionVars};
use hoi_contact::iim::PairPredictions;
use hoi_contact::nn::{Ctx, NormKind};
use hoi_contact::params::ParamStore;
use hoi_contact::pgcs::{seg_loss_graph, Pgcs, PgcsConfig};
use hoi_contact::scene::{generate_scene, ContactMap, SceneConfig};
use ndarray::{Array2, ArrayD, Ix2, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

pub fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> ArrayD<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_simple_fn(IxDyn(shape), || r.random_range(lo..hi))
}

/// `sum(x * R)` with a fixed random `R`, so every output element matters.
fn project(cx: &mut Ctx<'_, f64>, x: Var, seed: u64) -> Var {
    let shape = cx.g.shape(x).to_vec();
    let r = cx.g.constant(random(&shape, seed, -1.0, 1.0));
    let p = cx.g.mul(x, r);
    cx.g.sum(p)
}

fn spread(len: usize, n: usize) -> Vec<usize> {
    let n = n.min(len);
    (0..n).map(|i| i * len / n).collect()
}

/// Check d(loss)/d(param `name`) at `n` evenly spread entries.
fn check_param<F>(store: &ParamStore<f64>, name: &str, n: usize, train: bool, f: F) -> GradCheck
where
    F: Fn(&mut Ctx<'_, f64>) -> Var,
{
    let id = store.id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let rng = || ChaCha8Rng::seed_from_u64(11);
    let mut cx = Ctx::new(store, train, rng());
    let loss = f(&mut cx);
    let grads = cx.g.backward(loss);
    let analytic = cx.g.param_grads(&grads).get(id).expect("parameter reached").clone();
    let x = store.get(id).clone();
    let idx = spread(x.len(), n);
    check(
        |v| {
            let mut s = store.clone();
            s.set(id, v.clone());
            let mut cx = Ctx::new(&s, train, rng());
            let l = f(&mut cx);
            cx.g.scalar(l)
        },
        &x,
        &analytic,
        &idx,
        H,
    )
}

pub type Checks = Vec<(String, GradCheck)>;

pub fn backbone_parameters() -> Checks {
    let mut out = Checks::new();
    let cfg = BackboneConfig {
        widths: vec![8, 8, 8, 8, 8],
        groups: 2,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let bb = Backbone::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let img = random(&[64, 64, 3], 2, 0.0, 1.0);
    let f = |cx: &mut Ctx<'_, f64>| {
        let x = cx.g.input(img.clone());
        let y = bb.forward(cx, x).unwrap();
        project(cx, y, 3)
    };
    for name in [
        "backbone.stage0.conv.weight",
        "backbone.stage2.conv.weight",
        "backbone.stage4.conv.bias",
        "backbone.stage1.norm.gamma",
        "backbone.stage4.norm.beta",
    ] {
        out.push((name.to_string(), check_param(&store, name, 12, false, f)));
    }
    out
}

pub fn cpam_head_and_blocks() -> Checks {
    let mut out = Checks::new();
    for norm in [NormKind::Batch, NormKind::Layer] {
        let mut store = ParamStore::new();
        let cfg = CpamConfig {
            norm,
            ..Default::default()
        };
        let cpam = Cpam::new(&mut store, 16, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let pooled = random(&[3, 16], 5, -1.0, 2.0);
        let labels: Vec<[u8; 17]> = (0..3)
            .map(|i| std::array::from_fn(|k| ((k + i) % 3 == 0) as u8))
            .collect();
        // training mode: batch statistics and a fixed dropout mask
        let f = |cx: &mut Ctx<'_, f64>| {
            let x = cx.g.input(pooled.clone());
            let logits = cpam.logits(cx, x);
            let mut total = None;
            for (i, l) in labels.iter().enumerate() {
                let row = cx.g.slice_axis(logits, 0, i, i + 1);
                let b = cpam_loss_graph(cx, row, l).unwrap();
                total = Some(match total {
                    None => b,
                    Some(t) => cx.g.add(t, b),
                });
            }
            total.unwrap()
        };
        for name in ["cpam.head.weight", "cpam.head.bias", "cpam.fcb1.fc.weight", "cpam.fcb2.norm.gamma"] {
            out.push((format!("{name} ({norm:?})"), check_param(&store, name, 16, true, f)));
        }
    }
    out
}

pub fn small_pgcs(store: &mut ParamStore<f64>, c: usize) -> Pgcs {
    let cfg = PgcsConfig {
        decoder_width: 8,
        groups: 2,
        attention_hidden: 6,
        ..Default::default()
    };
    Pgcs::new(store, c, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap()
}

pub fn enhancer_delta() -> Checks {
    let mut out = Checks::new();
    let mut store = ParamStore::new();
    let pgcs = small_pgcs(&mut store, 4);
    // move delta away from 1 so the check is not at a special point
    let id = store.id("pgcs.delta").unwrap();
    store.set(id, ndarray::arr1(&[1.3]).into_dyn());
    let f = random(&[4, 4, 4], 7, -1.0, 1.0);
    let region = GridRect {
        gx_min: 1,
        gx_max: 2,
        gy_min: 0,
        gy_max: 2,
    };
    let loss = |cx: &mut Ctx<'_, f64>| {
        let x = cx.g.input(f.clone());
        let e = pgcs.enhance_roi(cx, x, Some(region));
        let d = pgcs.decode(cx, e);
        project(cx, d, 8)
    };
    out.push(("pgcs.delta".to_string(), check_param(&store, "pgcs.delta", 1, false, loss)));
    out
}

pub fn segmentation_conv_kernel() -> Checks {
    let mut out = Checks::new();
    let mut store = ParamStore::new();
    let pgcs = small_pgcs(&mut store, 4);
    let scene = generate_scene(3, &SceneConfig::default()).unwrap();
    // features on a 2x2 grid decode to 32x32, upsampled once more to 64x64
    let gt = ContactMap {
        labels: Array2::from_shape_fn((64, 64), |(y, x)| scene.contact_map.labels[[y * 2, x * 2]]),
    };
    let f = random(&[2, 2, 4], 9, -1.0, 1.0);
    let prior = random(&[17], 10, 0.0, 1.0);
    let loss = |cx: &mut Ctx<'_, f64>| {
        let x = cx.g.input(f.clone());
        let d = pgcs.decode(cx, x);
        let p = cx.g.input(prior.clone());
        let gate = pgcs.attention_gate(cx, p);
        let a = pgcs.body_attention(cx, d, gate);
        let logits = pgcs.seg_logits(cx, a);
        seg_loss_graph(cx, logits, &gt, 0.25).unwrap()
    };
    for name in ["pgcs.decoder0.conv.weight", "pgcs.decoder3.conv.weight", "pgcs.head.weight", "pgcs.gate.fc1.weight"] {
        out.push((name.to_string(), check_param(&store, name, 16, false, loss)));
    }
    out
}

pub fn match_loss_wrt_boxes() -> Checks {
    let mut out = Checks::new();
    let nq = 5;
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let mut boxes = || {
        Array2::from_shape_fn((nq, 4), |(_, k)| {
            if k < 2 {
                r.random_range(0.3..0.7)
            } else {
                r.random_range(0.1..0.3)
            }
        })
        .into_dyn()
    };
    let hb = boxes();
    let ob = boxes();
    let ol = random(&[nq, 6], 13, -1.0, 1.0);
    let al = random(&[nq, 9], 14, -1.0, 1.0);
    let gts = vec![
        GtTarget {
            human: [0.4, 0.5, 0.2, 0.25],
            object: [0.55, 0.45, 0.15, 0.1],
            object_class: 2,
            action_class: 1,
        },
        GtTarget {
            human: [0.62, 0.4, 0.18, 0.3],
            object: [0.35, 0.6, 0.12, 0.2],
            object_class: 0,
            action_class: 4,
        },
    ];
    let w = MatchWeights::default();
    let to2 = |a: &ArrayD<f64>| a.clone().into_dimensionality::<Ix2>().unwrap();
    let preds = PairPredictions {
        human_boxes: to2(&hb),
        object_boxes: to2(&ob),
        object_logits: to2(&ol),
        action_logits: to2(&al),
    };
    // the assignment is held fixed; the loss is differentiable given it
    let m = hungarian(&cost_matrix(&preds, &gts, &w).unwrap()).unwrap();
    let store = ParamStore::<f64>::new();
    let run = |h: &ArrayD<f64>, o: &ArrayD<f64>| {
        let mut cx = Ctx::inference(&store);
        let vars = PredictionVars {
            human_boxes: cx.g.input(h.clone()),
            object_boxes: cx.g.input(o.clone()),
            object_logits: cx.g.input(ol.clone()),
            action_logits: cx.g.input(al.clone()),
        };
        let (l, _) = match_loss(&mut cx, vars, &gts, &m, &w, 8).unwrap();
        cx.g.scalar(l)
    };
    let mut cx = Ctx::new(&store, false, ChaCha8Rng::seed_from_u64(0));
    let vars = PredictionVars {
        human_boxes: cx.g.input(hb.clone()),
        object_boxes: cx.g.input(ob.clone()),
        object_logits: cx.g.input(ol.clone()),
        action_logits: cx.g.input(al.clone()),
    };
    let (l, _) = match_loss(&mut cx, vars, &gts, &m, &w, 8).unwrap();
    let grads = cx.g.backward(l);
    let all: Vec<usize> = (0..nq * 4).collect();
    let gh = grads.get(vars.human_boxes).unwrap().clone();
    let go = grads.get(vars.object_boxes).unwrap().clone();
    let gl = grads.get(vars.action_logits).unwrap().clone();
    out.push(("human boxes".to_string(), check(|h| run(h, &ob), &hb, &gh, &all, H)));
    out.push(("object boxes".to_string(), check(|o| run(&hb, o), &ob, &go, &all, H)));
    let rl = check(
        |a| {
            let mut cx = Ctx::inference(&store);
            let vars = PredictionVars {
                human_boxes: cx.g.input(hb.clone()),
                object_boxes: cx.g.input(ob.clone()),
                object_logits: cx.g.input(ol.clone()),
                action_logits: cx.g.input(a.clone()),
            };
            let (l, _) = match_loss(&mut cx, vars, &gts, &m, &w, 8).unwrap();
            cx.g.scalar(l)
        },
        &al,
        &gl,
        &spread(al.len(), 20),
        H,
    );
    out.push(("action logits".to_string(), rl));
    // unmatched queries receive no box gradient
    for q in 0..nq {
        if m.assignment.iter().all(|&(mq, _)| mq != q) {
            assert!((0..4).all(|k| gh[[q, k]] == 0.0 && go[[q, k]] == 0.0));
        }
    }
    out
}

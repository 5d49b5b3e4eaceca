mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlf_core::localizer::{
    decode_span, train_localizer, FusionConfig, LocalizerItem, LocalizerTrainConfig, RcConfig,
    RcModel,
};
use vlf_core::qg::{QgConfig, QgModel, QgProfile, Vocab};
use vlf_core::tensor::fd_gradcheck;
use vlf_core::text::tokenize;

use common::localization_fixture;

fn rc(dim: usize, fusion: Option<FusionConfig>, seed: u64) -> RcModel {
    RcModel::new(RcConfig {
        dim,
        heads: 2,
        buckets: 128,
        fusion,
        seed,
        ..RcConfig::default()
    })
    .unwrap()
}

fn qg_for(items: &[LocalizerItem], dim: usize) -> QgModel {
    let questions: Vec<Vec<String>> = items.iter().map(|i| tokenize(&i.question)).collect();
    let vocab = Vocab::build(questions.iter().map(Vec::as_slice), 1);
    let cfg = QgConfig {
        dim,
        heads: 2,
        profile: QgProfile::BartStyle,
        seed: 11,
        ..QgConfig::default()
    };
    QgModel::new(cfg, vocab).unwrap()
}

fn exact_matches(m: &RcModel, items: &[LocalizerItem]) -> usize {
    items
        .iter()
        .filter(|it| m.predict(&it.question, &it.video).unwrap() == it.gold)
        .count()
}

fn span_gradcheck(model: &mut RcModel, item: &LocalizerItem) -> f64 {
    let input = model.pack(&item.question, &item.video.timeline).unwrap();
    let (gi, gj) = model.gold_positions(&input, item).unwrap();
    let pass = model.forward(input, &item.video).unwrap();
    let (_, ds, de) = RcModel::span_loss(&pass, gi, gj).unwrap();
    model.params_mut().zero_grads();
    model.backward(&pass, &ds, &de, None).unwrap();
    let frozen = model.clone();
    fd_gradcheck(
        |ps| {
            let mut probe = frozen.clone();
            probe.params_mut().load_values(ps)?;
            probe.item_loss(item)
        },
        model.params(),
        1e-5,
    )
    .unwrap()
}

#[test]
fn span_loss_gradient_matches_finite_differences() {
    let items = localization_fixture(true);
    for seed in 0..3 {
        let mut plain = rc(8, None, seed);
        let err = span_gradcheck(&mut plain, &items[seed as usize]);
        assert!(err < 1e-4, "plain seed {seed}: {err}");
    }
    for per_word in [false, true] {
        let fusion = FusionConfig {
            per_word,
            ..FusionConfig::new(4, 3)
        };
        let mut fused = rc(8, Some(fusion), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for v in fused
            .params_mut()
            .value_mut("rc.fuse.w")
            .unwrap()
            .data_mut()
        {
            *v += rng.gen_range(-0.3..0.3);
        }
        let err = span_gradcheck(&mut fused, &items[2]);
        assert!(err < 1e-4, "per_word={per_word}: {err}");
    }
}

fn brute_force(s: &[f64], e: &[f64], valid: &[bool], max_span: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for i in 0..s.len() {
        for j in i..s.len() {
            if !valid[i] || !valid[j] || j - i >= max_span {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bj)) => s[i] + e[j] > s[bi] + e[bj],
            };
            if better {
                best = Some((i, j));
            }
        }
    }
    best
}

proptest! {
    #[test]
    fn decode_matches_brute_force(
        cells in prop::collection::vec((-3i32..3, -3i32..3, prop::bool::weighted(0.7)), 1..=64),
        max_span in 1usize..70,
    ) {
        // Small integer logits make ties common, which exercises the tie rule.
        let s: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
        let e: Vec<f64> = cells.iter().map(|c| c.1 as f64).collect();
        let valid: Vec<bool> = cells.iter().map(|c| c.2).collect();
        let got = decode_span(&s, &e, &valid, max_span).ok();
        prop_assert_eq!(got, brute_force(&s, &e, &valid, max_span));
    }
}

#[test]
fn argmax_never_lands_on_question_positions() {
    let items = localization_fixture(false);
    let m = rc(8, None, 3);
    for it in &items {
        let input = m.pack(&it.question, &it.video.timeline).unwrap();
        let mut pass = m.forward(input, &it.video).unwrap();
        for p in 0..=pass.input.question_len {
            pass.start[p] = 1e9;
            pass.end[p] = 1e9;
        }
        let (i, j) = pass.decode(256).unwrap();
        assert!(pass.input.word_map[i].is_some() && pass.input.word_map[j].is_some());
    }
}

#[test]
fn cycle_training_overfits_five_items() {
    let items = localization_fixture(false);
    let mut model = rc(32, None, 1);
    let mut qg = qg_for(&items, 32);
    let cfg = LocalizerTrainConfig {
        epochs: 100,
        batch_size: 1,
        lambda: 1.0,
        seed: 2,
        ..Default::default()
    };
    let report = train_localizer(&mut model, Some(&mut qg), &items, &cfg).unwrap();
    assert!(report.steps <= 500);
    assert_eq!(exact_matches(&model, &items), 5);
    let first = report.loss_trace[0];
    let last = *report.loss_trace.last().unwrap();
    assert!(last < first, "{first} -> {last}");
    for ((l, f), g) in report
        .loss_trace
        .iter()
        .zip(&report.span_loss_trace)
        .zip(&report.question_loss_trace)
    {
        assert!(*l >= f.max(*g) && *g >= 0.0 && *f >= 0.0);
    }
}

#[test]
fn zero_weight_cycle_reduces_to_plain_span_training() {
    let items = localization_fixture(false);
    let cfg = LocalizerTrainConfig {
        epochs: 8,
        lambda: 0.0,
        seed: 4,
        ..Default::default()
    };
    let mut plain = rc(16, None, 9);
    let a = train_localizer(&mut plain, None, &items, &cfg).unwrap();

    let mut cycled = rc(16, None, 9);
    let mut qg = qg_for(&items, 16);
    let qg_before = qg.params().clone();
    let b = train_localizer(&mut cycled, Some(&mut qg), &items, &cfg).unwrap();

    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_trace), bits(&b.loss_trace));
    assert_eq!(bits(&a.span_loss_trace), bits(&b.span_loss_trace));
    for (name, pa) in plain.params().iter() {
        let pb = cycled.params().value(name).unwrap();
        assert_eq!(bits(pa.data()), bits(pb.data()), "{name}");
    }
    assert_eq!(
        qg.params().value("qg.out.b").unwrap(),
        qg_before.value("qg.out.b").unwrap()
    );
}

#[test]
fn fusion_at_init_preserves_logit_order() {
    let items = localization_fixture(true);
    let plain = rc(16, None, 21);
    let mut fused = rc(16, Some(FusionConfig::new(4, 6)), 21);
    for name in ["vis.w", "vis.b"] {
        fused
            .params_mut()
            .value_mut(name)
            .unwrap()
            .data_mut()
            .fill(0.0);
    }
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
        idx
    };
    for it in &items {
        let p = plain
            .forward(
                plain.pack(&it.question, &it.video.timeline).unwrap(),
                &it.video,
            )
            .unwrap();
        let f = fused
            .forward(
                fused.pack(&it.question, &it.video.timeline).unwrap(),
                &it.video,
            )
            .unwrap();
        assert!(p.states.data().iter().all(|&x| x > -10.0));
        // A constant shift of every logit keeps the order, up to rounding.
        let shift = f.start[0] - p.start[0];
        for (a, b) in p.start.iter().zip(&f.start) {
            assert!((b - a - shift).abs() < 1e-9);
        }
        assert_eq!(order(&p.end), order(&f.end));
        assert_eq!(p.decode(256).unwrap(), f.decode(256).unwrap());
    }
}

#[test]
fn predictions_stay_inside_the_video() {
    let items = localization_fixture(true);
    let m = rc(8, Some(FusionConfig::new(4, 4)), 0);
    for it in &items {
        let p = m.predict_item(it).unwrap();
        let d = it.video.duration_s.unwrap();
        assert!(0.0 <= p.start_s && p.start_s <= p.end_s && p.end_s <= d);
    }
}

#[test]
fn fusion_needs_a_feature_track() {
    let items = localization_fixture(false);
    let m = rc(8, Some(FusionConfig::new(4, 4)), 0);
    assert!(m.predict_item(&items[0]).is_err());
}

#[test]
fn save_and_load_give_identical_outputs() {
    let items = localization_fixture(true);
    let m = rc(8, Some(FusionConfig::new(4, 3)), 13);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rc.vlfk");
    m.save(&path).unwrap();
    let back = RcModel::load(&path).unwrap();
    for it in &items {
        let a = m
            .forward(m.pack(&it.question, &it.video.timeline).unwrap(), &it.video)
            .unwrap();
        let b = back
            .forward(
                back.pack(&it.question, &it.video.timeline).unwrap(),
                &it.video,
            )
            .unwrap();
        assert_eq!(a.start, b.start);
        assert_eq!(a.end, b.end);
    }
}

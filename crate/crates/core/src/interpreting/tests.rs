use super::*;
use crate::tokens::{SemanticSeq, TextSeq};

fn tiny(variant: Variant) -> TransducerModel {
    let cfg = InterpreterConfig {
        phonemes: 4,
        semantic_vocab: 5,
        dim: 8,
        heads: 2,
        text_layers: 1,
        text_ff_inner: 8,
        pred_layers: 2,
        pred_kernel: 3,
        joint_dim: 8,
        joint_ff_inner: 8,
        variant,
        max_symbols_per_frame: 4,
    };
    TransducerModel::new(cfg, 7).unwrap()
}

fn text(ids: &[usize]) -> TextSeq {
    TextSeq::new(ids.to_vec(), 4).unwrap()
}

fn sem(ids: &[usize]) -> SemanticSeq {
    SemanticSeq::new(ids.to_vec(), 5).unwrap()
}

#[test]
fn text_encoder_shapes_and_positions() {
    let m = tiny(Variant::PlusPlus);
    assert_eq!(m.encode_text(&text(&[2])).unwrap().rows(), 1);
    let h = m.encode_text(&text(&[1, 1, 1])).unwrap();
    assert_eq!(h.rows(), 3);
    assert_ne!(h.row(0), h.row(2));
    assert_eq!(h, m.encode_text(&text(&[1, 1, 1])).unwrap());
}

#[test]
fn reference_encoder_invariances() {
    let m = tiny(Variant::PlusPlus);
    let one = m.encode_reference(&sem(&[3, 4])).unwrap();
    for n in 2..6 {
        let r = m.encode_reference(&sem(&[3, 4].repeat(n))).unwrap();
        for (a, b) in r.as_slice().iter().zip(one.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let base = m.encode_reference(&sem(&[0, 0, 1, 2, 2, 2, 4])).unwrap();
    let reversed = m.encode_reference(&sem(&[4, 2, 2, 2, 1, 0, 0])).unwrap();
    let tiled = m.encode_reference(&sem(&[0, 0, 1, 2, 2, 2, 4].repeat(2))).unwrap();
    for other in [&reversed, &tiled] {
        for (a, b) in base.as_slice().iter().zip(other.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // a shared first and last token does not read as a slower rate
    let wrapped = m.encode_reference(&sem(&[1, 1, 2, 2, 1, 1])).unwrap();
    let open = m.encode_reference(&sem(&[2, 2, 1, 1, 1, 1])).unwrap();
    assert!(wrapped.as_slice().iter().zip(open.as_slice()).any(|(a, b)| (a - b).abs() > 1e-9));
    // same token multiset, different run lengths
    let slow = m.encode_reference(&sem(&[1, 1, 2, 2])).unwrap();
    let fast = m.encode_reference(&sem(&[1, 2, 1, 2])).unwrap();
    assert_ne!(slow, fast);
    assert!(matches!(m.encode_reference(&sem(&[])), Err(crate::Error::Input(_))));
}

#[test]
fn prediction_conditioning_is_live() {
    let m = tiny(Variant::PlusPlus);
    let r = m.encode_reference(&sem(&[1, 2])).unwrap();
    let zero = RefEmbedding(vec![0.0; 8]);
    let a = m.prediction_step(&sem(&[]), &r).unwrap();
    let b = m.prediction_step(&sem(&[]), &zero).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, m.prediction_step(&sem(&[]), &r).unwrap());
    assert!(matches!(
        m.prediction_step(&SemanticSeq::from_raw(vec![5]), &r),
        Err(crate::Error::Index(_))
    ));
}

#[test]
fn windowed_prediction_matches_full_sequence() {
    let m = tiny(Variant::PlusPlus);
    let r = m.encode_reference(&sem(&[4, 4, 0])).unwrap();
    let prefix = [0, 3, 3, 1, 4, 2, 2, 0, 1];
    let full = m.prediction_sequence(&sem(&prefix), &r).unwrap();
    for u in 0..=prefix.len() {
        let step = m.prediction_step(&sem(&prefix[..u]), &r).unwrap();
        for (a, b) in step.iter().zip(full.row(u)) {
            assert!((a - b).abs() < 1e-12, "u={u}");
        }
    }
}

#[test]
fn joint_contract() {
    for variant in [Variant::PlusPlus, Variant::Baseline] {
        let m = tiny(variant);
        let r = m.encode_reference(&sem(&[1])).unwrap();
        let h = vec![0.3; 8];
        let g = vec![-0.2; 8];
        let l = m.joint_logits(&h, &g, &r).unwrap();
        assert_eq!(l.len(), 6);
        assert_eq!(l, m.joint_logits(&h, &g, &r).unwrap());
        assert!(matches!(
            m.joint_logits(&h[..7], &g, &r),
            Err(crate::Error::Dimension(_))
        ));
    }
    assert!(tiny(Variant::PlusPlus).joint_flops() < tiny(Variant::Baseline).joint_flops());
    let big = |v| {
        TransducerModel::new(
            InterpreterConfig {
                variant: v,
                ..Default::default()
            },
            0,
        )
        .unwrap()
        .joint_flops()
    };
    assert!(big(Variant::PlusPlus) < big(Variant::Baseline));
}

#[test]
fn dp_matches_enumeration_on_model() {
    for variant in [Variant::PlusPlus, Variant::Baseline] {
        let m = tiny(variant);
        for (x, s) in [
            (&[0][..], &[][..]),
            (&[1, 2], &[4]),
            (&[3, 0, 1], &[2, 2, 0]),
            (&[0, 1, 2, 3], &[1, 3, 0]),
        ] {
            let ex = Example {
                text: text(x),
                target: sem(s),
                prompt: sem(&[2, 2, 1]),
            };
            let a = m.nll(&ex).unwrap();
            let b = m.brute_force_loss(&ex).unwrap();
            assert!((a - b).abs() / b <= 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn batch_loss_is_mean_of_singles() {
    let m = tiny(Variant::PlusPlus);
    let a = Example {
        text: text(&[0, 1]),
        target: sem(&[1, 1, 4]),
        prompt: sem(&[3]),
    };
    let b = Example {
        text: text(&[2, 3, 3]),
        target: sem(&[0]),
        prompt: sem(&[2, 2]),
    };
    let mut g = crate::numerics::Graph::new();
    let l = m.batch_loss(&mut g, &[&a, &b]).unwrap();
    let mean = 0.5 * (m.nll(&a).unwrap() + m.nll(&b).unwrap());
    assert!((g.value(l).item().unwrap() - mean).abs() < 1e-10);
}

#[test]
fn loss_rejects_blank_in_target() {
    let m = tiny(Variant::PlusPlus);
    let ex = Example {
        text: text(&[0]),
        target: SemanticSeq::from_raw(vec![5]),
        prompt: sem(&[0]),
    };
    assert!(matches!(m.nll(&ex), Err(crate::Error::Index(_))));
}

#[test]
fn greedy_output_bounded() {
    let m = tiny(Variant::Baseline);
    for cap in 1..4 {
        let out = m.greedy_decode(&text(&[0, 1, 2]), &sem(&[1, 1]), cap).unwrap();
        assert!(out.len() <= 3 * cap);
        assert!(out.tokens().iter().all(|&t| t < 5));
    }
}

use super::*;
use crate::numerics::{Graph, Tensor};
use crate::tokens::{AcousticGrid, AcousticTokenFrame, SemanticSeq};

fn tiny() -> SpeakingModel {
    let cfg = SpeakingConfig {
        semantic_vocab: 5,
        codebook_size: 6,
        dim: 8,
        heads: 2,
        layers: 2,
        conv_kernel: 3,
        ff_inner: 8,
        prompt_layers: 1,
    };
    SpeakingModel::new(cfg, 3).unwrap()
}

fn grid(codes: &[[usize; 4]]) -> AcousticGrid {
    AcousticGrid::new(
        codes
            .iter()
            .map(|c| AcousticTokenFrame {
                codes: [[c[0], c[1]], [c[2], c[3]]],
            })
            .collect(),
    )
}

fn prompt() -> AcousticPrompt {
    AcousticPrompt::new(
        SemanticSeq::from_raw(vec![1, 1, 4]),
        grid(&[[0, 1, 2, 3], [4, 5, 0, 1], [2, 2, 2, 2]]),
    )
    .unwrap()
}

#[test]
fn logits_shape_and_determinism() {
    let m = tiny();
    let cache = m.encode_prompt(&prompt()).unwrap();
    assert_eq!(cache, m.encode_prompt(&prompt()).unwrap());
    assert_eq!(cache.layers(), 2);
    assert_eq!(cache.prompt_len(), 3);
    let s = SemanticSeq::from_raw(vec![2]);
    let y = grid(&[[0; 4]]);
    let mask = MaskPattern::all(1);
    let a = m
        .gmlm_forward(&s, &y, &mask, PromptSource::Cached(std::slice::from_ref(&cache)))
        .unwrap();
    assert_eq!(a.shape(), (1, 2, 2, 6));
    let b = m
        .gmlm_forward(&s, &y, &mask, PromptSource::Cached(std::slice::from_ref(&cache)))
        .unwrap();
    assert_eq!(a, b);
    let p = prompt();
    let c = m.gmlm_forward(&s, &y, &mask, PromptSource::Recompute(&[&p])).unwrap();
    assert!(a.max_abs_diff(&c) <= 1e-6);
}

#[test]
fn bidirectional_context() {
    let m = tiny();
    let cache = m.encode_prompt(&prompt()).unwrap();
    let s = SemanticSeq::from_raw(vec![0, 1, 2, 3]);
    let mut mask = MaskPattern::all(4);
    mask.set(3, Level::Coarse, false);
    let src = || PromptSource::Cached(std::slice::from_ref(&cache));
    let a = m
        .gmlm_forward(&s, &grid(&[[0; 4], [0; 4], [0; 4], [1, 0, 1, 0]]), &mask, src())
        .unwrap();
    let b = m
        .gmlm_forward(&s, &grid(&[[0; 4], [0; 4], [0; 4], [5, 0, 3, 0]]), &mask, src())
        .unwrap();
    // position 0 sees a later position's token
    assert_ne!(a.get(0, 0, 0), b.get(0, 0, 0));
    // masked slots ignore the placeholder value underneath
    let c = m
        .gmlm_forward(&s, &grid(&[[4; 4], [0; 4], [0; 4], [1, 0, 1, 0]]), &mask, src())
        .unwrap();
    assert_eq!(a, c);
}

#[test]
fn input_errors() {
    let m = tiny();
    let p = prompt();
    let s = SemanticSeq::from_raw(vec![0, 1]);
    let r = m.gmlm_forward(
        &s,
        &grid(&[[0; 4]]),
        &MaskPattern::all(2),
        PromptSource::Recompute(&[&p]),
    );
    assert!(matches!(r, Err(crate::Error::Input(_))));
    assert!(matches!(
        AcousticPrompt::new(SemanticSeq::from_raw(vec![]), AcousticGrid::default()),
        Err(crate::Error::Input(_))
    ));
    let cfg = DecodeConfig::default();
    assert!(matches!(
        g_ipd_decode(&m, &SemanticSeq::from_raw(vec![]), &p, &cfg),
        Err(crate::Error::Input(_))
    ));
}

#[test]
fn loss_examples() {
    // one masked position, both groups coarse, each entry at log-prob -1.2
    let k = 6;
    let z = (-1.2f64).exp();
    let other = ((1.0 - z) / (k - 1) as f64).ln() - z.ln();
    let logits: Vec<f64> = (0..4 * k).map(|i| if i % k == 0 { 0.0 } else { other }).collect();
    let mut g = Graph::new();
    let l = g.constant(Tensor::matrix(1, 4 * k, logits).unwrap());
    let truth = grid(&[[0; 4]]);
    let mut mask = MaskPattern::none(1);
    mask.set(0, Level::Coarse, true);
    let loss = gmlm_loss(&mut g, l, 0, &truth, &mask, k).unwrap();
    assert_eq!(loss.masked, 2);
    assert!((g.value(loss.total.unwrap()).item().unwrap() - 2.4).abs() < 1e-12);
    let n = loss.normalized(&mut g);
    assert!((g.value(n).item().unwrap() - 1.2).abs() < 1e-12);

    let empty = gmlm_loss(&mut g, l, 0, &truth, &MaskPattern::none(1), k).unwrap();
    assert!(empty.empty);
    let n = empty.normalized(&mut g);
    assert_eq!(g.value(n).item().unwrap(), 0.0);

    // uniform logits over 64 codes, everything coarse masked
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros(&[3, 4 * 64]));
    let mut mask = MaskPattern::none(3);
    mask.set_level(Level::Coarse, true);
    let loss = gmlm_loss(&mut g, l, 0, &grid(&[[1, 2, 3, 4]; 3]), &mask, 64).unwrap();
    let n = loss.normalized(&mut g);
    assert!((g.value(n).item().unwrap() - 64f64.ln()).abs() < 1e-12);
}

#[test]
fn decode_structure() {
    let m = tiny();
    let p = prompt();
    let s = SemanticSeq::from_raw(vec![0, 0, 3, 3, 1, 2, 4]);
    for n_c in [1, 3, 16] {
        let cfg = DecodeConfig {
            n_c,
            temperature: 1.0,
            seed: 9,
        };
        let (out, tr) = g_ipd_decode_traced(&m, &s, &p, &cfg, CacheMode::Cached, false).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(tr.forward_passes, n_c + 1);
        assert_eq!(*tr.coarse_masked.last().unwrap(), 0);
        out.validate(6).unwrap();
    }
}

#[test]
fn training_masks() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let (mut coarse, mut fine) = (0, 0);
    for _ in 0..2000 {
        let tm = training_mask(9, &mut rng).unwrap();
        if tm.loss.count(Level::Coarse) > 0 {
            coarse += 1;
            assert_eq!(tm.loss.count(Level::Fine), 0);
            assert_eq!(tm.input.count(Level::Fine), 9);
        } else {
            fine += 1;
            assert_eq!(tm.input.count(Level::Coarse), 0);
            assert_eq!(tm.loss.count(Level::Fine), 9);
        }
    }
    let share = coarse as f64 / (coarse + fine) as f64;
    assert!((share - COARSE_LEVEL_PROB).abs() < 0.05);
}

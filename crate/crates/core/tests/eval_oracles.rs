use docnade::corpus::{build_vocabulary, Corpus, MultimodalDocument};
use docnade::deep::{prepare_input, DeepSettings, Dropout, Head};
use docnade::eval::{
    class_word_associations, fit_linear_classifier, generate_text, perplexity, ClassifierKind, FitOptions,
};
use docnade::model::{init_model, ModelKind, Network};
use docnade::nade::ShallowParams;
use docnade::params::ParamSet;
use docnade::{WeightVector, WordTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-class logistic regression by Newton's method on raw features.
fn reference_logistic(x: &[[f64; 2]], y: &[usize], l2: f64) -> [f64; 3] {
    let mut theta = [0.0; 3];
    let n = x.len() as f64;
    for _ in 0..50 {
        let mut g = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (xi, &yi) in x.iter().zip(y) {
            let f = [xi[0], xi[1], 1.0];
            let z: f64 = (0..3).map(|k| theta[k] * f[k]).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            for a in 0..3 {
                g[a] += (p - yi as f64) * f[a] / n;
                for b in 0..3 {
                    hess[a][b] += p * (1.0 - p) * f[a] * f[b] / n;
                }
            }
        }
        for a in 0..2 {
            g[a] += l2 * theta[a];
            hess[a][a] += l2;
        }
        // solve hess * step = g by Gaussian elimination
        let mut m = hess;
        let mut r = g;
        for col in 0..3 {
            for row in col + 1..3 {
                let f = m[row][col] / m[col][col];
                for k in col..3 {
                    m[row][k] -= f * m[col][k];
                }
                r[row] -= f * r[col];
            }
        }
        let mut step = [0.0; 3];
        for row in (0..3).rev() {
            let s: f64 = (row + 1..3).map(|k| m[row][k] * step[k]).sum();
            step[row] = (r[row] - s) / m[row][row];
        }
        for k in 0..3 {
            theta[k] -= step[k];
        }
    }
    theta
}

#[test]
fn linear_classifier_agrees_with_reference_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..100 {
        let c = i % 2;
        let centre = if c == 0 { (-1.0, 0.5) } else { (1.0, -0.5) };
        x.push([
            centre.0 + rng.random_range(-1.5..1.5),
            centre.1 + rng.random_range(-1.5..1.5),
        ]);
        y.push(c);
    }
    let l2 = 1e-3;
    let theta = reference_logistic(&x, &y, l2);
    let reps: Vec<Vec<f64>> = x.iter().map(|p| p.to_vec()).collect();
    let labels: Vec<Vec<usize>> = y.iter().map(|&c| vec![c]).collect();
    let refs: Vec<&[usize]> = labels.iter().map(|l| l.as_slice()).collect();
    let options = FitOptions {
        l2,
        ..FitOptions::default()
    };
    let clf = fit_linear_classifier(&reps, &refs, 2, ClassifierKind::OneVsRest, options).unwrap();
    let disagreements = x
        .iter()
        .filter(|p| {
            let reference = usize::from(theta[0] * p[0] + theta[1] * p[1] + theta[2] > 0.0);
            let ours = clf.scores(&p[..]);
            usize::from(ours[1] > ours[0]) != reference
        })
        .count();
    assert!(disagreements <= 1, "{disagreements} disagreements");

    let soft = fit_linear_classifier(&reps, &refs, 2, ClassifierKind::Softmax, options).unwrap();
    let disagreements = x
        .iter()
        .filter(|p| {
            let reference = usize::from(theta[0] * p[0] + theta[1] * p[1] + theta[2] > 0.0);
            soft.predict(&p[..]) != reference
        })
        .count();
    assert!(disagreements <= 1, "{disagreements} disagreements");
}

#[test]
fn generate_text_matches_restricted_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let vocab = build_vocabulary(5, 2, &["a", "b", "c", "d", "e", "f"]).unwrap();
    let q = vocab.size();
    for kind in [ModelKind::DeepDocNade, ModelKind::SupDeepDocNade] {
        let mut model = init_model(
            kind,
            Head::Softmax,
            &[6, 4],
            q,
            3,
            0,
            1,
            DeepSettings::default(),
            &mut rng.clone(),
            &mut rng,
        )
        .unwrap();
        let mut p = model.params();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        model.set_params(&p);
        let Network::Deep { params, settings } = &model.network else {
            unreachable!()
        };
        for _ in 0..10 {
            let doc = MultimodalDocument::new((0..6).map(|_| (rng.random_range(0..10), 1)), [], None);
            let got = generate_text(&model, &doc, &vocab, 6).unwrap();

            let omega = WeightVector::new(&vocab, settings.rho);
            let x = prepare_input(doc.counts(), &omega, settings.normalize_input);
            let fwd = params
                .forward(&x, None, Dropout::Scale(1.0 - settings.dropout_rate))
                .unwrap();
            let logits: Vec<f64> = (0..q)
                .map(|w| {
                    params.b_out[w]
                        + (0..fwd.top().len())
                            .map(|k| params.v_out[[w, k]] * fwd.top()[k])
                            .sum::<f64>()
                })
                .collect();
            let ann: Vec<usize> = vocab.annotation_ids().collect();
            let z: f64 = ann.iter().map(|&w| logits[w].exp()).sum();
            let mut expected: Vec<(usize, f64)> = ann.iter().map(|&w| (w, logits[w].exp() / z)).collect();
            expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

            assert_eq!(got.ids, expected.iter().map(|e| e.0).collect::<Vec<_>>());
            for (g, e) in got.scores.iter().zip(&expected) {
                assert!((g - e.1).abs() < 1e-12);
            }
            assert!((got.scores.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn single_annotation_word_is_always_generated() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let vocab = build_vocabulary(4, 1, &["only"]).unwrap();
    let model = init_model(
        ModelKind::SupDeepDocNade,
        Head::Sigmoid,
        &[4],
        5,
        2,
        0,
        1,
        DeepSettings::default(),
        &mut rng.clone(),
        &mut rng,
    )
    .unwrap();
    for w in 0..4 {
        let doc = MultimodalDocument::new([(w, 2)], [], None);
        assert_eq!(generate_text(&model, &doc, &vocab, 1).unwrap().ids, vec![4]);
    }
}

#[test]
fn associations_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let vocab = build_vocabulary(6, 2, &["a", "b", "c", "d"]).unwrap();
    let q = vocab.size();
    for _ in 0..20 {
        let h = rng.random_range(3..=8);
        let mut p = ShallowParams::zeros(h, q, 3);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let class = rng.random_range(0..3);
        let top = rng.random_range(1..=h);
        let got = class_word_associations(&p, &vocab, class, top, 3).unwrap();

        let mut topics: Vec<usize> = (0..h).collect();
        topics.sort_by(|&a, &b| p.u[[class, b]].partial_cmp(&p.u[[class, a]]).unwrap());
        topics.truncate(top);
        assert_eq!(got.topics, topics);
        let score: Vec<f64> = (0..q)
            .map(|w| topics.iter().map(|&t| p.w[[t, w]]).sum::<f64>() / top as f64)
            .collect();
        let mut visual: Vec<usize> = (0..12).collect();
        visual.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).unwrap());
        let mut ann: Vec<usize> = (12..16).collect();
        ann.sort_by(|&a, &b| score[b].partial_cmp(&score[a]).unwrap());
        assert_eq!(got.visual_words, visual[..3]);
        assert_eq!(got.annotation_words, ann[..3]);
    }
}

#[test]
fn perplexity_of_a_coin() {
    let vocab = build_vocabulary(2, 1, &[]).unwrap();
    let corpus = Corpus::new(vocab, vec![MultimodalDocument::new([(1, 1)], [], None)], 0, 0).unwrap();
    let params = ShallowParams::zeros(3, 2, 0);
    let tree = WordTree::build(2, 0).unwrap();
    let ppl = perplexity(&corpus, &params, &tree, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((ppl - 2.0).abs() < 1e-15);
}

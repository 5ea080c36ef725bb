//! Analytic gradients against central finite differences.

use nmst::net::{gradient_check, Architecture, CellKind, Example, NeuralModel};
use nmst::{Context, Head, HeadKind, Sequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn head(kind: HeadKind) -> Head {
    match kind {
        HeadKind::Va => Head::Va,
        k => Head::new(k, Some(0.05)).unwrap(),
    }
}

fn data(vocab: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|i| {
            let ctx: Vec<usize> = (0..i).map(|_| rng.random_range(1..vocab)).collect();
            let mut y: Vec<usize> = (0..2 + 2 * i).map(|_| rng.random_range(1..vocab)).collect();
            y.push(0);
            Example {
                context: Context::new(ctx, 0).unwrap(),
                target: Sequence::new(y, 0).unwrap(),
            }
        })
        .collect()
}

fn model(cell: CellKind, layers: usize, tie: bool, kind: HeadKind, seed: u64) -> NeuralModel {
    let arch = Architecture {
        cell,
        layers,
        hidden: 4,
        tie_embeddings: tie,
    };
    let mut m = NeuralModel::new(Vocabulary::synthetic(6).unwrap(), arch, head(kind), seed).unwrap();
    // larger weights than the default init so the nonlinearities are not
    // all in their linear range
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for t in m.backbone_mut().params_mut().tensors_mut() {
        for x in &mut t.data {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    m
}

#[test]
fn all_cells_and_heads_match_finite_differences() {
    let mut seed = 0;
    for cell in [CellKind::Rnn, CellKind::Lstm] {
        for kind in [HeadKind::Va, HeadKind::St, HeadKind::Nmst] {
            for (layers, tie) in [(1, true), (2, false)] {
                seed += 1;
                let m = model(cell, layers, tie, kind, seed);
                let n = m.backbone().params().num_values();
                assert!(n <= 500, "{n} parameters");
                let r = gradient_check(&m, &data(6, seed), H);
                assert!(
                    r.max_relative_error < TOL,
                    "{cell} {kind} layers={layers} tied={tie}: {r:?}"
                );
            }
        }
    }
}

#[test]
fn gradients_are_zero_where_parameters_do_not_matter() {
    // with tied embeddings every row is used as output; untied, rows of
    // tokens never read as input get no input-side gradient
    let m = model(CellKind::Rnn, 1, false, HeadKind::Nmst, 3);
    let ex = [Example {
        context: Context::empty(),
        target: Sequence::new(vec![1, 0], 0).unwrap(),
    }];
    let (_, _, g) = nmst::net::batch_gradients(&m, &[&ex[0]], 0.0, 0);
    let emb = g.get(m.backbone().embedding_id());
    // inputs are eos then token 1; tokens 2..5 are never inputs
    for row in 2..6 {
        assert!(emb[row * 4..(row + 1) * 4].iter().all(|&x| x == 0.0), "row {row}");
    }
}

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nmst::decoding::{enumerate_decoder_distribution, step_support, DecoderKind};
use nmst::model::prefix_distribution;
use nmst::{ConditionalModel, Context, TableModel, TokenId, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Random table model over `vocab` tokens whose rows at the last level put
/// all mass on eos, so every continuation ends within `depth` tokens.
pub fn terminating_table(vocab: usize, depth: usize, seed: u64) -> TableModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TableModel::from_fn(Vocabulary::synthetic(vocab).unwrap(), depth, |prefix| {
        if prefix.len() + 1 == depth {
            let mut p = vec![0.0; vocab];
            p[0] = 1.0;
            return p;
        }
        let mut w: Vec<f64> = (0..vocab).map(|_| (2.0 * rng.random_range(-1.0..1.0f64)).exp()).collect();
        if rng.random_bool(0.2) {
            let (a, b) = (rng.random_range(0..vocab), rng.random_range(0..vocab));
            w[a] = w[b];
        }
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    })
    .unwrap()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleBeam {
    pub best: (Vec<TokenId>, f64),
    pub final_set: Vec<(Vec<TokenId>, f64)>,
    pub hit_cap: bool,
}

fn order(a: &(Vec<TokenId>, f64), b: &(Vec<TokenId>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Beam search written straight from its definition, recomputing every
/// distribution from the full prefix.
///
/// Each round forms P̃_t = {ρ∘v : ρ ∈ P_{t−1} unfinished, v among the k
/// most probable tokens after ρ with p > 0}, ranks it by score then
/// lexicographically, moves the finished members of the top k to the final
/// set, and keeps the top k unfinished members as P_t.
pub fn oracle_beam<M: ConditionalModel>(model: &M, ctx: &Context, k: usize, cap: usize) -> OracleBeam {
    let eos = model.vocab().eos_id();
    let mut active: Vec<(Vec<TokenId>, f64)> = vec![(vec![], 0.0)];
    let mut finals: Vec<(Vec<TokenId>, f64)> = vec![];
    loop {
        let mut cand = vec![];
        for (rho, score) in &active {
            let d = prefix_distribution(model, ctx, rho);
            let mut ids: Vec<TokenId> = (0..d.len()).collect();
            ids.sort_by(|&a, &b| d.prob(b).total_cmp(&d.prob(a)).then(a.cmp(&b)));
            for &v in ids.iter().take(k).filter(|&&v| d.prob(v) > 0.0) {
                let mut p = rho.clone();
                p.push(v);
                cand.push((p, score + d.log_prob(v)));
            }
        }
        cand.sort_by(order);
        finals.extend(cand.iter().take(k).filter(|c| *c.0.last().unwrap() == eos).cloned());
        let open: Vec<_> = cand.iter().filter(|c| *c.0.last().unwrap() != eos).cloned().collect();
        let len = cand.first().map_or(0, |c| c.0.len());
        if finals.len() >= k || open.is_empty() || len >= cap {
            let hit_cap = finals.len() < k && !open.is_empty();
            finals.sort_by(order);
            let mut pool = finals.clone();
            if hit_cap {
                pool.push(open[0].clone());
            }
            pool.sort_by(order);
            return OracleBeam {
                best: pool[0].clone(),
                final_set: finals,
                hit_cap,
            };
        }
        active = open.into_iter().take(k).collect();
    }
}

/// Exact decoder distribution by plain recursion over prefixes.
pub fn oracle_masses<M: ConditionalModel>(
    model: &M,
    ctx: &Context,
    kind: DecoderKind,
    max_len: usize,
) -> BTreeMap<Vec<TokenId>, f64> {
    fn go<M: ConditionalModel>(
        m: &M,
        ctx: &Context,
        kind: DecoderKind,
        max_len: usize,
        prefix: Vec<TokenId>,
        mass: f64,
        out: &mut BTreeMap<Vec<TokenId>, f64>,
    ) {
        let s = step_support(&prefix_distribution(m, ctx, &prefix), kind).unwrap();
        for (&v, &q) in s.kept_ids.iter().zip(&s.renormalized_probs) {
            let mut p = prefix.clone();
            p.push(v);
            if v == m.vocab().eos_id() {
                *out.entry(p).or_default() += mass * q;
            } else if p.len() < max_len {
                go(m, ctx, kind, max_len, p, mass * q, out);
            }
        }
    }
    let mut out = BTreeMap::new();
    go(model, ctx, kind, max_len, vec![], 1.0, &mut out);
    out
}

/// Pearson chi-square goodness of fit of `counts` against `expected`
/// probabilities. Cells with expected count below 5 are pooled.
pub fn chi_square_p_value(counts: &BTreeMap<Vec<TokenId>, usize>, expected: &BTreeMap<Vec<TokenId>, f64>, n: usize) -> f64 {
    let mut stat = 0.0;
    let mut cells = 0;
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (seq, &p) in expected {
        let e = p * n as f64;
        let o = counts.get(seq).copied().unwrap_or(0) as f64;
        if e < 5.0 {
            pooled_obs += o;
            pooled_exp += e;
        } else {
            stat += (o - e).powi(2) / e;
            cells += 1;
        }
    }
    let unexpected: usize = counts.iter().filter(|(s, _)| !expected.contains_key(*s)).map(|(_, &c)| c).sum();
    if unexpected > 0 {
        return 0.0;
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp.max(1e-300);
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

pub fn enumerated(model: &TableModel, kind: DecoderKind, depth: usize) -> BTreeMap<Vec<TokenId>, f64> {
    enumerate_decoder_distribution(model, &Context::empty(), kind, depth).unwrap().masses
}

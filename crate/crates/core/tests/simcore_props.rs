use convis_core::lexdb::{Hierarchy, Lexicon, Synset};
use convis_core::simcore::{max_rank_sim, rank_all, rank_sim, top_concepts, z_all, DefinitionMatrix};
use proptest::prelude::*;

fn unit(v: &[i8]) -> Vec<f32> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|&x| (x as f64 / n) as f32).collect()
}

/// Rows drawn from a small integer lattice so that exact ties are common.
fn rows(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<i8>>> {
    proptest::collection::vec(
        proptest::collection::vec(-2i8..=2, dim).prop_filter("nonzero", |v| v.iter().any(|&x| x != 0)),
        n,
    )
}

fn matrix(rows: &[Vec<i8>]) -> DefinitionMatrix {
    DefinitionMatrix::from_rows(
        rows.iter().enumerate().map(|(i, r)| (format!("s{i:03}"), unit(r))).collect(),
        "lattice",
        [0; 32],
    )
    .unwrap()
}

fn cos(x: &[f32], r: &[f32]) -> f64 {
    let d = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(&p, &q)| p as f64 * q as f64).sum::<f64>();
    (d(x, r) / (d(x, x).sqrt() * d(r, r).sqrt())).clamp(-1.0, 1.0)
}

/// Rank by literal counting: |{j : z_j < z_i}|.
fn brute_ranks(x: &[f32], m: &DefinitionMatrix) -> Vec<u32> {
    let z: Vec<f64> = (0..m.len()).map(|i| cos(x, m.row(i))).collect();
    (0..m.len())
        .map(|i| (0..m.len()).filter(|&j| z[j] < z[i]).count() as u32)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_all_matches_counting(
        (r, x) in (1usize..=200, 2usize..5).prop_flat_map(|(n, d)| (rows(n, d), proptest::collection::vec(-2i8..=2, d)))
    ) {
        prop_assume!(x.iter().any(|&v| v != 0));
        let m = matrix(&r);
        let q = unit(&x);
        let got = rank_all(&q, &m).unwrap();
        let want = brute_ranks(&q, &m);
        for (i, g) in got.iter().enumerate() {
            prop_assert_eq!(g.below(), want[i]);
            prop_assert_eq!(g.total() as usize, m.len());
            prop_assert_eq!(*g, rank_sim(&q, &m.ids()[i], &m).unwrap());
        }
        // z is unchanged by scaling the query by a power of two
        let q2: Vec<f32> = q.iter().map(|v| v * 4.0).collect();
        prop_assert_eq!(z_all(&q, &m).unwrap(), z_all(&q2, &m).unwrap());
        prop_assert_eq!(rank_all(&q2, &m).unwrap(), got);
    }

    #[test]
    fn rank_is_monotone_in_z(
        (r, x) in (2usize..60, 3usize..5).prop_flat_map(|(n, d)| (rows(n, d), proptest::collection::vec(-2i8..=2, d)))
    ) {
        prop_assume!(x.iter().any(|&v| v != 0));
        let m = matrix(&r);
        let q = unit(&x);
        let z = z_all(&q, &m).unwrap();
        let ranks = rank_all(&q, &m).unwrap();
        for i in 0..m.len() {
            for j in 0..m.len() {
                if z[i] < z[j] {
                    prop_assert!(ranks[i] < ranks[j]);
                } else if z[i] == z[j] {
                    prop_assert_eq!(ranks[i], ranks[j]);
                }
            }
        }
        let top = top_concepts(&q, &m, m.len()).unwrap();
        prop_assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn max_rank_matches_enumeration(
        parents in (2usize..30).prop_flat_map(|n| {
            (0..n).map(|i| proptest::collection::btree_set(0..i.max(1), if i == 0 { 0..=0 } else { 1..=i.min(3) }))
                .collect::<Vec<_>>()
        }),
        seed in proptest::collection::vec(-2i8..=2, 4 * 30),
        x in proptest::collection::vec(-2i8..=2, 4),
    ) {
        prop_assume!(x.iter().any(|&v| v != 0));
        let n = parents.len();
        let id = |i: usize| format!("c{i:02}");
        let lex = Lexicon::from_synsets(
            (0..n)
                .map(|i| Synset {
                    id: id(i),
                    lemmas: vec![],
                    definition: format!("def {i}"),
                    hypernym_ids: if i == 0 { vec![] } else { parents[i].iter().map(|&p| id(p)).collect() },
                })
                .collect(),
        )
        .unwrap();
        let h = Hierarchy::from_lexicon(&lex);
        let m = DefinitionMatrix::from_rows(
            (0..n)
                .map(|i| {
                    let mut r = seed[4 * i..4 * i + 4].to_vec();
                    if r.iter().all(|&v| v == 0) {
                        r[0] = 1;
                    }
                    (id(i), unit(&r))
                })
                .collect(),
            "dag",
            h.content_hash(),
        )
        .unwrap();
        let q = unit(&x);
        for i in 0..n {
            let s = id(i);
            let explicit = h
                .descendants(&s)
                .unwrap()
                .into_iter()
                .map(|d| rank_sim(&q, d, &m).unwrap())
                .max()
                .unwrap();
            let mr = max_rank_sim(&q, &s, &h, &m).unwrap();
            prop_assert_eq!(mr, explicit);
            prop_assert!(mr >= rank_sim(&q, &s, &m).unwrap());
            if h.children_of(&s).unwrap().is_empty() {
                prop_assert_eq!(mr, rank_sim(&q, &s, &m).unwrap());
            }
            for a in h.ancestors(&s).unwrap() {
                prop_assert!(max_rank_sim(&q, a, &h, &m).unwrap() >= mr);
            }
        }
    }
}

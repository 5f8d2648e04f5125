use proptest::prelude::*;
use quadsel::analysis::{self, UtilityTable};
use quadsel::criteria::gain;
use quadsel::model::{parse_problem, problem_to_json, Problem};
use quadsel::select;
use quadsel::synth::{self, Family};
use quadsel::{Criterion, Design};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Quadratic), Just(Family::Rank1), Just(Family::Linear)]
}

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![
        Just(Criterion::A),
        Just(Criterion::D),
        Just(Criterion::E),
        Just(Criterion::T)
    ]
}

fn instance() -> impl Strategy<Value = Problem> {
    (any::<u64>(), family(), 1usize..5, 2usize..8, -2.0f64..1.0).prop_map(
        |(seed, fam, m, n, log_s2)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            synth::problem(&mut rng, fam, m, n, 10f64.powf(log_s2))
        },
    )
}

fn mask_set(mask: usize, n: usize) -> Vec<usize> {
    (0..n).filter(|j| mask >> j & 1 == 1).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gains_are_nonnegative(p in instance(), c in criterion(), mask in any::<usize>(), j in any::<usize>()) {
        let design = Design::from_problem(&p).unwrap();
        let n = design.len();
        let j = j % n;
        let s: Vec<usize> = mask_set(mask, n).into_iter().filter(|&i| i != j).collect();
        let state = design.state_for(&s).unwrap();
        let g = gain(&state, design.atom(j), c).unwrap().value;
        prop_assert!(g >= 0.0);
        let raw = state.extend(design.atom(j)).unwrap().scalarize(c) - state.scalarize(c);
        prop_assert!(raw >= -1e-9 * state.scalarize(c).abs().max(1.0));
    }

    #[test]
    fn gain_matches_utility_difference(p in instance(), c in criterion(), mask in any::<usize>(), j in any::<usize>()) {
        let design = Design::from_problem(&p).unwrap();
        let n = design.len();
        let j = j % n;
        let s: Vec<usize> = mask_set(mask, n).into_iter().filter(|&i| i != j).collect();
        let mut t = s.clone();
        t.push(j);
        let diff = design.utility(&t, c).unwrap() - design.utility(&s, c).unwrap();
        let g = gain(&design.state_for(&s).unwrap(), design.atom(j), c).unwrap().value;
        prop_assert!((g - diff).abs() <= 1e-8 * diff.abs().max(1.0), "gain {g} vs difference {diff}");
    }

    #[test]
    fn trace_is_modular(p in instance(), a in any::<usize>(), b in any::<usize>(), j in any::<usize>()) {
        let design = Design::from_problem(&p).unwrap();
        let n = design.len();
        let j = j % n;
        let t = a & !(1 << j) & ((1 << n) - 1);
        let s = t & b;
        let gt = gain(&design.state_for(&mask_set(t, n)).unwrap(), design.atom(j), Criterion::T).unwrap().value;
        let gs = gain(&design.state_for(&mask_set(s, n)).unwrap(), design.atom(j), Criterion::T).unwrap().value;
        prop_assert!((gt - gs).abs() <= 1e-9 * gt.abs().max(1.0));
    }

    #[test]
    fn logdet_has_diminishing_returns(p in instance(), a in any::<usize>(), b in any::<usize>(), j in any::<usize>()) {
        let design = Design::from_problem(&p).unwrap();
        let n = design.len();
        let j = j % n;
        let t = a & !(1 << j) & ((1 << n) - 1);
        let s = t & b;
        let gt = gain(&design.state_for(&mask_set(t, n)).unwrap(), design.atom(j), Criterion::D).unwrap().value;
        let gs = gain(&design.state_for(&mask_set(s, n)).unwrap(), design.atom(j), Criterion::D).unwrap().value;
        prop_assert!(gt <= gs + 1e-9);
    }

    #[test]
    fn greedy_trace_is_consistent(p in instance(), c in criterion(), k in 1usize..8) {
        let design = Design::from_problem(&p).unwrap();
        let k = k.min(design.len());
        let r = select::greedy(&design, k, c).unwrap();
        prop_assert_eq!(r.chosen.len(), k);
        let mut sorted = r.chosen.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), k);
        prop_assert!(r.utility_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let direct = design.utility(&r.chosen, c).unwrap();
        prop_assert!((direct - r.final_utility).abs() <= 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn lazy_greedy_matches_greedy_for_d_and_t(p in instance(), k in 1usize..8, d in any::<bool>()) {
        let c = if d { Criterion::D } else { Criterion::T };
        let design = Design::from_problem(&p).unwrap();
        let k = k.min(design.len());
        let g = select::greedy(&design, k, c).unwrap();
        let l = select::lazy_greedy(&design, k, c, None).unwrap();
        prop_assert!((g.final_utility - l.final_utility).abs() <= 1e-9 * g.final_utility.abs().max(1.0));
    }

    #[test]
    fn exhaustive_dominates_every_method(p in instance(), c in criterion(), k in 1usize..4, seed in any::<u64>()) {
        let design = Design::from_problem(&p).unwrap();
        let k = k.min(design.len());
        let opt = select::exhaustive(&design, k, c, select::DEFAULT_EXHAUSTIVE_CAP).unwrap();
        let tol = 1e-9 * opt.final_utility.abs().max(1.0);
        for other in [
            select::greedy(&design, k, c).unwrap(),
            select::random(&design, k, c, seed).unwrap(),
            select::linearized(&p, k, c, None).unwrap(),
        ] {
            prop_assert!(other.final_utility <= opt.final_utility + tol);
        }
    }

    #[test]
    fn empirical_constants_respect_closed_forms(p in instance(), c in criterion()) {
        let rep = analysis::wsc_bruteforce(&p, c, 8).unwrap();
        prop_assert!(rep.is_sound(), "{rep:?}");
        if matches!(c, Criterion::D | Criterion::T) {
            prop_assert!(rep.c_empirical <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn greedy_meets_its_certificate(p in instance(), c in criterion(), k in 1usize..5) {
        let k = k.min(p.len());
        let rep = analysis::guarantee_check(&p, k, c, 8).unwrap();
        prop_assert!(rep.multiplicative_ok && rep.additive_ok, "{rep:?}");
    }

    #[test]
    fn nested_pairs_hold_with_empirical_constants(p in instance(), c in criterion(), a in any::<usize>(), b in any::<usize>()) {
        let design = Design::from_problem(&p).unwrap();
        let table = UtilityTable::build(&design, c, 8).unwrap();
        let emp = analysis::empirical_wsc(&table);
        let n = design.len();
        let t = a & ((1 << n) - 1);
        let s = t & b;
        let pair = analysis::nested_pair(&table, s, t, emp.c, emp.eps);
        prop_assert!(pair.lhs <= pair.additive + 1e-8);
        if emp.c.is_finite() {
            prop_assert!(pair.lhs <= pair.multiplicative + 1e-8);
        }
    }

    #[test]
    fn problem_json_round_trips(p in instance()) {
        let back = parse_problem(&problem_to_json(&p)).unwrap();
        prop_assert_eq!(back, p);
    }
}

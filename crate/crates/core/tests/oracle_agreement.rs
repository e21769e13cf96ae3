mod common;

use common::oracle::{self, Verdict};
use common::{corpus, params, to_oracle};
use whitney::kuo::Mode;
use whitney::whitney::{classify_triple, WhitneyError};

const SAMPLES: usize = 100_000;

#[test]
fn oracle_alone_matches_known_answers() {
    use oracle::Surface::*;
    let cases = [
        (Plane, [0.0, 0.0, 0.0], Verdict::Regular, Verdict::Regular),
        (Cone, [0.0, 0.0, 0.0], Verdict::Regular, Verdict::Regular),
        (Umbrella, [0.0, 0.0, 0.0], Verdict::Irregular, Verdict::Irregular),
        (Umbrella, [0.0, 0.0, 1.0], Verdict::Regular, Verdict::Regular),
        (
            Umbrella,
            [0.0, 0.0, -1.0],
            Verdict::NotInFrontier,
            Verdict::NotInFrontier,
        ),
        (Whitney, [0.0, 0.0, 0.0], Verdict::Regular, Verdict::Irregular),
        (Whitney, [0.0, 0.0, 1.0], Verdict::Regular, Verdict::Regular),
    ];
    for (s, x, a, b) in cases {
        assert_eq!(oracle::classify(s, &x, 20_000, 3), (a, b), "{s:?} at {x:?}");
    }
}

#[test]
fn tool_agrees_with_oracle_on_corpus() {
    let p = params();
    for t in corpus() {
        let (oa, ob) = oracle::classify(t.surface, &t.x, SAMPLES, 11);
        match classify_triple(&t.big, &t.small, &t.x, &p) {
            Ok(v) => {
                for (mode, want) in [(Mode::A, oa), (Mode::B, ob)] {
                    assert_eq!(to_oracle(v.status(mode)), want, "{} mode {mode:?}", t.name);
                }
            }
            Err(WhitneyError::NotInFrontier(_)) => {
                assert_eq!((oa, ob), (Verdict::NotInFrontier, Verdict::NotInFrontier), "{}", t.name)
            }
            Err(e) => panic!("{}: {e}", t.name),
        }
    }
}

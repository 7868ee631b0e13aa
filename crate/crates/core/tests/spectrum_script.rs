//! Request storms replayed through the script runner, checked against a
//! slot-array first-fit oracle with integer MHz.

use proptest::prelude::*;
use underlay_core::harness::{run_spectrum_scenario, SpectrumScript};

const SITES: [(i64, i64, i64); 3] = [(0, 0, 10), (1000, 0, 10), (500, 0, 600)];
const WIDTH: usize = 100;

#[derive(Debug, Clone)]
enum Op {
    Request { site: usize, bw: usize },
    Release { name: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..SITES.len(), 1usize..=110).prop_map(|(site, bw)| Op::Request { site, bw }),
        1 => (0usize..6).prop_map(|name| Op::Release { name }),
    ]
}

fn intersects(a: usize, b: usize) -> bool {
    let (ax, ay, ar) = SITES[a];
    let (bx, by, br) = SITES[b];
    let (dx, dy) = (ax - bx, ay - by);
    dx * dx + dy * dy <= (ar + br) * (ar + br)
}

struct Active {
    name: usize,
    site: usize,
    lo: usize,
    hi: usize,
}

/// Expected outcome string and block per op.
fn oracle(ops: &[(usize, Op)]) -> Vec<(String, Option<(usize, usize)>)> {
    let mut active: Vec<Active> = Vec::new();
    let mut out = Vec::new();
    for (name, op) in ops {
        match *op {
            Op::Request { site, bw } => {
                if bw > WIDTH {
                    out.push(("rejected: oversized request".into(), None));
                    continue;
                }
                let mut used = [false; WIDTH];
                for a in active.iter().filter(|a| intersects(a.site, site)) {
                    used[a.lo..a.hi].iter_mut().for_each(|u| *u = true);
                }
                match (0..=WIDTH - bw).find(|&s| used[s..s + bw].iter().all(|u| !u)) {
                    Some(lo) => {
                        active.push(Active {
                            name: *name,
                            site,
                            lo,
                            hi: lo + bw,
                        });
                        out.push(("granted".into(), Some((lo, lo + bw))));
                    }
                    None => out.push(("rejected: no contiguous free block".into(), None)),
                }
            }
            Op::Release { name } => match active.iter().rposition(|a| a.name == name) {
                Some(i) => {
                    active.remove(i);
                    out.push(("released".into(), None));
                }
                None => out.push(("not-found".into(), None)),
            },
        }
    }
    out
}

fn script(ops: &[(usize, Op)]) -> String {
    let mut text = String::from("band 3700 3800\n");
    for (t, (name, op)) in ops.iter().enumerate() {
        match op {
            Op::Request { site, bw } => {
                let (x, y, r) = SITES[*site];
                text.push_str(&format!("{t} request n{name} {x} {y} {r} {bw}\n"));
            }
            Op::Release { name } => text.push_str(&format!("{t} release n{name}\n")),
        }
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn storm_matches_oracle(ops in prop::collection::vec((0usize..6, op()), 1..80)) {
        let parsed = SpectrumScript::parse(&script(&ops)).unwrap();
        let log = run_spectrum_scenario(&parsed).unwrap();
        let expected = oracle(&ops);
        prop_assert_eq!(log.events.len(), expected.len());
        for (e, (outcome, block)) in log.events.iter().zip(&expected) {
            prop_assert_eq!(&e.outcome, outcome, "line {}", e.line);
            let got = e.block_mhz.map(|(lo, hi)| ((lo - 3700.0) as usize, (hi - 3700.0) as usize));
            if outcome == "granted" {
                prop_assert_eq!(got, *block, "line {}", e.line);
            }
        }
        let rejected = expected.iter().filter(|(o, _)| o.starts_with("rejected")).count();
        prop_assert_eq!(log.rejected(), rejected);
    }
}

#[test]
fn storm_over_capacity_rejects_the_excess() {
    // Twelve 10 MHz requests at one site: ten fit, two do not.
    let ops: Vec<(usize, Op)> = (0..12).map(|i| (i % 6, Op::Request { site: 0, bw: 10 })).collect();
    let log = run_spectrum_scenario(&SpectrumScript::parse(&script(&ops)).unwrap()).unwrap();
    assert_eq!(log.granted(), 10);
    assert_eq!(log.rejected(), 2);
    assert_eq!(log.occupancy.iter().map(|o| o.total_mhz).fold(0.0, f64::max), 100.0);
}

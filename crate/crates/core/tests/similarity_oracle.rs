mod common;

use std::time::Instant;

use common::oracles::{ro_ratio_naive, strings_of_len, XorShift};
use pipewright::eval::similarity;

#[test]
fn exhaustive_pairs_over_three_letters() {
    let started = Instant::now();
    let by_len: Vec<Vec<String>> = (0..=12).map(|n| strings_of_len(&['a', 'b', 'c'], n)).collect();
    let mut checked = 0u64;
    for la in 0..=12 {
        for lb in 0..=12 - la {
            for a in &by_len[la] {
                for b in &by_len[lb] {
                    let got = similarity(a, b);
                    assert_eq!(got, ro_ratio_naive(a, b), "{a:?} vs {b:?}");
                    checked += 1;
                }
            }
        }
    }
    println!("{checked} pairs in {:?}", started.elapsed());
}

#[test]
fn random_pairs_up_to_64() {
    let mut rng = XorShift(0x9E37_79B9_7F4A_7C15);
    let alphabet: Vec<char> = "abcde-_: \n".chars().collect();
    let gen = |rng: &mut XorShift| -> String {
        let len = rng.below(65) as usize;
        (0..len).map(|_| alphabet[rng.below(alphabet.len() as u64) as usize]).collect()
    };
    for _ in 0..1000 {
        let a = gen(&mut rng);
        let b = gen(&mut rng);
        let got = similarity(&a, &b);
        assert_eq!(got, ro_ratio_naive(&a, &b), "{a:?} vs {b:?}");
        assert_eq!(got, similarity(&b, &a));
        assert!((0.0..=1.0).contains(&got));
    }
}

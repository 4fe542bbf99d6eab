//! Independent reference implementations used by the test suites.

/// Matched-character count by brute force: try every (i, j) start pair,
/// extend while equal, keep the first strictly longest block, then recurse
/// on both sides.
pub fn ro_matches_naive(a: &[char], b: &[char]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let (mut bi, mut bj, mut bk) = (0, 0, 0);
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut k = 0;
            while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                k += 1;
            }
            if k > bk {
                (bi, bj, bk) = (i, j, k);
            }
        }
    }
    if bk == 0 {
        return 0;
    }
    bk + ro_matches_naive(&a[..bi], &b[..bj]) + ro_matches_naive(&a[bi + bk..], &b[bj + bk..])
}

/// Ratio with the same argument ordering convention: smaller string first.
pub fn ro_ratio_naive(a: &str, b: &str) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * ro_matches_naive(&a, &b) as f64 / (a.len() + b.len()) as f64
}

/// Direct double sum over all ordered pairs.
pub fn gini_double_sum(counts: &[u64]) -> f64 {
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let mut total = 0.0;
    for &ci in counts {
        for &cj in counts {
            total += (ci as f64 - cj as f64).abs();
        }
    }
    total / (2.0 * n * n * mean)
}

/// All strings over `alphabet` of exactly `len` characters.
pub fn strings_of_len(alphabet: &[char], len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for _ in 0..len {
        out = out
            .iter()
            .flat_map(|s| alphabet.iter().map(move |c| format!("{s}{c}")))
            .collect();
    }
    out
}

/// Small deterministic generator (xorshift64*), so oracle inputs do not
/// depend on the code under test.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

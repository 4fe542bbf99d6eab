//! Ratcliff–Obershelp ratio over characters.
//!
//! The longest common block is taken first (earliest in the first string,
//! then earliest in the second), and the unmatched pieces on either side are
//! matched recursively. The pair is put in lexicographic order before
//! matching so the ratio does not depend on argument order.

/// A common block `a[a_start..a_start + len] == b[b_start..b_start + len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

struct Matcher<'a> {
    a: &'a [char],
    b: &'a [char],
    prev: Vec<usize>,
    cur: Vec<usize>,
}

impl Matcher<'_> {
    /// Longest block inside `a[alo..ahi]` x `b[blo..bhi]`.
    fn longest(&mut self, alo: usize, ahi: usize, blo: usize, bhi: usize) -> Block {
        let mut best = Block {
            a_start: alo,
            b_start: blo,
            len: 0,
        };
        // prev[j - blo + 1] is the length of the common suffix ending at a[i-1], b[j].
        let width = bhi - blo + 1;
        self.prev.clear();
        self.prev.resize(width, 0);
        self.cur.clear();
        self.cur.resize(width, 0);
        for i in alo..ahi {
            for j in blo..bhi {
                let k = if self.a[i] == self.b[j] { self.prev[j - blo] + 1 } else { 0 };
                self.cur[j - blo + 1] = k;
                if k > best.len {
                    best = Block {
                        a_start: i + 1 - k,
                        b_start: j + 1 - k,
                        len: k,
                    };
                }
            }
            std::mem::swap(&mut self.prev, &mut self.cur);
        }
        best
    }
}

/// Matching blocks of `a` against `b`, sorted by position.
pub fn matching_blocks(a: &[char], b: &[char]) -> Vec<Block> {
    let mut m = Matcher {
        a,
        b,
        prev: Vec::new(),
        cur: Vec::new(),
    };
    let mut blocks = Vec::new();
    let mut stack = vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = stack.pop() {
        if alo >= ahi || blo >= bhi {
            continue;
        }
        let block = m.longest(alo, ahi, blo, bhi);
        if block.len == 0 {
            continue;
        }
        blocks.push(block);
        stack.push((alo, block.a_start, blo, block.b_start));
        stack.push((block.a_start + block.len, ahi, block.b_start + block.len, bhi));
    }
    blocks.sort_by_key(|b| (b.a_start, b.b_start));
    blocks
}

/// `2 * M / (|a| + |b|)` where `M` is the number of matched characters.
/// Two empty strings are identical.
pub fn similarity(a: &str, b: &str) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    let matched: usize = matching_blocks(&a, &b).iter().map(|blk| blk.len).sum();
    2.0 * matched as f64 / total as f64
}

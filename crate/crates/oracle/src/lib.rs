//! Reference models for the alpha-entanglement lattice, written against
//! (row, column) coordinates and plain Gaussian elimination over GF(2).
//!
//! Nothing here calls into `entangled-core`; the test suites use these
//! models to check the production encoder and repair engine.

/// A variable of the linear system: a data block or one parity edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Data block at 1-based lattice index.
    Data(usize),
    /// Parity leaving the 1-based lattice index `from` along class `class`
    /// (0 = horizontal, 1 = right-handed, 2 = left-handed).
    Parity { class: usize, from: usize },
}

/// AE(alpha, s, s) lattice over `n` data blocks.
#[derive(Debug, Clone, Copy)]
pub struct RefLattice {
    pub alpha: usize,
    pub s: usize,
    pub n: usize,
}

impl RefLattice {
    pub fn new(alpha: usize, s: usize, n: usize) -> Self {
        assert!((1..=3).contains(&alpha) && s >= 1 && n >= 1);
        Self { alpha, s, n }
    }

    fn coords(&self, index: usize) -> (usize, usize) {
        ((index - 1) % self.s, (index - 1) / self.s)
    }

    fn index(&self, row: usize, col: usize) -> usize {
        col * self.s + row + 1
    }

    /// Next index along the strand through `index`; may exceed `n`.
    pub fn next(&self, index: usize, class: usize) -> usize {
        let (r, c) = self.coords(index);
        let row = match class {
            0 => r,
            1 => (r + 1) % self.s,
            2 => (r + self.s - 1) % self.s,
            _ => unreachable!(),
        };
        self.index(row, c + 1)
    }

    /// Previous index along the strand, `None` for column-0 heads.
    pub fn prev(&self, index: usize, class: usize) -> Option<usize> {
        let (r, c) = self.coords(index);
        if c == 0 {
            return None;
        }
        let row = match class {
            0 => r,
            1 => (r + self.s - 1) % self.s,
            2 => (r + 1) % self.s,
            _ => unreachable!(),
        };
        Some(self.index(row, c - 1))
    }

    /// All variables in a fixed order: data first, then parities by class.
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = (1..=self.n).map(Var::Data).collect();
        for class in 0..self.alpha {
            for from in 1..=self.n {
                out.push(Var::Parity { class, from });
            }
        }
        out
    }

    pub fn var_index(&self, v: Var) -> usize {
        match v {
            Var::Data(i) => i - 1,
            Var::Parity { class, from } => self.n + class * self.n + (from - 1),
        }
    }

    /// One equation per parity: P(c, i) + d_i + P(c, prev(i)) = 0.
    pub fn equations(&self) -> Vec<BitRow> {
        let width = self.n * (1 + self.alpha);
        let mut rows = Vec::new();
        for class in 0..self.alpha {
            for i in 1..=self.n {
                let mut row = BitRow::zero(width);
                row.flip(self.var_index(Var::Parity { class, from: i }));
                row.flip(self.var_index(Var::Data(i)));
                if let Some(p) = self.prev(i, class) {
                    row.flip(self.var_index(Var::Parity { class, from: p }));
                }
                rows.push(row);
            }
        }
        rows
    }

    /// Erasure pattern whose only route to `d_target` consumes exactly `k`
    /// parities in one direction: the target plus, on every class, the
    /// `k - 1` parities leading into it. `None` when a strand head is
    /// closer than `k` hops.
    pub fn chain_pattern(&self, target: usize, k: usize) -> Option<Vec<Var>> {
        assert!(k >= 1);
        let mut out = vec![Var::Data(target)];
        for class in 0..self.alpha {
            let mut cur = target;
            for _ in 0..k - 1 {
                let p = self.prev(cur, class)?;
                out.push(Var::Parity { class, from: p });
                cur = p;
            }
            self.prev(cur, class)?;
        }
        Some(out)
    }

    /// For every erased variable, whether the remaining known variables
    /// pin its value down uniquely.
    pub fn determined(&self, erased: &[Var]) -> Vec<bool> {
        let eqs = self.equations();
        let cols: Vec<usize> = erased.iter().map(|v| self.var_index(*v)).collect();
        // Restrict every equation to the erased columns.
        let restricted: Vec<BitRow> = eqs
            .iter()
            .map(|eq| {
                let mut r = BitRow::zero(cols.len());
                for (k, c) in cols.iter().enumerate() {
                    if eq.get(*c) {
                        r.flip(k);
                    }
                }
                r
            })
            .collect();
        let full = rank(restricted.clone());
        (0..cols.len())
            .map(|k| {
                let without: Vec<BitRow> = restricted
                    .iter()
                    .map(|r| {
                        let mut r = r.clone();
                        if r.get(k) {
                            r.flip(k);
                        }
                        r
                    })
                    .collect();
                rank(without) < full
            })
            .collect()
    }

    /// Whether every erased variable is determined.
    pub fn solvable(&self, erased: &[Var]) -> bool {
        self.determined(erased).into_iter().all(|d| d)
    }

    /// Parity values implied by `data` (all blocks the same length), found
    /// by eliminating the full system with every data variable known.
    pub fn parities(&self, data: &[Vec<u8>]) -> Vec<(Var, Vec<u8>)> {
        assert_eq!(data.len(), self.n);
        let len = data[0].len();
        let known: Vec<(Var, Vec<u8>)> = (1..=self.n).map(|i| (Var::Data(i), data[i - 1].clone())).collect();
        let unknown: Vec<Var> = self.vars().into_iter().skip(self.n).collect();
        let solved = self.solve(&known, &unknown, len);
        unknown.into_iter().zip(solved).map(|(v, x)| (v, x.expect("parities are determined by data"))).collect()
    }

    /// Solve for `unknown` given values of `known`; `None` for variables the
    /// system leaves free.
    pub fn solve(&self, known: &[(Var, Vec<u8>)], unknown: &[Var], len: usize) -> Vec<Option<Vec<u8>>> {
        let eqs = self.equations();
        let value_of: std::collections::HashMap<usize, &Vec<u8>> = known.iter().map(|(v, b)| (self.var_index(*v), b)).collect();
        let cols: Vec<usize> = unknown.iter().map(|v| self.var_index(*v)).collect();
        let mut rows: Vec<(BitRow, Vec<u8>)> = eqs
            .iter()
            .map(|eq| {
                let mut r = BitRow::zero(cols.len());
                let mut rhs = vec![0u8; len];
                for c in eq.ones() {
                    if let Some(k) = cols.iter().position(|x| *x == c) {
                        r.flip(k);
                    } else if let Some(b) = value_of.get(&c) {
                        for (o, x) in rhs.iter_mut().zip(b.iter()) {
                            *o ^= x;
                        }
                    }
                }
                (r, rhs)
            })
            .collect();
        // Reduced row echelon form.
        let mut pivot_row = 0;
        let mut pivots = Vec::new();
        for col in 0..cols.len() {
            let Some(sel) = (pivot_row..rows.len()).find(|&r| rows[r].0.get(col)) else {
                continue;
            };
            rows.swap(pivot_row, sel);
            let (prow, prhs) = rows[pivot_row].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != pivot_row && row.0.get(col) {
                    row.0.xor_with(&prow);
                    for (o, x) in row.1.iter_mut().zip(prhs.iter()) {
                        *o ^= x;
                    }
                }
            }
            pivots.push((pivot_row, col));
            pivot_row += 1;
        }
        let mut out = vec![None; cols.len()];
        for (r, col) in pivots {
            // Determined iff the pivot row has no other free column.
            if rows[r].0.ones().count() == 1 {
                out[col] = Some(rows[r].1.clone());
            }
        }
        out
    }
}

/// Dense GF(2) row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitRow {
    words: Vec<u64>,
    width: usize,
}

impl BitRow {
    pub fn zero(width: usize) -> Self {
        Self { words: vec![0; width.div_ceil(64).max(1)], width }
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn xor_with(&mut self, other: &BitRow) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|i| self.get(*i))
    }
}

/// Rank over GF(2).
pub fn rank(mut rows: Vec<BitRow>) -> usize {
    let Some(width) = rows.first().map(|r| r.width) else {
        return 0;
    };
    let mut r = 0;
    for col in 0..width {
        let Some(sel) = (r..rows.len()).find(|&i| rows[i].get(col)) else {
            continue;
        };
        rows.swap(r, sel);
        let pivot = rows[r].clone();
        for row in rows.iter_mut().skip(r + 1) {
            if row.get(col) {
                row.xor_with(&pivot);
            }
        }
        r += 1;
    }
    r
}

/// Every subset of `items` with size at most `k`, in lexicographic order.
pub fn subsets_up_to<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    fn rec<T: Copy>(items: &[T], start: usize, k: usize, cur: &mut Vec<T>, out: &mut Vec<Vec<T>>) {
        out.push(cur.clone());
        if cur.len() == k {
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, i + 1, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, 0, k, &mut Vec::new(), &mut out);
    out
}

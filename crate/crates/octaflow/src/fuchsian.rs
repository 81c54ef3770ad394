//! The octagon Fuchsian group: words, Dehn reduction, conjugacy classes,
//! and the deduplicated ball cache behind `identify`.
//!
//! Letters are coded 0..=7: `0..=3` are the generators g0..g3, `4..=7`
//! their inverses (inverse = code XOR 4).  Lexicographic order on codes is
//! the order used for canonical forms.  Text form: `a b c d` for
//! generators, `A B C D` for inverses, e.g. `"abAB"`.

use crate::moebius::{
    self, a_t, axis_normal_form, classify, d_theta, group_distance, invert, trace, ElementClass,
    MoebiusElement,
};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;
use std::sync::{Arc, OnceLock};
use thiserror::Error;

pub type Letter = u8;

pub fn inverse_letter(l: Letter) -> Letter {
    l ^ 4
}

/// Octagon relator `g0 g1' g2 g3' g0' g1 g2' g3` in letter codes
/// (a prime denotes the inverse).
pub const RELATOR: [Letter; 8] = [0, 5, 2, 7, 4, 1, 6, 3];

/// Word length of the seed ball in the cache construction.  Covers every
/// group element with hyperbolic displacement `<= 7.45` (verified by an
/// exhaustive length-7 enumeration; see the ignored completeness test).
const CACHE_BASE_LEN: usize = 5;
/// Kept hyperbolic displacement radius.  `identify` between two
/// Dirichlet-reduced points only ever needs deck elements with operator
/// norm `e^{d/2}` bounded by (octagon circumradius factors) x (match
/// tolerance factor), i.e. `d <= 2*2.449 + 2*1.53 + slack < 9.8`.
const CACHE_KEEP_RADIUS: f64 = 9.8;
/// Hyperbolic-plane radius for the small deck used in
/// configuration-space prefilters.
const CFG_DECK_RADIUS: f64 = 5.8;

/// Circumradius of the fundamental octagon: `tanh(R/2) = 2^(-1/4)`.
pub fn octagon_circumradius() -> f64 {
    2.0 * 0.5_f64.sqrt().sqrt().atanh()
}

#[derive(Debug, Error)]
pub enum FuchsianError {
    #[error("identify tolerance {0:.3e} must stay below sigma0/2 = {1:.3e}")]
    ToleranceTooLarge(f64, f64),
    #[error("ball cache too small: nearest candidate at {nearest:.3e}, tolerance {tol:.3e}")]
    BallTooSmall { nearest: f64, tol: f64 },
    #[error("no deck element within {tol:.3e} (nearest {nearest:.3e})")]
    NoMatch { nearest: f64, tol: f64 },
    #[error("word evaluates to a non-hyperbolic element (trace {0:.6})")]
    NotHyperbolicWord(f64),
    #[error("invalid letter code {0}")]
    BadLetter(u8),
}

/// A word in the group generators; letter codes as documented on
/// [`RELATOR`].  Serializes as signed indices: `+(k+1)` for gk,
/// `-(k+1)` for gk'.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(pub Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inverse(&self) -> Word {
        Word(self.0.iter().rev().map(|&l| inverse_letter(l)).collect())
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn rotated(&self, k: usize) -> Word {
        if self.0.is_empty() {
            return self.clone();
        }
        let n = self.0.len();
        let k = k % n;
        let mut v = Vec::with_capacity(n);
        v.extend_from_slice(&self.0[k..]);
        v.extend_from_slice(&self.0[..k]);
        Word(v)
    }

    /// Parses the compact text form, e.g. `"abA"`; whitespace and commas
    /// are ignored.
    pub fn parse(s: &str) -> Result<Word, FuchsianError> {
        let mut v = Vec::new();
        for ch in s.chars() {
            if ch.is_whitespace() || ch == ',' {
                continue;
            }
            let l = match ch {
                'a' => 0,
                'b' => 1,
                'c' => 2,
                'd' => 3,
                'A' => 4,
                'B' => 5,
                'C' => 6,
                'D' => 7,
                _ => return Err(FuchsianError::BadLetter(ch as u8)),
            };
            v.push(l);
        }
        Ok(Word(v))
    }
}

impl std::fmt::Display for Word {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        for &l in &self.0 {
            let ch = match l {
                0 => 'a',
                1 => 'b',
                2 => 'c',
                3 => 'd',
                4 => 'A',
                5 => 'B',
                6 => 'C',
                7 => 'D',
                _ => '?',
            };
            write!(f, "{ch}")?;
        }
        Ok(())
    }
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let signed: Vec<i32> = self
            .0
            .iter()
            .map(|&l| {
                if l < 4 {
                    l as i32 + 1
                } else {
                    -((l as i32) - 4 + 1)
                }
            })
            .collect();
        signed.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let signed = Vec::<i32>::deserialize(d)?;
        let mut v = Vec::with_capacity(signed.len());
        for x in signed {
            if x == 0 || x.abs() > 4 {
                return Err(D::Error::custom(format!("bad signed letter {x}")));
            }
            v.push(if x > 0 { (x - 1) as u8 } else { (-x - 1) as u8 + 4 });
        }
        Ok(Word(v))
    }
}

// ---------------------------------------------------------------------------
// Word reduction (free + Dehn).

fn free_reduce_into(letters: &[Letter]) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::with_capacity(letters.len());
    for &l in letters {
        if let Some(&last) = out.last() {
            if last == inverse_letter(l) {
                out.pop();
                continue;
            }
        }
        out.push(l);
    }
    out
}

struct DehnTables {
    /// (pattern, replacement): pattern is a >half-relator subword
    /// (length 5..=8), replacement the inverse of the complementary side
    /// (length 3..=0).  Sorted by decreasing pattern length.
    rules: Vec<(Vec<Letter>, Vec<Letter>)>,
    /// Exactly-half swaps: 4-letter pattern -> 4-letter replacement.
    half: Vec<([Letter; 4], [Letter; 4])>,
}

fn dehn_tables() -> &'static DehnTables {
    static TABLES: OnceLock<DehnTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let r = Word(RELATOR.to_vec());
        let mut rots: Vec<Word> = Vec::new();
        for k in 0..8 {
            rots.push(r.rotated(k));
            rots.push(r.inverse().rotated(k));
        }
        let mut rules = Vec::new();
        let mut half = Vec::new();
        for rho in &rots {
            for k in 5..=8usize {
                let pattern = rho.0[..k].to_vec();
                let complement = Word(rho.0[k..].to_vec());
                rules.push((pattern, complement.inverse().0));
            }
            let pat: [Letter; 4] = rho.0[..4].try_into().unwrap();
            let rep_word = Word(rho.0[4..].to_vec()).inverse();
            let rep: [Letter; 4] = rep_word.0.try_into().unwrap();
            half.push((pat, rep));
        }
        rules.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
        DehnTables { rules, half }
    })
}

fn find_rule(letters: &[Letter]) -> Option<(usize, &'static (Vec<Letter>, Vec<Letter>))> {
    let t = dehn_tables();
    for rule in &t.rules {
        let plen = rule.0.len();
        if plen > letters.len() {
            continue;
        }
        for start in 0..=(letters.len() - plen) {
            if letters[start..start + plen] == rule.0[..] {
                return Some((start, rule));
            }
        }
    }
    None
}

/// Free reduction plus Dehn's algorithm: any subword covering more than
/// half of a cyclic rotation of the relator (or its inverse) is replaced
/// by the shorter complementary side, until no such subword remains.
pub fn reduce_word(w: &Word) -> Word {
    let mut letters = free_reduce_into(&w.0);
    loop {
        match find_rule(&letters) {
            None => break,
            Some((start, (pat, rep))) => {
                let mut next = Vec::with_capacity(letters.len());
                next.extend_from_slice(&letters[..start]);
                next.extend_from_slice(rep);
                next.extend_from_slice(&letters[start + pat.len()..]);
                letters = free_reduce_into(&next);
            }
        }
    }
    Word(letters)
}

/// Cyclic reduction: conjugacy-invariant strip of matching first/last
/// letters, plus Dehn reduction applied cyclically (patterns may wrap).
fn cyclic_dehn_reduce(w: &Word) -> Word {
    let mut cur = reduce_word(w).0;
    'outer: loop {
        while cur.len() >= 2 && cur[0] == inverse_letter(*cur.last().unwrap()) {
            cur = free_reduce_into(&cur[1..cur.len() - 1]);
        }
        let n = cur.len();
        if n == 0 {
            break;
        }
        // wraps: search patterns in the doubled word starting inside [0, n)
        let mut doubled = cur.clone();
        doubled.extend_from_slice(&cur);
        let t = dehn_tables();
        for rule in &t.rules {
            let plen = rule.0.len();
            if plen > n {
                continue;
            }
            for start in 0..n {
                if doubled[start..start + plen] == rule.0[..] {
                    // rotate so the match is a prefix, then replace
                    let rot = Word(cur.clone()).rotated(start);
                    let mut next = rule.1.clone();
                    next.extend_from_slice(&rot.0[plen..]);
                    cur = reduce_word(&Word(next)).0;
                    continue 'outer;
                }
            }
        }
        break;
    }
    Word(cur)
}

/// All equal-length conjugates reachable by one exactly-half relator swap
/// on the cyclic word.
fn half_swaps(w: &Word) -> Vec<Word> {
    let n = w.0.len();
    if n < 4 {
        return Vec::new();
    }
    let t = dehn_tables();
    let mut doubled = w.0.clone();
    doubled.extend_from_slice(&w.0);
    let mut out = Vec::new();
    for (pat, rep) in &t.half {
        for start in 0..n {
            if doubled[start..start + 4] == pat[..] {
                let rot = w.rotated(start);
                let mut next = rep.to_vec();
                next.extend_from_slice(&rot.0[4..]);
                out.push(Word(next));
            }
        }
    }
    out
}

/// Canonical conjugacy-class representative: cyclically Dehn-reduce, then
/// close the cyclic word under rotations and exactly-half relator swaps
/// and take the lexicographically least member.
///
/// Inverse words are *not* identified: `{w}` and `{w^{-1}}` get distinct
/// canonical forms unless the element is conjugate to its inverse.
pub fn canonical_class(w: &Word) -> Word {
    let mut seed = cyclic_dehn_reduce(w);
    'restart: loop {
        if seed.is_empty() {
            return seed;
        }
        let n = seed.len();
        let mut seen: std::collections::BTreeSet<Word> = std::collections::BTreeSet::new();
        let mut queue: Vec<Word> = vec![seed.clone()];
        while let Some(v) = queue.pop() {
            for k in 0..v.len() {
                let rot = v.rotated(k);
                if seen.insert(rot.clone()) {
                    queue.push(rot);
                }
            }
            for sw in half_swaps(&v) {
                let sw = cyclic_dehn_reduce(&sw);
                if sw.len() < n {
                    seed = sw;
                    continue 'restart;
                }
                if sw.len() == n && seen.insert(sw.clone()) {
                    queue.push(sw);
                }
            }
            assert!(
                seen.len() < 100_000,
                "conjugacy orbit blowup for word {seed}: bug in swap closure"
            );
        }
        return seen.into_iter().next().unwrap();
    }
}

/// True when the canonical cyclic form of `w` is not a proper power: no
/// proper divisor d of the length makes any orbit representative a
/// repetition of its length-d prefix.
pub fn is_primitive(w: &Word) -> bool {
    let seed = canonical_class(w);
    let n = seed.len();
    if n == 0 {
        return false;
    }
    // Collect the rotation+swap orbit again and check periodicity of each
    // member: a proper power stays a proper power under both moves.
    let mut seen: std::collections::BTreeSet<Word> = std::collections::BTreeSet::new();
    let mut queue = vec![seed];
    while let Some(v) = queue.pop() {
        if word_is_periodic(&v) {
            return false;
        }
        for k in 0..v.len() {
            let rot = v.rotated(k);
            if seen.insert(rot.clone()) {
                queue.push(rot);
            }
        }
        for sw in half_swaps(&v) {
            let sw = cyclic_dehn_reduce(&sw);
            if sw.len() == n && seen.insert(sw.clone()) {
                queue.push(sw);
            }
        }
    }
    true
}

fn word_is_periodic(w: &Word) -> bool {
    let n = w.0.len();
    for d in 1..n {
        if n % d == 0 && w.0.iter().enumerate().all(|(i, &l)| l == w.0[i % d]) {
            return true;
        }
    }
    false
}

/// Primitive root and exponent: returns `(r, k)` with `{w} = {r^k}` as
/// conjugacy classes and `r` primitive.  Searches the rotation+swap orbit
/// for an exactly periodic member (mirroring `is_primitive`) and recurses
/// on its repeating block, so hidden powers exposed only after relator
/// swaps are still split.
pub fn primitive_root(w: &Word) -> (Word, u32) {
    let seed = canonical_class(w);
    let n = seed.len();
    if n == 0 {
        return (seed, 1);
    }
    let mut seen: std::collections::BTreeSet<Word> = std::collections::BTreeSet::new();
    let mut queue = vec![seed.clone()];
    while let Some(v) = queue.pop() {
        for d in 1..v.len() {
            if v.len() % d == 0 && v.0.iter().enumerate().all(|(i, &l)| l == v.0[i % d]) {
                let block = Word(v.0[..d].to_vec());
                let (root, k) = primitive_root(&block);
                return (root, k * (n / d) as u32);
            }
        }
        for k in 0..v.len() {
            let rot = v.rotated(k);
            if seen.insert(rot.clone()) {
                queue.push(rot);
            }
        }
        for sw in half_swaps(&v) {
            let sw = cyclic_dehn_reduce(&sw);
            if sw.len() == n && seen.insert(sw.clone()) {
                queue.push(sw);
            }
        }
    }
    (seed, 1)
}

// ---------------------------------------------------------------------------
// Hyperbolic-plane helpers (upper half plane, base point i).

/// Moebius action of `m` on the base point i, as (re, im).
pub fn act_on_i(m: &MoebiusElement) -> (f64, f64) {
    let [a, b, c, d] = m.entries();
    // (a i + b) / (c i + d)
    let den = c * c + d * d;
    ((b * d + a * c) / den, (a * d - b * c) / den)
}

/// Moebius action of `m` on an arbitrary upper-half-plane point.
pub fn act_on_point(m: &MoebiusElement, z: (f64, f64)) -> (f64, f64) {
    let [a, b, c, d] = m.entries();
    let (nr, ni) = (a * z.0 + b, a * z.1);
    let (dr, di) = (c * z.0 + d, c * z.1);
    let den = dr * dr + di * di;
    ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
}

/// Hyperbolic distance between two upper half plane points.
pub fn h2_distance(z: (f64, f64), w: (f64, f64)) -> f64 {
    let dx = z.0 - w.0;
    let dy = z.1 - w.1;
    (1.0 + (dx * dx + dy * dy) / (2.0 * z.1 * w.1)).acosh()
}

fn h2_dist_to_i(m: &MoebiusElement) -> f64 {
    h2_distance(act_on_i(m), (0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Deduplication of matrices up to floating-point jitter.
//
// Distinct group elements are separated by the injectivity margin, so a
// coarse spatial hash with boundary-aware probing is exact here: buckets
// at grid 1e-5, and membership checks probe every cell an entry within
// 1e-7 of the query could fall into.

struct MatSet {
    cells: HashMap<[i64; 4], Vec<MoebiusElement>>,
}

const MATSET_GRID: f64 = 1e-5;
const MATSET_SLOP: f64 = 1e-7;

impl MatSet {
    fn new() -> Self {
        MatSet { cells: HashMap::new() }
    }

    fn cell(m: &MoebiusElement) -> [i64; 4] {
        let e = m.entries();
        [
            (e[0] / MATSET_GRID).floor() as i64,
            (e[1] / MATSET_GRID).floor() as i64,
            (e[2] / MATSET_GRID).floor() as i64,
            (e[3] / MATSET_GRID).floor() as i64,
        ]
    }

    fn insert(&mut self, m: &MoebiusElement) {
        self.cells.entry(Self::cell(m)).or_default().push(*m);
    }

    fn contains(&self, m: &MoebiusElement) -> bool {
        let e = m.entries();
        let mut lo = [0i64; 4];
        let mut hi = [0i64; 4];
        for i in 0..4 {
            lo[i] = ((e[i] - MATSET_SLOP) / MATSET_GRID).floor() as i64;
            hi[i] = ((e[i] + MATSET_SLOP) / MATSET_GRID).floor() as i64;
        }
        let mut probe = [0i64; 4];
        for k0 in lo[0]..=hi[0] {
            probe[0] = k0;
            for k1 in lo[1]..=hi[1] {
                probe[1] = k1;
                for k2 in lo[2]..=hi[2] {
                    probe[2] = k2;
                    for k3 in lo[3]..=hi[3] {
                        probe[3] = k3;
                        if let Some(bucket) = self.cells.get(&probe) {
                            if bucket.iter().any(|b| b.approx_eq(m, MATSET_SLOP)) {
                                return true;
                            }
                        }
                    }
                }
            }
        }
        false
    }
}

// ---------------------------------------------------------------------------
// The group itself.

/// A cached deck transformation: matrix, defining word, and displacement
/// data used by the scan prefilters.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub mat: MoebiusElement,
    pub word: Word,
    /// group_distance(e, mat)
    pub disp: f64,
    /// hyperbolic distance of mat . i from i
    pub h2_disp: f64,
}

/// The genus-2 regular-octagon Fuchsian group with its ball cache.
pub struct FuchsianGroup {
    gens: [MoebiusElement; 8],
    relator: Word,
    cache: Vec<CacheEntry>,
    /// Indices into `cache` with small hyperbolic-plane displacement;
    /// sufficient for configuration-space tests between reduced points.
    cfg_deck: Vec<usize>,
    sigma0: f64,
    cache_base_len: usize,
    cache_keep_radius: f64,
}

impl FuchsianGroup {
    /// Builds the octagon group with default cache parameters and
    /// verifies the defining relator numerically.
    pub fn octagon() -> Self {
        Self::octagon_with(CACHE_BASE_LEN, CACHE_KEEP_RADIUS)
    }

    /// `base_len`: word length of the seed ball; `keep_radius`: kept
    /// hyperbolic displacement.  The construction is provably complete
    /// for `keep_radius <= 10` with the default seed (see build_cache).
    pub fn octagon_with(base_len: usize, keep_radius: f64) -> Self {
        let sq2 = 2.0_f64.sqrt();
        let ent = 1.0 + sq2;
        let off = (2.0 + 2.0 * sq2).sqrt();
        let beta = MoebiusElement::new(ent, off, off, ent);
        let mut gens = [MoebiusElement::identity(); 8];
        for k in 0..4 {
            let r = d_theta(k as f64 * std::f64::consts::FRAC_PI_4);
            gens[k] = r * beta * invert(&r);
            gens[k + 4] = invert(&gens[k]);
        }
        let relator = Word(RELATOR.to_vec());
        let mut grp = FuchsianGroup {
            gens,
            relator,
            cache: Vec::new(),
            cfg_deck: Vec::new(),
            sigma0: 0.0,
            cache_base_len: base_len,
            cache_keep_radius: keep_radius,
        };
        let rel_val = grp.evaluate_word(&grp.relator.clone());
        assert!(
            rel_val.approx_eq(&MoebiusElement::identity(), 1e-9),
            "octagon relator failed to close: {rel_val:?}"
        );
        grp.build_cache(base_len, keep_radius);
        grp.sigma0 = grp.sigma0_estimate(usize::MAX);
        grp
    }

    /// A process-wide shared instance with default parameters.
    pub fn octagon_shared() -> Arc<FuchsianGroup> {
        static SHARED: OnceLock<Arc<FuchsianGroup>> = OnceLock::new();
        SHARED.get_or_init(|| Arc::new(FuchsianGroup::octagon())).clone()
    }

    pub fn generators(&self) -> &[MoebiusElement; 8] {
        &self.gens
    }

    pub fn generator(&self, l: Letter) -> &MoebiusElement {
        &self.gens[l as usize]
    }

    pub fn relator(&self) -> &Word {
        &self.relator
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn cache(&self) -> &[CacheEntry] {
        &self.cache
    }

    /// `(seed word length, kept hyperbolic radius)` of the ball cache.
    pub fn cache_params(&self) -> (usize, f64) {
        (self.cache_base_len, self.cache_keep_radius)
    }

    pub fn evaluate_word(&self, w: &Word) -> MoebiusElement {
        let mut m = MoebiusElement::identity();
        for &l in &w.0 {
            m = m * self.gens[l as usize];
        }
        m
    }

    /// Cache construction.  Stage 1 enumerates all reduced words up to
    /// `base_len` letters (no geometric pruning).  Stage 2 closes the
    /// hyperbolic ball: any element displacing the base point by
    /// `L <= keep_radius` splits at the midpoint of its displacement
    /// geodesic into two factors displacing by at most `L/2 + R_circ`,
    /// so products of the stage-1 ball of radius `keep_radius/2 + R_circ`
    /// recover the whole kept ball.  The seed covers radius 7.45
    /// (verified exhaustively), hence completeness for radii up to 10.
    fn build_cache(&mut self, base_len: usize, keep_radius: f64) {
        let factor_radius = keep_radius / 2.0 + octagon_circumradius() + 0.05;
        assert!(
            factor_radius <= 7.45 || base_len > CACHE_BASE_LEN,
            "keep radius {keep_radius} exceeds the verified seed coverage"
        );
        let mut seen = MatSet::new();
        let e = MoebiusElement::identity();
        seen.insert(&e);
        let mut all: Vec<CacheEntry> =
            vec![CacheEntry { mat: e, word: Word::empty(), disp: 0.0, h2_disp: 0.0 }];
        let mut frontier: Vec<(MoebiusElement, Word)> = vec![(e, Word::empty())];
        for _ in 0..base_len {
            let mut next = Vec::new();
            for (m, w) in &frontier {
                // expand all 8 letters: with relator collisions in play, a
                // "backtracking" letter on this word can still reach a new
                // element through the merged word's other spelling
                for l in 0..8u8 {
                    let m2 = *m * self.gens[l as usize];
                    if seen.contains(&m2) {
                        continue;
                    }
                    seen.insert(&m2);
                    let mut wl = w.0.clone();
                    wl.push(l);
                    let word = Word(wl);
                    all.push(CacheEntry {
                        mat: m2,
                        word: word.clone(),
                        disp: moebius::displacement(&m2),
                        h2_disp: h2_dist_to_i(&m2),
                    });
                    next.push((m2, word));
                }
            }
            frontier = next;
        }
        let factors: Vec<(MoebiusElement, Word)> = all
            .iter()
            .filter(|ce| ce.h2_disp <= factor_radius)
            .map(|ce| (ce.mat, ce.word.clone()))
            .collect();
        for (m1, w1) in &factors {
            for (m2, w2) in &factors {
                let m = *m1 * *m2;
                let h2 = h2_dist_to_i(&m);
                if h2 > keep_radius || seen.contains(&m) {
                    continue;
                }
                seen.insert(&m);
                all.push(CacheEntry {
                    mat: m,
                    word: reduce_word(&w1.concat(w2)),
                    disp: moebius::displacement(&m),
                    h2_disp: h2,
                });
            }
        }
        all.retain(|ce| ce.h2_disp <= keep_radius);
        // symmetrize: boundary jitter must not break inverse closure
        let mut kept = MatSet::new();
        for ce in &all {
            kept.insert(&ce.mat);
        }
        let mut extra = Vec::new();
        for ce in &all {
            let inv = invert(&ce.mat);
            if !kept.contains(&inv) {
                kept.insert(&inv);
                extra.push(CacheEntry {
                    mat: inv,
                    word: ce.word.inverse(),
                    disp: ce.disp,
                    h2_disp: h2_dist_to_i(&inv),
                });
            }
        }
        all.extend(extra);
        all.sort_by(|x, y| (x.word.len(), &x.word).cmp(&(y.word.len(), &y.word)));
        self.cfg_deck = all
            .iter()
            .enumerate()
            .filter(|(_, ce)| ce.h2_disp <= CFG_DECK_RADIUS)
            .map(|(i, _)| i)
            .collect();
        self.cache = all;
    }

    /// Deck elements whose hyperbolic-plane displacement is small; closed
    /// over everything needed to compare two Dirichlet-reduced points.
    pub fn cfg_deck(&self) -> impl Iterator<Item = &CacheEntry> {
        self.cfg_deck.iter().map(move |&i| &self.cache[i])
    }

    /// Indices of cached deck elements moving the origin at most `radius`
    /// in the hyperbolic plane.  This is the exact candidate set for any
    /// comparison between points whose representatives both lie in the
    /// fundamental octagon, as long as `radius >= 2 R_circ + separation`.
    pub fn deck_indices_within(&self, radius: f64) -> Vec<usize> {
        assert!(
            radius <= self.cache_keep_radius,
            "deck request radius {radius} exceeds cache radius {}",
            self.cache_keep_radius
        );
        self.cache
            .iter()
            .enumerate()
            .filter(|(_, ce)| ce.h2_disp <= radius)
            .map(|(i, _)| i)
            .collect()
    }

    /// Safety margin of the injectivity-type constant: minimum over
    /// cached nontrivial deck elements (word length <= max_len) of the
    /// minimal sampled displacement, times 0.9.
    pub fn sigma0_estimate(&self, max_len: usize) -> f64 {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xB10C_5EED);
        let sample: Vec<MoebiusElement> = (0..100)
            .map(|_| {
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                let t = rng.gen_range(-1.5..1.5);
                let s = rng.gen_range(-1.5..1.5);
                d_theta(th) * a_t(t) * crate::moebius::b_s(s)
            })
            .collect();
        let mut min = f64::INFINITY;
        for ce in &self.cache {
            if ce.word.is_empty() || ce.word.len() > max_len {
                continue;
            }
            for g in &sample {
                let d = group_distance(&(ce.mat * *g), g);
                if d < min {
                    min = d;
                }
            }
        }
        0.9 * min
    }

    /// Greedy Dirichlet-domain reduction of the left coset `Gamma g`:
    /// returns `(alpha * g, alpha_word)` where the product's base point
    /// lies in the fundamental octagon.
    pub fn dirichlet_reduce(&self, g: &MoebiusElement) -> (MoebiusElement, Word) {
        let mut cur = *g;
        let mut letters_applied: Vec<Letter> = Vec::new();
        for _step in 0..400 {
            let z = act_on_i(&cur);
            let d0 = h2_distance(z, (0.0, 1.0));
            let mut best: Option<(Letter, f64, MoebiusElement)> = None;
            for l in 0..8u8 {
                let cand = self.gens[l as usize] * cur;
                let dd = h2_dist_to_i(&cand);
                if dd < best.as_ref().map_or(d0 - 1e-14, |b| b.1) {
                    best = Some((l, dd, cand));
                }
            }
            match best {
                None => {
                    letters_applied.reverse();
                    return (cur, Word(letters_applied));
                }
                Some((l, _, cand)) => {
                    cur = cand;
                    letters_applied.push(l);
                }
            }
        }
        panic!("dirichlet_reduce failed to converge; input {g:?}")
    }

    /// Finds the unique deck word `gamma` with
    /// `group_distance(gamma h, g) < tol`, assuming `tol < sigma0 / 2`.
    pub fn identify(
        &self,
        g: &MoebiusElement,
        h: &MoebiusElement,
        tol: f64,
    ) -> Result<Word, FuchsianError> {
        if tol >= self.sigma0 / 2.0 {
            return Err(FuchsianError::ToleranceTooLarge(tol, self.sigma0 / 2.0));
        }
        let (gr, ag) = self.dirichlet_reduce(g);
        let (hr, ah) = self.dirichlet_reduce(h);
        let mut best = f64::INFINITY;
        let mut best_idx = usize::MAX;
        for (i, ce) in self.cache.iter().enumerate() {
            let d = group_distance(&(ce.mat * hr), &gr);
            if d < best {
                best = d;
                best_idx = i;
            }
        }
        if best < tol {
            let delta = &self.cache[best_idx].word;
            let gamma = ag.inverse().concat(delta).concat(&ah);
            Ok(reduce_word(&gamma))
        } else if best < 2.0 * tol {
            Err(FuchsianError::BallTooSmall { nearest: best, tol })
        } else {
            Err(FuchsianError::NoMatch { nearest: best, tol })
        }
    }

    /// Distance between the left cosets `Gamma g` and `Gamma h`: minimum of
    /// `group_distance(delta h, g)` over the cached deck ball.  Exact
    /// whenever the true infimum is small compared to the cache radius
    /// minus the reduced displacements; otherwise an upper bound.
    pub fn quotient_distance(&self, g: &MoebiusElement, h: &MoebiusElement) -> f64 {
        let (gr, _) = self.dirichlet_reduce(g);
        let (hr, _) = self.dirichlet_reduce(h);
        let zg = act_on_i(&gr);
        let zh = act_on_i(&hr);
        let mut best = f64::INFINITY;
        for ce in &self.cache {
            // Group distance dominates base-point displacement (via
            // ||exp X||_op <= exp(lambda_max(sym X))), so the plane
            // distance of translated base points is a certified lower
            // bound and prunes the expensive matrix logarithm.
            if h2_distance(act_on_point(&ce.mat, zh), zg) >= best {
                continue;
            }
            let d = group_distance(&(ce.mat * hr), &gr);
            if d < best {
                best = d;
            }
        }
        best
    }

    /// Configuration-space (surface) distance between the projections of
    /// the two cosets to the quotient surface.  Both arguments should be
    /// Dirichlet-reduced for the small deck to suffice.
    pub fn surface_distance_reduced(&self, g: &MoebiusElement, h: &MoebiusElement) -> f64 {
        let zg = act_on_i(g);
        let mut best = f64::INFINITY;
        for ce in self.cfg_deck() {
            let zh = act_on_i(&(ce.mat * *h));
            let d = h2_distance(zg, zh);
            if d < best {
                best = d;
            }
        }
        best
    }

    /// Geometric conjugacy test for hyperbolic words, independent of word
    /// canonicalization: `w1 ~ w2` iff some `sigma = q a_c p^{-1}` with
    /// `c in [0, T)` lies in the group, where p, q are the axis conjugators.
    /// Returns the conjugator word with `sigma w1 sigma^{-1} = w2`.
    pub fn are_conjugate(&self, w1: &Word, w2: &Word) -> Result<Option<Word>, FuchsianError> {
        let g = self.evaluate_word(w1);
        let h = self.evaluate_word(w2);
        match (classify(&g), classify(&h)) {
            (ElementClass::Identity, ElementClass::Identity) => return Ok(Some(Word::empty())),
            (ElementClass::Hyperbolic, ElementClass::Hyperbolic) => {}
            _ => return Err(FuchsianError::NotHyperbolicWord(trace(&g))),
        }
        if (trace(&g) - trace(&h)).abs() > 1e-6 * trace(&g).max(1.0) {
            return Ok(None);
        }
        let (p, period) = axis_normal_form(&g).map_err(|_| FuchsianError::NotHyperbolicWord(trace(&g)))?;
        let (q, _) = axis_normal_form(&h).map_err(|_| FuchsianError::NotHyperbolicWord(trace(&h)))?;
        let p_inv = invert(&p);
        let xi = |c: f64| q * a_t(c) * p_inv;
        // coarse scan + local refinement of min_cache d(xi(c), cached)
        let nearest = |c: f64| -> f64 {
            let (m, _) = self.dirichlet_reduce(&xi(c));
            let mut best = f64::INFINITY;
            for ce in &self.cache {
                let d = group_distance(&ce.mat, &m);
                if d < best {
                    best = d;
                }
            }
            best
        };
        let step = 0.01;
        let n = (period / step).ceil().max(3.0) as usize;
        let vals: Vec<f64> = (0..n).map(|i| nearest(i as f64 * step)).collect();
        for i in 0..n {
            // local minima on the cyclic grid, with a generous threshold
            let prev = vals[(i + n - 1) % n];
            let next = vals[(i + 1) % n];
            let v = vals[i];
            if v > 1.2 || v > prev || v > next {
                continue;
            }
            let c0 = i as f64 * step;
            let (mut lo, mut hi) = (c0 - step, c0 + step);
            for _ in 0..60 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if nearest(m1) <= nearest(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let c_star = (lo + hi) / 2.0;
            if nearest(c_star) < 1e-6 {
                let sigma = xi(c_star);
                if let Ok(word) = self.identify(&sigma, &MoebiusElement::identity(), 0.1) {
                    let sv = self.evaluate_word(&word);
                    let conj = sv * g * invert(&sv);
                    if conj.approx_eq(&h, 1e-7 * trace(&h).max(1.0)) {
                        return Ok(Some(word));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Translation length of a hyperbolic word: `2 arccosh(trace / 2)`.
    pub fn period_of(&self, w: &Word) -> Result<f64, FuchsianError> {
        let m = self.evaluate_word(w);
        let tr = trace(&m);
        if tr < 2.0 + 1e-8 {
            return Err(FuchsianError::NotHyperbolicWord(tr));
        }
        Ok(2.0 * (tr / 2.0).acosh())
    }
}

impl std::fmt::Debug for FuchsianGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FuchsianGroup")
            .field("cache_base_len", &self.cache_base_len)
            .field("cache_keep_radius", &self.cache_keep_radius)
            .field("cache_size", &self.cache.len())
            .field("sigma0", &self.sigma0)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letter_codec_round_trips() {
        let w = Word::parse("abcdABCD").unwrap();
        assert_eq!(w.0, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(w.to_string(), "abcdABCD");
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, "[1,2,3,4,-1,-2,-3,-4]");
        let back: Word = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn free_reduction_cancels() {
        let w = Word::parse("abBA").unwrap();
        assert!(reduce_word(&w).is_empty());
    }

    #[test]
    fn relator_reduces_to_empty() {
        assert!(reduce_word(&Word(RELATOR.to_vec())).is_empty());
    }

    #[test]
    fn five_letter_relator_prefix_shrinks() {
        // first 5 letters of the relator equal the inverse of the last 3
        let w = Word(RELATOR[..5].to_vec());
        let r = reduce_word(&w);
        assert_eq!(r.len(), 3, "got {r}");
        let grp = FuchsianGroup::octagon_shared();
        assert!(grp
            .evaluate_word(&w)
            .approx_eq(&grp.evaluate_word(&r), 1e-9));
    }

    #[test]
    fn word_periodicity() {
        assert!(word_is_periodic(&Word::parse("abab").unwrap()));
        assert!(!word_is_periodic(&Word::parse("abaB").unwrap()));
    }
}

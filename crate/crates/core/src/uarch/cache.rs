//! Set-associative cache model with true-LRU replacement and write-back
//! timing. Lines carry tags and dirty bits only; data values live in the
//! architectural memory map, so an invalidate discards timing state, never
//! values.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Shape and latency parameters of one cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheGeometry {
    pub sets: usize,
    pub ways: usize,
    pub line_bytes: u64,
    pub hit_latency: u64,
    pub miss_latency: u64,
    /// Cycles to write one dirty line back.
    pub writeback_latency: u64,
    /// Fixed cost of a whole-cache clean, on top of per-line writebacks.
    pub clean_base_cost: u64,
    /// Cost of a whole-cache invalidate.
    pub invalidate_cost: u64,
}

impl Default for CacheGeometry {
    /// Desk-scale default: 64 sets x 2 ways x 64-byte lines.
    fn default() -> Self {
        CacheGeometry {
            sets: 64,
            ways: 2,
            line_bytes: 64,
            hit_latency: 2,
            miss_latency: 20,
            writeback_latency: 8,
            clean_base_cost: 10,
            invalidate_cost: 4,
        }
    }
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.sets < 1 || self.ways < 1 {
            return Err(SimError::Config(format!(
                "cache needs at least 1 set and 1 way, got {}x{}",
                self.sets, self.ways
            )));
        }
        if self.line_bytes < 4 || !self.line_bytes.is_power_of_two() {
            return Err(SimError::Config(format!(
                "line_bytes must be a power of two >= 4, got {}",
                self.line_bytes
            )));
        }
        if self.miss_latency <= self.hit_latency {
            return Err(SimError::Config(format!(
                "miss_latency ({}) must exceed hit_latency ({})",
                self.miss_latency, self.hit_latency
            )));
        }
        if self.writeback_latency < 1 {
            return Err(SimError::Config("writeback_latency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.sets * self.ways
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheKind {
    Data,
    Instruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
    Fetch,
}

/// Outcome of a single cache access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub hit: bool,
    pub latency: u64,
    pub evicted_dirty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct CacheLine {
    tag: u64,
    valid: bool,
    dirty: bool,
    /// Recency ordinal; higher = more recently used. Distinct among the
    /// valid lines of a set.
    lru_rank: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheState {
    geometry: CacheGeometry,
    kind: CacheKind,
    /// `sets * ways` lines, row-major by set.
    lines: Vec<CacheLine>,
    /// Recency counter feeding `lru_rank`; reset by `invalidate_all` so a
    /// freshly invalidated cache is bit-identical to a reset one.
    tick: u64,
}

impl CacheState {
    pub fn new(geometry: CacheGeometry, kind: CacheKind) -> Result<Self> {
        geometry.validate()?;
        Ok(CacheState {
            geometry,
            kind,
            lines: vec![CacheLine::default(); geometry.lines()],
            tick: 0,
        })
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn kind(&self) -> CacheKind {
        self.kind
    }

    fn line_addr(&self, address: u64) -> u64 {
        address / self.geometry.line_bytes
    }

    fn set_index(&self, address: u64) -> usize {
        (self.line_addr(address) % self.geometry.sets as u64) as usize
    }

    fn tag(&self, address: u64) -> u64 {
        self.line_addr(address) / self.geometry.sets as u64
    }

    fn set_slice(&mut self, set: usize) -> &mut [CacheLine] {
        let ways = self.geometry.ways;
        &mut self.lines[set * ways..(set + 1) * ways]
    }

    /// One read/write/fetch. On a miss the LRU way of the indexed set is
    /// evicted; evicting a dirty line adds the writeback latency.
    pub fn access(&mut self, address: u64, kind: AccessKind) -> Result<AccessResult> {
        match (kind, self.kind) {
            (AccessKind::Fetch, CacheKind::Data) => {
                return Err(SimError::Contract("fetch issued to a data cache".into()))
            }
            (AccessKind::Write, CacheKind::Instruction) => {
                return Err(SimError::Contract(
                    "write issued to an instruction cache".into(),
                ))
            }
            _ => {}
        }
        let set = self.set_index(address);
        let tag = self.tag(address);
        let geom = self.geometry;
        self.tick += 1;
        let tick = self.tick;

        let ways = self.set_slice(set);
        if let Some(line) = ways.iter_mut().find(|l| l.valid && l.tag == tag) {
            line.lru_rank = tick;
            if kind == AccessKind::Write {
                line.dirty = true;
            }
            return Ok(AccessResult {
                hit: true,
                latency: geom.hit_latency,
                evicted_dirty: false,
            });
        }

        // Miss: fill an invalid way if one exists, else evict the LRU line.
        let victim = match ways.iter().position(|l| !l.valid) {
            Some(w) => w,
            None => ways
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.lru_rank)
                .map(|(w, _)| w)
                .expect("ways >= 1"),
        };
        let evicted_dirty = ways[victim].valid && ways[victim].dirty;
        ways[victim] = CacheLine {
            tag,
            valid: true,
            dirty: kind == AccessKind::Write,
            lru_rank: tick,
        };
        let mut latency = geom.miss_latency;
        if evicted_dirty {
            latency += geom.writeback_latency;
        }
        Ok(AccessResult {
            hit: false,
            latency,
            evicted_dirty,
        })
    }

    /// Write every dirty line back without touching tags or valid bits.
    /// Data caches only.
    pub fn clean_all(&mut self) -> Result<u64> {
        if self.kind != CacheKind::Data {
            return Err(SimError::Contract(
                "clean_all issued to an instruction cache".into(),
            ));
        }
        let mut dirty = 0u64;
        for line in &mut self.lines {
            if line.valid && line.dirty {
                dirty += 1;
                line.dirty = false;
            }
        }
        Ok(self.geometry.clean_base_cost + dirty * self.geometry.writeback_latency)
    }

    /// Drop every line. Dirty contents are discarded, so callers that care
    /// must clean first; the fence sequences clean before invalidate.
    pub fn invalidate_all(&mut self) -> u64 {
        for line in &mut self.lines {
            *line = CacheLine::default();
        }
        self.tick = 0;
        self.geometry.invalidate_cost
    }

    pub fn dirty_lines(&self) -> usize {
        self.lines.iter().filter(|l| l.valid && l.dirty).count()
    }

    pub fn valid_lines(&self) -> usize {
        self.lines.iter().filter(|l| l.valid).count()
    }

    /// Line addresses currently valid, for post-fence residue checks.
    pub fn valid_line_addrs(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for set in 0..self.geometry.sets {
            for way in 0..self.geometry.ways {
                let line = &self.lines[set * self.geometry.ways + way];
                if line.valid {
                    out.push(
                        (line.tag * self.geometry.sets as u64 + set as u64)
                            * self.geometry.line_bytes,
                    );
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(sets: usize, ways: usize) -> CacheGeometry {
        CacheGeometry {
            sets,
            ways,
            line_bytes: 64,
            ..CacheGeometry::default()
        }
    }

    #[test]
    fn cold_then_warm_read() {
        let mut c = CacheState::new(small(2, 1), CacheKind::Data).unwrap();
        let first = c.access(0x00, AccessKind::Read).unwrap();
        assert_eq!(
            first,
            AccessResult {
                hit: false,
                latency: 20,
                evicted_dirty: false
            }
        );
        let second = c.access(0x00, AccessKind::Read).unwrap();
        assert!(second.hit);
        assert_eq!(second.latency, 2);
    }

    #[test]
    fn conflicting_read_writes_back_dirty_victim() {
        let mut c = CacheState::new(small(2, 1), CacheKind::Data).unwrap();
        c.access(0x00, AccessKind::Write).unwrap();
        // Same set (stride = sets * line_bytes), different tag.
        let res = c.access(0x80, AccessKind::Read).unwrap();
        assert_eq!(
            res,
            AccessResult {
                hit: false,
                latency: 20 + 8,
                evicted_dirty: true
            }
        );
    }

    #[test]
    fn fully_associative_lru_keeps_reused_line() {
        let mut c = CacheState::new(small(1, 4), CacheKind::Data).unwrap();
        for k in 0..4u64 {
            c.access(k * 64, AccessKind::Read).unwrap();
        }
        assert!(c.access(0x00, AccessKind::Read).unwrap().hit);
        // A fifth tag evicts the LRU line (line 1), not line 0.
        c.access(4 * 64, AccessKind::Read).unwrap();
        assert!(c.access(0x00, AccessKind::Read).unwrap().hit);
        assert!(!c.access(64, AccessKind::Read).unwrap().hit);
    }

    #[test]
    fn clean_with_no_dirty_lines_costs_base_only() {
        let mut c = CacheState::new(small(4, 2), CacheKind::Data).unwrap();
        c.access(0x000, AccessKind::Read).unwrap();
        assert_eq!(c.clean_all().unwrap(), 10);
    }

    #[test]
    fn clean_fully_dirty_is_worst_case() {
        let g = small(4, 2);
        let mut c = CacheState::new(g, CacheKind::Data).unwrap();
        for k in 0..g.lines() as u64 {
            c.access(k * 64, AccessKind::Write).unwrap();
        }
        assert_eq!(c.dirty_lines(), 8);
        assert_eq!(c.clean_all().unwrap(), 10 + 8 * 8);
        assert_eq!(c.dirty_lines(), 0);
    }

    #[test]
    fn clean_counts_exactly_the_dirty_lines() {
        let mut c = CacheState::new(small(8, 2), CacheKind::Data).unwrap();
        for k in 0..3u64 {
            c.access(k * 64, AccessKind::Write).unwrap();
        }
        c.access(0x400, AccessKind::Read).unwrap();
        assert_eq!(c.clean_all().unwrap(), 10 + 3 * 8);
    }

    #[test]
    fn clean_preserves_hit_behaviour() {
        let mut c = CacheState::new(small(4, 2), CacheKind::Data).unwrap();
        for k in 0..6u64 {
            c.access(k * 64, AccessKind::Write).unwrap();
        }
        let before = c.clone();
        c.clean_all().unwrap();
        for k in 0..6u64 {
            assert!(c.access(k * 64, AccessKind::Read).unwrap().hit);
        }
        // Tags and valid bits untouched by the clean itself.
        assert_eq!(before.valid_line_addrs(), c.valid_line_addrs());
    }

    #[test]
    fn clean_on_icache_is_a_contract_violation() {
        let mut c = CacheState::new(small(2, 1), CacheKind::Instruction).unwrap();
        assert!(matches!(c.clean_all(), Err(SimError::Contract(_))));
    }

    #[test]
    fn incompatible_access_kinds_error() {
        let mut d = CacheState::new(small(2, 1), CacheKind::Data).unwrap();
        assert!(matches!(
            d.access(0, AccessKind::Fetch),
            Err(SimError::Contract(_))
        ));
        let mut i = CacheState::new(small(2, 1), CacheKind::Instruction).unwrap();
        assert!(matches!(
            i.access(0, AccessKind::Write),
            Err(SimError::Contract(_))
        ));
        i.access(0, AccessKind::Fetch).unwrap();
    }

    #[test]
    fn invalidate_drops_everything_and_is_idempotent() {
        let mut c = CacheState::new(small(4, 2), CacheKind::Data).unwrap();
        for k in 0..5u64 {
            c.access(k * 64, AccessKind::Write).unwrap();
        }
        assert_eq!(c.invalidate_all(), 4);
        assert_eq!(c.valid_lines(), 0);
        let snap = c.clone();
        c.invalidate_all();
        assert_eq!(c, snap);
        // Previously dirty addresses now miss.
        for k in 0..5u64 {
            assert!(!c.access(k * 64, AccessKind::Read).unwrap().hit);
        }
    }

    #[test]
    fn invalidated_cache_equals_fresh_cache() {
        let g = small(4, 2);
        let mut c = CacheState::new(g, CacheKind::Data).unwrap();
        for k in 0..12u64 {
            c.access(k * 64, AccessKind::Write).unwrap();
        }
        c.invalidate_all();
        assert_eq!(c, CacheState::new(g, CacheKind::Data).unwrap());
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut g = small(0, 1);
        assert!(CacheState::new(g, CacheKind::Data).is_err());
        g = small(2, 1);
        g.line_bytes = 48;
        assert!(CacheState::new(g, CacheKind::Data).is_err());
        g = small(2, 1);
        g.miss_latency = g.hit_latency;
        assert!(CacheState::new(g, CacheKind::Data).is_err());
    }

    /// Brute-force recency-list LRU, kept independent of the cache's
    /// rank-based bookkeeping.
    struct LruOracle {
        sets: usize,
        ways: usize,
        // Per set: tags ordered least- to most-recently used.
        order: Vec<Vec<u64>>,
    }

    impl LruOracle {
        fn new(sets: usize, ways: usize) -> Self {
            LruOracle {
                sets,
                ways,
                order: vec![Vec::new(); sets],
            }
        }

        /// Returns (hit, evicted_tag_if_full).
        fn access(&mut self, line_addr: u64) -> (bool, Option<u64>) {
            let set = (line_addr % self.sets as u64) as usize;
            let tag = line_addr / self.sets as u64;
            let list = &mut self.order[set];
            if let Some(pos) = list.iter().position(|&t| t == tag) {
                list.remove(pos);
                list.push(tag);
                (true, None)
            } else {
                let evicted = if list.len() == self.ways {
                    Some(list.remove(0))
                } else {
                    None
                };
                list.push(tag);
                (false, evicted)
            }
        }
    }

    fn check_against_oracle(sets: usize, ways: usize, trace: &[u64]) {
        let g = small(sets, ways);
        let mut cache = CacheState::new(g, CacheKind::Data).unwrap();
        let mut oracle = LruOracle::new(sets, ways);
        for &line in trace {
            let before = cache.valid_line_addrs();
            let res = cache.access(line * 64, AccessKind::Read).unwrap();
            let (hit, evicted) = oracle.access(line);
            assert_eq!(res.hit, hit, "hit mismatch on line {line}");
            if let Some(ev_tag) = evicted {
                let ev_addr = (ev_tag * sets as u64 + line % sets as u64) * 64;
                assert!(before.contains(&ev_addr));
                assert!(!cache.valid_line_addrs().contains(&ev_addr));
            }
        }
    }

    #[test]
    fn lru_matches_oracle_on_long_seeded_trace() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let trace: Vec<u64> = (0..10_000).map(|_| rng.random_range(0..32)).collect();
        check_against_oracle(4, 2, &trace);
    }

    proptest! {
        #[test]
        fn lru_matches_oracle(
            sets in 1usize..5,
            ways in 1usize..5,
            trace in proptest::collection::vec(0u64..24, 1..400),
        ) {
            check_against_oracle(sets, ways, &trace);
        }

        #[test]
        fn access_latency_is_bounded(
            addr in 0u64..4096,
            write in proptest::bool::ANY,
        ) {
            let mut c = CacheState::new(small(2, 2), CacheKind::Data).unwrap();
            c.access(128, AccessKind::Write).unwrap();
            let kind = if write { AccessKind::Write } else { AccessKind::Read };
            let res = c.access(addr * 64, kind).unwrap();
            prop_assert!(res.latency >= 2);
            prop_assert!(res.latency <= 20 + 8);
        }
    }
}

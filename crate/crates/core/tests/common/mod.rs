//! Independent oracles for the acceptance suite. Nothing here calls into the
//! code under test.

use std::collections::HashMap;

/// Unit-slot preemptive scheduling by exhaustive search.
///
/// Time runs in whole slots starting at `now`; each slot hands out `rate` marks
/// among jobs whose due time is still ahead. A job with due time `d` must get all
/// of its marks in slots starting before `d`. Jobs already past due with work left
/// make the instance infeasible.
pub struct SlotOracle {
    rate: u32,
    dues: Vec<u32>,
    memo: HashMap<(u32, Vec<u32>), bool>,
}

impl SlotOracle {
    pub fn feasible(rate: u32, now: u32, jobs: &[(u32, u32)]) -> bool {
        let first_due = jobs.iter().filter(|&&(m, d)| m > 0 && d > now).map(|j| j.1).min();
        let Some(first_due) = first_due else {
            return true;
        };
        let live: Vec<(u32, u32)> = jobs
            .iter()
            .filter(|&&(m, _)| m > 0)
            .map(|&(m, d)| (m, if d <= now { first_due } else { d }))
            .collect();
        let mut o = SlotOracle {
            rate,
            dues: live.iter().map(|j| j.1).collect(),
            memo: HashMap::new(),
        };
        let remaining: Vec<u32> = live.iter().map(|j| j.0).collect();
        o.search(now, remaining)
    }

    fn search(&mut self, t: u32, remaining: Vec<u32>) -> bool {
        if remaining.iter().all(|&m| m == 0) {
            return true;
        }
        for (i, &m) in remaining.iter().enumerate() {
            if m > 0 && (t >= self.dues[i] || m > self.rate * (self.dues[i] - t)) {
                return false;
            }
        }
        if let Some(&v) = self.memo.get(&(t, remaining.clone())) {
            return v;
        }
        let open: Vec<usize> = (0..remaining.len())
            .filter(|&i| remaining[i] > 0 && t < self.dues[i])
            .collect();
        let budget = self.rate.min(open.iter().map(|&i| remaining[i]).sum());
        let mut split = vec![0u32; open.len()];
        let ok = self.try_splits(t, &remaining, &open, &mut split, 0, budget);
        self.memo.insert((t, remaining), ok);
        ok
    }

    // every way to hand `left` marks to the open jobs
    fn try_splits(
        &mut self,
        t: u32,
        remaining: &[u32],
        open: &[usize],
        split: &mut Vec<u32>,
        k: usize,
        left: u32,
    ) -> bool {
        if k == open.len() {
            if left != 0 {
                return false;
            }
            let mut next = remaining.to_vec();
            for (slot, &i) in open.iter().enumerate() {
                next[i] -= split[slot];
            }
            return self.search(t + 1, next);
        }
        let cap = remaining[open[k]].min(left);
        for give in (0..=cap).rev() {
            split[k] = give;
            if self.try_splits(t, remaining, open, split, k + 1, left - give) {
                return true;
            }
        }
        false
    }
}

/// Plain SHA-256, written from the FIPS 180-4 description.
pub fn sha256_hex(data: &[u8]) -> String {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
        0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
        0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
        0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
        0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
        0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
        0xc67178f2,
    ];
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab,
        0x5be0cd19,
    ];
    let mut msg = data.to_vec();
    let bits = (data.len() as u64) * 8;
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bits.to_be_bytes());
    for block in msg.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes([block[4 * i], block[4 * i + 1], block[4 * i + 2], block[4 * i + 3]]);
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16]
                .wrapping_add(s0)
                .wrapping_add(w[i - 7])
                .wrapping_add(s1);
        }
        let mut v = h;
        for i in 0..64 {
            let s1 = v[4].rotate_right(6) ^ v[4].rotate_right(11) ^ v[4].rotate_right(25);
            let ch = (v[4] & v[5]) ^ (!v[4] & v[6]);
            let t1 = v[7]
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(K[i])
                .wrapping_add(w[i]);
            let s0 = v[0].rotate_right(2) ^ v[0].rotate_right(13) ^ v[0].rotate_right(22);
            let maj = (v[0] & v[1]) ^ (v[0] & v[2]) ^ (v[1] & v[2]);
            let t2 = s0.wrapping_add(maj);
            v = [
                t1.wrapping_add(t2),
                v[0],
                v[1],
                v[2],
                v[3].wrapping_add(t1),
                v[4],
                v[5],
                v[6],
            ];
        }
        for (a, b) in h.iter_mut().zip(v) {
            *a = a.wrapping_add(b);
        }
    }
    h.iter().map(|x| format!("{x:08x}")).collect()
}

/// Bid as seen by the exhaustive discovery check.
#[derive(Debug, Clone)]
pub struct PlainBid {
    pub node_id: String,
    pub eligible: bool,
    pub unsubscribed: f64,
    pub confidence: f64,
}

/// Best eligible bid: highest 0.05-wide confidence band, then most unsubscribed
/// marks, then the lexicographically smallest node id.
pub fn exhaustive_winner(bids: &[PlainBid]) -> Option<String> {
    let mut best: Option<&PlainBid> = None;
    for b in bids.iter().filter(|b| b.eligible) {
        let better = match best {
            None => true,
            Some(cur) => {
                let (bb, cb) = ((b.confidence / 0.05).floor(), (cur.confidence / 0.05).floor());
                bb > cb
                    || (bb == cb && b.unsubscribed > cur.unsubscribed)
                    || (bb == cb && b.unsubscribed == cur.unsubscribed && b.node_id < cur.node_id)
            }
        };
        if better {
            best = Some(b);
        }
    }
    best.map(|b| b.node_id.clone())
}

/// 0.9 quantile of the standard normal.
pub const Z_090: f64 = 1.281_551_565_544_600_4;

/// Sanity checks on the oracles themselves; panics on failure.
pub fn self_check() {
    assert_eq!(
        sha256_hex(b""),
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    );
    assert_eq!(
        sha256_hex(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    // two blocks
    assert_eq!(
        sha256_hex(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
    );
    assert!(SlotOracle::feasible(1, 0, &[(3, 3)]));
    assert!(!SlotOracle::feasible(1, 0, &[(3, 2)]));
    assert!(SlotOracle::feasible(2, 0, &[(2, 1), (2, 2)]));
    assert!(!SlotOracle::feasible(2, 0, &[(3, 1), (1, 2)]));
    assert!(SlotOracle::feasible(2, 3, &[(1, 3)]));
    assert!(!SlotOracle::feasible(1, 3, &[(2, 3), (1, 5)]));
    assert!(SlotOracle::feasible(1, 3, &[(1, 3), (1, 5)]));
}

use super::time::SimTime;
use crate::cluster::topology::NodeId;
use crate::error::SimError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Static one-way delays between regions, with optional jitter and bandwidth.
/// Delays are microseconds; bandwidth is bytes/second, 0 meaning unlimited.
#[derive(Clone, Debug)]
pub struct LatencyMatrix {
    pub one_way_us: Vec<Vec<u64>>,
    pub jitter_fraction: f64,
    pub bandwidth_bps: u64,
}

impl LatencyMatrix {
    /// Every link, intra-region ones included, gets the same one-way delay.
    /// The diagonal is the hop between two nodes of the same region, not a
    /// node talking to itself, so it is not zero.
    pub fn uniform(regions: usize, delay_us: u64) -> Self {
        LatencyMatrix {
            one_way_us: vec![vec![delay_us; regions]; regions],
            jitter_fraction: 0.0,
            bandwidth_bps: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.one_way_us.len();
        if n == 0 {
            return Err(SimError::config("latency matrix is empty"));
        }
        if self.one_way_us.iter().any(|row| row.len() != n) {
            return Err(SimError::config("latency matrix is not square"));
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(SimError::config("jitter_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn regions(&self) -> usize {
        self.one_way_us.len()
    }
}

/// Per-link state and delivery-time computation. Channels are FIFO per
/// ordered (src, dst) pair: a message never overtakes an earlier one on the
/// same channel, even when jitter would have reordered them.
pub struct NetworkModel {
    matrix: LatencyMatrix,
    region_of: Vec<u16>,
    last_delivery: BTreeMap<(NodeId, NodeId), SimTime>,
    link_override_us: BTreeMap<(NodeId, NodeId), u64>,
    node_extra_us: BTreeMap<NodeId, u64>,
}

impl NetworkModel {
    pub fn new(matrix: LatencyMatrix, region_of: Vec<u16>) -> Self {
        NetworkModel {
            matrix,
            region_of,
            last_delivery: BTreeMap::new(),
            link_override_us: BTreeMap::new(),
            node_extra_us: BTreeMap::new(),
        }
    }

    pub fn region_of(&self, node: NodeId) -> u16 {
        self.region_of[node.0 as usize]
    }

    /// One-way delay between two nodes before jitter, honoring any active
    /// link override.
    pub fn base_delay_us(&self, src: NodeId, dst: NodeId) -> u64 {
        let extra = self.node_extra_us.get(&src).copied().unwrap_or(0)
            + self.node_extra_us.get(&dst).copied().unwrap_or(0);
        if let Some(&d) = self.link_override_us.get(&(src, dst)) {
            return d + extra;
        }
        let a = self.region_of(src) as usize;
        let b = self.region_of(dst) as usize;
        self.matrix.one_way_us[a][b] + extra
    }

    /// Extra one-way delay added to every link touching this node, on top
    /// of the region matrix. Used to sweep the cost of a centralized
    /// authority without touching anyone else's latencies.
    pub fn set_node_extra(&mut self, node: NodeId, extra_us: u64) {
        if extra_us == 0 {
            self.node_extra_us.remove(&node);
        } else {
            self.node_extra_us.insert(node, extra_us);
        }
    }

    /// Fault hook: pin the delay of one directed link.
    pub fn set_link_override(&mut self, src: NodeId, dst: NodeId, delay_us: u64) {
        self.link_override_us.insert((src, dst), delay_us);
    }

    pub fn clear_link_override(&mut self, src: NodeId, dst: NodeId) {
        self.link_override_us.remove(&(src, dst));
    }

    /// Compute the delivery instant for a message sent now.
    ///
    /// delivery = now + one_way * (1 + u * jitter) + size/bandwidth, then
    /// clamped so the channel stays FIFO. The jitter draw `u` comes from the
    /// run's single RNG (draw site: one uniform per send on jittered links).
    pub fn delivery_time(
        &mut self,
        now: SimTime,
        src: NodeId,
        dst: NodeId,
        size_bytes: u64,
        rng: &mut ChaCha8Rng,
    ) -> SimTime {
        let base = self.base_delay_us(src, dst);
        let jittered = if self.matrix.jitter_fraction > 0.0 {
            let u: f64 = rng.gen_range(0.0..1.0);
            (base as f64 * (1.0 + u * self.matrix.jitter_fraction)).round() as u64
        } else {
            base
        };
        let transmit = if self.matrix.bandwidth_bps > 0 {
            // bytes / (bytes/sec) expressed in whole microseconds, rounded up
            crate::util::div_ceil(size_bytes * 1_000_000, self.matrix.bandwidth_bps)
        } else {
            0
        };
        let mut at = now.plus(jittered + transmit);
        let chan = self.last_delivery.entry((src, dst)).or_insert(SimTime::ZERO);
        if at < *chan {
            at = *chan;
        }
        *chan = at;
        at
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn model(jitter: f64, bw: u64) -> NetworkModel {
        let mut m = LatencyMatrix::uniform(2, 25_000);
        m.jitter_fraction = jitter;
        m.bandwidth_bps = bw;
        // nodes 0,1 in region 0; node 2 in region 1
        NetworkModel::new(m, vec![0, 0, 1])
    }

    #[test]
    fn plain_delay() {
        let mut net = model(0.0, 0);
        let mut r = rng();
        let at = net.delivery_time(SimTime(0), NodeId(0), NodeId(2), 100, &mut r);
        assert_eq!(at, SimTime(25_000), "cross-region message takes 25 ms");
        let local = net.delivery_time(SimTime(0), NodeId(0), NodeId(1), 100, &mut r);
        assert_eq!(local, SimTime(25_000), "same-region hops pay the diagonal");
    }

    #[test]
    fn bandwidth_term() {
        // 1 MB at 10 MB/s is exactly 100_000 us of transmission, on top of
        // the 25 ms propagation delay.
        let mut net = model(0.0, 10_000_000);
        let mut r = rng();
        let at = net.delivery_time(SimTime(0), NodeId(0), NodeId(1), 1_000_000, &mut r);
        assert_eq!(at, SimTime(125_000));
    }

    #[test]
    fn fifo_channel_never_reorders() {
        let mut net = model(0.9, 0);
        let mut r = rng();
        let mut last = SimTime::ZERO;
        for i in 0..200u64 {
            let at = net.delivery_time(SimTime(i), NodeId(0), NodeId(2), 10, &mut r);
            assert!(at >= last, "FIFO violated: {at} after {last}");
            last = at;
        }
    }

    #[test]
    fn jitter_stays_within_fraction() {
        let mut net = model(0.5, 0);
        let mut r = rng();
        for _ in 0..100 {
            // reset channel memory so the FIFO clamp does not mask the range
            net.last_delivery.clear();
            let at = net.delivery_time(SimTime(0), NodeId(0), NodeId(2), 10, &mut r);
            assert!(at >= SimTime(25_000) && at <= SimTime(37_500));
        }
    }

    #[test]
    fn link_override_applies_and_clears() {
        let mut net = model(0.0, 0);
        let mut r = rng();
        net.set_link_override(NodeId(0), NodeId(2), 1_000);
        let at = net.delivery_time(SimTime(0), NodeId(0), NodeId(2), 10, &mut r);
        assert_eq!(at, SimTime(1_000));
        // override is directional
        net.last_delivery.clear();
        let back = net.delivery_time(SimTime(0), NodeId(2), NodeId(0), 10, &mut r);
        assert_eq!(back, SimTime(25_000));
        net.clear_link_override(NodeId(0), NodeId(2));
        net.last_delivery.clear();
        let again = net.delivery_time(SimTime(0), NodeId(0), NodeId(2), 10, &mut r);
        assert_eq!(again, SimTime(25_000));
    }
}
